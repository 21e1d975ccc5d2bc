"""Discrete-event model of one end-to-end network slice.

A fixed number of application frames circulate in closed loop through
loading -> uplink radio -> backhaul -> FIFO edge-compute queue -> downlink
radio.  The engine is a pure function of (params, action, state, duration,
seed).  A hidden-parameter "real twin" reuses the same engine with secret
parameters and multiplies each frame latency by a log-normal residual
factor, standing in for the physical network.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import RangeError

# Engine conventions (not claims about any particular hardware).
PRB_HZ = 180e3
UL_TX_POWER_DBM = 23.0
NOISE_FLOOR_DBM = -101.4  # thermal noise over one 180 kHz block
PATHLOSS_EXPONENT = 3.0
EFF_MIN_BPS_HZ = 0.15
EFF_MAX_BPS_HZ = 5.55
MIN_UL_PRB = 6
MIN_DL_PRB = 3

UL_FRAME_KBITS_MEAN = 28.8
UL_FRAME_KBITS_STD = 9.9
UL_FRAME_KBITS_MIN = 1.0
DL_FRAME_KBITS = 4.0

COMPUTE_MS_MEAN = 81.0
COMPUTE_MS_STD = 35.0
COMPUTE_MS_MIN = 1.0
CPU_RATIO_FLOOR = 0.05

BACKHAUL_BASE_DELAY_MS = 1.0
BACKHAUL_RATE_FLOOR_MBPS = 0.1
LOADING_BASE_MS = 10.0

# Simulation-parameter box: (low, high) per field, brackets both the
# default and the twin's hidden optimum.
PARAM_BOUNDS = (
    (30.0, 50.0),  # baseline_loss (dB)
    (0.0, 13.0),   # enb_noise_figure (dB)
    (0.0, 13.0),   # ue_noise_figure (dB)
    (0.0, 20.0),   # backhaul_bw_extra (Mbps, additive)
    (0.0, 20.0),   # backhaul_delay_extra (ms, additive)
    (0.0, 20.0),   # compute_time_extra (ms, additive)
    (0.0, 20.0),   # loading_time_extra (ms, additive)
)

ACTION_BOUNDS = (
    (0.0, 50.0),   # bandwidth_ul (PRBs)
    (0.0, 50.0),   # bandwidth_dl (PRBs)
    (0.0, 10.0),   # mcs_offset_ul
    (0.0, 10.0),   # mcs_offset_dl
    (0.0, 100.0),  # backhaul_bw (Mbps)
    (0.0, 1.0),    # cpu_ratio
)

DEFAULT_PARAMS = (38.57, 5.0, 9.0, 0.0, 0.0, 0.0, 0.0)
DEFAULT_TWIN_PARAMS = (38.76, 0.68, 8.93, 5.03, 8.93, 2.16, 3.10)

COMPONENT_NAMES = ("loading", "ul_tx", "backhaul", "queueing", "compute", "dl_tx")


@dataclass(frozen=True)
class SimulationParams:
    """The 7-dim simulator parameter vector searched in stage 1."""

    baseline_loss: float
    enb_noise_figure: float
    ue_noise_figure: float
    backhaul_bw_extra: float
    backhaul_delay_extra: float
    compute_time_extra: float
    loading_time_extra: float

    def as_array(self) -> np.ndarray:
        return np.array(
            [
                self.baseline_loss,
                self.enb_noise_figure,
                self.ue_noise_figure,
                self.backhaul_bw_extra,
                self.backhaul_delay_extra,
                self.compute_time_extra,
                self.loading_time_extra,
            ],
            dtype=float,
        )

    def normalized(self) -> np.ndarray:
        """Affine map of each field into [0, 1] via the parameter box."""
        raw = self.as_array()
        lo, hi = _bounds_arrays(PARAM_BOUNDS)
        return (raw - lo) / (hi - lo)

    def validate(self) -> None:
        raw = self.as_array()
        for value, (lo, hi) in zip(raw, PARAM_BOUNDS):
            if not (lo <= value <= hi) or not math.isfinite(value):
                raise RangeError(
                    f"simulation parameter {value} outside box [{lo}, {hi}]"
                )

    @classmethod
    def from_array(cls, values) -> "SimulationParams":
        return cls(*(float(v) for v in values))

    @classmethod
    def from_normalized(cls, values) -> "SimulationParams":
        lo, hi = _bounds_arrays(PARAM_BOUNDS)
        return cls.from_array(lo + np.asarray(values, dtype=float) * (hi - lo))

    @classmethod
    def default(cls) -> "SimulationParams":
        return cls.from_array(DEFAULT_PARAMS)


@dataclass(frozen=True)
class ConfigAction:
    """The 6-dim slice configuration optimized in stages 2-3."""

    bandwidth_ul: float
    bandwidth_dl: float
    mcs_offset_ul: float
    mcs_offset_dl: float
    backhaul_bw: float
    cpu_ratio: float

    def as_array(self) -> np.ndarray:
        return np.array(
            [
                self.bandwidth_ul,
                self.bandwidth_dl,
                self.mcs_offset_ul,
                self.mcs_offset_dl,
                self.backhaul_bw,
                self.cpu_ratio,
            ],
            dtype=float,
        )

    def normalized(self) -> np.ndarray:
        lo, hi = _bounds_arrays(ACTION_BOUNDS)
        return (self.as_array() - lo) / (hi - lo)

    def validate(self) -> None:
        raw = self.as_array()
        for value, (lo, hi) in zip(raw, ACTION_BOUNDS):
            if not (lo <= value <= hi) or not math.isfinite(value):
                raise RangeError(f"action value {value} outside range [{lo}, {hi}]")

    @classmethod
    def from_array(cls, values) -> "ConfigAction":
        return cls(*(float(v) for v in values))

    @classmethod
    def from_normalized(cls, values) -> "ConfigAction":
        lo, hi = _bounds_arrays(ACTION_BOUNDS)
        return cls.from_array(lo + np.asarray(values, dtype=float) * (hi - lo))

    @classmethod
    def full(cls) -> "ConfigAction":
        return cls.from_array([hi for _, hi in ACTION_BOUNDS])


@dataclass(frozen=True)
class NetworkState:
    """Observable network state: concurrent on-the-fly frames and distance."""

    traffic: int = 1
    distance_m: float = 1.0

    def validate(self) -> None:
        if self.traffic < 1:
            raise RangeError(f"traffic must be >= 1, got {self.traffic}")
        if self.distance_m <= 0:
            raise RangeError(f"distance_m must be > 0, got {self.distance_m}")


@dataclass
class LatencyTrace:
    """Per-frame end-to-end latency samples with component breakdown (ms)."""

    frame_ids: np.ndarray
    t_done_ms: np.ndarray
    samples: np.ndarray
    components: dict[str, np.ndarray]
    duration_s: float

    @property
    def frames_completed(self) -> int:
        return len(self.samples)

    def save(self, path) -> None:
        """One frame per line: id, t_done, latency, then the six components."""
        with open(path, "w") as fh:
            for i in range(self.frames_completed):
                row = [
                    float(self.frame_ids[i]),
                    float(self.t_done_ms[i]),
                    float(self.samples[i]),
                ] + [float(self.components[name][i]) for name in COMPONENT_NAMES]
                fh.write(", ".join(repr(v) for v in row) + "\n")

    @classmethod
    def load(cls, path, duration_s: float = 0.0) -> "LatencyTrace":
        rows = []
        with open(path) as fh:
            for line in fh:
                line = line.strip()
                if line:
                    rows.append([float(v) for v in line.split(",")])
        data = np.array(rows, dtype=float).reshape(len(rows), 9)
        components = {
            name: data[:, 3 + k] for k, name in enumerate(COMPONENT_NAMES)
        }
        return cls(
            frame_ids=data[:, 0],
            t_done_ms=data[:, 1],
            samples=data[:, 2],
            components=components,
            duration_s=duration_s,
        )


def _bounds_arrays(bounds):
    arr = np.array(bounds, dtype=float)
    return arr[:, 0], arr[:, 1]


def _radio_rate_bits_per_ms(
    n_prb: float, mcs_offset: float, noise_figure_db: float,
    params: SimulationParams, distance_m: float,
) -> float:
    """Shannon-style rate with an MCS-offset derating, clamped efficiency."""
    pathloss = params.baseline_loss + 10.0 * PATHLOSS_EXPONENT * math.log10(
        max(distance_m, 1.0)
    )
    snr_db = UL_TX_POWER_DBM - pathloss - NOISE_FLOOR_DBM - noise_figure_db
    eff = math.log2(1.0 + 10.0 ** (snr_db / 10.0)) * (1.0 - mcs_offset / 15.0)
    eff = min(max(eff, EFF_MIN_BPS_HZ), EFF_MAX_BPS_HZ)
    return n_prb * PRB_HZ * eff / 1000.0


def _run_engine(
    params: SimulationParams,
    action: ConfigAction,
    state: NetworkState,
    duration_s: float,
    seed: int,
    sigma_res: float,
) -> LatencyTrace:
    params.validate()
    action.validate()
    state.validate()
    if duration_s <= 0:
        raise RangeError(f"duration_s must be > 0, got {duration_s}")

    rng = np.random.default_rng([int(seed), 0])
    res_rng = np.random.default_rng([int(seed), 1])
    duration_ms = duration_s * 1000.0

    prb_ul = max(action.bandwidth_ul, float(MIN_UL_PRB))
    prb_dl = max(action.bandwidth_dl, float(MIN_DL_PRB))
    ul_rate = _radio_rate_bits_per_ms(
        prb_ul, action.mcs_offset_ul, params.enb_noise_figure, params, state.distance_m
    )
    dl_rate = _radio_rate_bits_per_ms(
        prb_dl, action.mcs_offset_dl, params.ue_noise_figure, params, state.distance_m
    )
    bh_mbps = min(action.backhaul_bw, 100.0) + params.backhaul_bw_extra
    bh_rate = max(bh_mbps, BACKHAUL_RATE_FLOOR_MBPS) * 1000.0  # bits/ms
    cpu = max(action.cpu_ratio, CPU_RATIO_FLOOR)
    loading = LOADING_BASE_MS + params.loading_time_extra

    next_frame_id = 0

    def new_frame(t_start: float):
        nonlocal next_frame_id
        fid = next_frame_id
        next_frame_id += 1
        ul_kbits = max(rng.normal(UL_FRAME_KBITS_MEAN, UL_FRAME_KBITS_STD),
                       UL_FRAME_KBITS_MIN)
        service = (
            max(rng.normal(COMPUTE_MS_MEAN, COMPUTE_MS_STD), COMPUTE_MS_MIN) / cpu
            + params.compute_time_extra
        )
        noise_z = res_rng.standard_normal()
        ul_bits = ul_kbits * 1000.0
        ul_tx = ul_bits / ul_rate
        backhaul = BACKHAUL_BASE_DELAY_MS + ul_bits / bh_rate + params.backhaul_delay_extra
        arrival = t_start + loading + ul_tx + backhaul
        return (arrival, fid, t_start, ul_tx, backhaul, service, noise_z)

    # One pending compute arrival per circulating frame; the compute stage
    # is the only shared resource, served in arrival order.
    heap = [new_frame(0.0) for _ in range(state.traffic)]
    heapq.heapify(heap)
    server_free = 0.0

    rows = []
    while heap:
        arrival, fid, t_start, ul_tx, backhaul, service, noise_z = heapq.heappop(heap)
        start = max(arrival, server_free)
        queueing = start - arrival
        server_free = start + service
        dl_tx = DL_FRAME_KBITS * 1000.0 / dl_rate
        t_done = server_free + dl_tx
        if t_done <= duration_ms:
            factor = math.exp(sigma_res * noise_z) if sigma_res > 0.0 else 1.0
            comps = (
                loading * factor,
                ul_tx * factor,
                backhaul * factor,
                queueing * factor,
                service * factor,
                dl_tx * factor,
            )
            rows.append((fid, t_done, sum(comps)) + comps)
        if t_done < duration_ms:
            heapq.heappush(heap, new_frame(t_done))

    data = np.array(rows, dtype=float).reshape(len(rows), 9)
    components = {name: data[:, 3 + k] for k, name in enumerate(COMPONENT_NAMES)}
    return LatencyTrace(
        frame_ids=data[:, 0],
        t_done_ms=data[:, 1],
        samples=data[:, 2],
        components=components,
        duration_s=duration_s,
    )


def simulate(
    params: SimulationParams,
    action: ConfigAction,
    state: NetworkState,
    duration_s: float,
    seed: int,
) -> LatencyTrace:
    """Run one closed-loop query of the slice simulator."""
    return _run_engine(params, action, state, duration_s, seed, sigma_res=0.0)


@dataclass(frozen=True)
class RealTwin:
    """Hidden-parameter engine instance standing in for the real network.

    The hidden params and residual-noise level live only in the run config;
    stage algorithms never read them.
    """

    params: SimulationParams = field(
        default_factory=lambda: SimulationParams.from_array(DEFAULT_TWIN_PARAMS)
    )
    sigma_res: float = 0.05

    def query(
        self, action: ConfigAction, state: NetworkState, duration_s: float, seed: int
    ) -> LatencyTrace:
        return _run_engine(
            self.params, action, state, duration_s, seed, sigma_res=self.sigma_res
        )


def query_real(
    twin: RealTwin,
    action: ConfigAction,
    state: NetworkState,
    duration_s: float,
    seed: int,
) -> LatencyTrace:
    return twin.query(action, state, duration_s, seed)


def collect_reference(
    twin: RealTwin,
    state: NetworkState,
    action: ConfigAction,
    duration_s: float,
    seed: int,
    path=None,
) -> LatencyTrace:
    """Collect (and optionally persist) the frozen real-network trace."""
    trace = twin.query(action, state, duration_s, seed)
    if path is not None:
        trace.save(path)
    return trace
