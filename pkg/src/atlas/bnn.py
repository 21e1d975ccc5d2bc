"""Variational-weight feed-forward surrogate trained by backprop through
the reparameterization trick.

Each weight has a Gaussian variational posterior (mu, softplus(rho));
training minimizes a Monte Carlo estimate of
log q(w|theta) - log P(w) - log P(Y|w) with one weight draw per mini-batch
step and the KL part scaled by batch/dataset size.  One posterior weight
draw gives a cheap whole-batch Thompson prediction.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import torch

from .errors import AtlasError, NumericalError

DEFAULT_HIDDEN = (128, 256, 256, 128)
SIGMA_PRIOR = 1.0
SIGMA_LIK = 0.1
INIT_MU_RANGE = 0.05
# sigma_prior/10 drowns the likelihood signal at these widths; /100 trains.
INIT_SIGMA = SIGMA_PRIOR / 100.0
DEFAULT_LR = 1.0
DEFAULT_GAMMA = 0.999
DEFAULT_BATCH = 128

_LOG_2PI = math.log(2.0 * math.pi)


def _softplus_inv(x: float) -> float:
    return math.log(math.expm1(x))


class _VariationalLinear(torch.nn.Module):
    def __init__(self, n_in: int, n_out: int, gen: torch.Generator, dtype):
        super().__init__()
        mu_w = (torch.rand((n_in, n_out), generator=gen, dtype=dtype) * 2 - 1) * INIT_MU_RANGE
        mu_b = (torch.rand((n_out,), generator=gen, dtype=dtype) * 2 - 1) * INIT_MU_RANGE
        rho0 = _softplus_inv(INIT_SIGMA)
        self.w_mu = torch.nn.Parameter(mu_w)
        self.w_rho = torch.nn.Parameter(torch.full((n_in, n_out), rho0, dtype=dtype))
        self.b_mu = torch.nn.Parameter(mu_b)
        self.b_rho = torch.nn.Parameter(torch.full((n_out,), rho0, dtype=dtype))

    def sample(self, eps_w: torch.Tensor, eps_b: torch.Tensor):
        """Reparameterized draw plus its log q(w|theta) - log P(w) term."""
        sigma_w = torch.nn.functional.softplus(self.w_rho)
        sigma_b = torch.nn.functional.softplus(self.b_rho)
        w = self.w_mu + sigma_w * eps_w
        b = self.b_mu + sigma_b * eps_b
        log_q = -(torch.log(sigma_w).sum() + torch.log(sigma_b).sum()) \
            - 0.5 * (eps_w.pow(2).sum() + eps_b.pow(2).sum()) \
            - 0.5 * _LOG_2PI * (w.numel() + b.numel())
        log_p = -0.5 * (w.pow(2).sum() + b.pow(2).sum()) / SIGMA_PRIOR ** 2 \
            - (w.numel() + b.numel()) * (math.log(SIGMA_PRIOR) + 0.5 * _LOG_2PI)
        return w, b, log_q - log_p

    def noise_like(self, gen: torch.Generator):
        eps_w = torch.randn(self.w_mu.shape, generator=gen, dtype=self.w_mu.dtype)
        eps_b = torch.randn(self.b_mu.shape, generator=gen, dtype=self.b_mu.dtype)
        return eps_w, eps_b


@dataclass
class BnnModel:
    net: torch.nn.ModuleList
    input_dim: int
    output_dim: int
    hidden: tuple
    sigma_prior: float = SIGMA_PRIOR
    sigma_lik: float = SIGMA_LIK
    # Normalization statistics, frozen after the first fit.
    x_mean: np.ndarray | None = None
    x_std: np.ndarray | None = None
    y_mean: float | None = None
    y_std: float | None = None
    dtype: torch.dtype = torch.float32
    n_train_calls: int = 0

    def layers(self):
        return list(self.net)


def bnn_init(
    input_dim: int,
    output_dim: int = 1,
    hidden=DEFAULT_HIDDEN,
    seed: int = 0,
    dtype=torch.float32,
) -> BnnModel:
    if input_dim < 1 or output_dim < 1:
        raise AtlasError("bnn dims must be >= 1")
    gen = torch.Generator().manual_seed(int(seed))
    widths = (input_dim,) + tuple(hidden) + (output_dim,)
    layers = torch.nn.ModuleList(
        _VariationalLinear(widths[i], widths[i + 1], gen, dtype)
        for i in range(len(widths) - 1)
    )
    return BnnModel(net=layers, input_dim=input_dim, output_dim=output_dim,
                    hidden=tuple(hidden), dtype=dtype)


def _normalize_x(model: BnnModel, X: np.ndarray) -> torch.Tensor:
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if model.x_mean is not None:
        X = (X - model.x_mean) / model.x_std
    return torch.as_tensor(X, dtype=model.dtype)


def _forward(model: BnnModel, x: torch.Tensor, draws) -> torch.Tensor:
    h = x
    n = len(model.net)
    for i, (layer, (w, b)) in enumerate(zip(model.net, draws)):
        h = h @ w + b
        if i < n - 1:
            h = torch.relu(h)
    return h


def _mu_draws(model: BnnModel):
    return [(layer.w_mu, layer.b_mu) for layer in model.net]


def _sample_draws(model: BnnModel, gen: torch.Generator):
    draws, kl = [], 0.0
    for layer in model.net:
        eps_w, eps_b = layer.noise_like(gen)
        w, b, term = layer.sample(eps_w, eps_b)
        draws.append((w, b))
        kl = kl + term
    return draws, kl


def elbo_loss(model: BnnModel, xb: torch.Tensor, yb: torch.Tensor,
              eps_list, kl_scale: float) -> torch.Tensor:
    """One-draw loss: kl_scale * (log q - log p) + Gaussian NLL on the batch.

    eps_list carries the fixed reparameterization noise per layer, so the
    loss is a deterministic function of the variational parameters.
    """
    draws, kl = [], 0.0
    for layer, (eps_w, eps_b) in zip(model.net, eps_list):
        w, b, term = layer.sample(eps_w, eps_b)
        draws.append((w, b))
        kl = kl + term
    out = _forward(model, xb, draws).squeeze(-1)
    resid = (yb - out) / model.sigma_lik
    nll = 0.5 * resid.pow(2).sum() + yb.numel() * (
        math.log(model.sigma_lik) + 0.5 * _LOG_2PI
    )
    return kl_scale * kl + nll


def sample_eps(model: BnnModel, gen: torch.Generator):
    return [layer.noise_like(gen) for layer in model.net]


def bnn_train(
    model: BnnModel,
    X,
    y,
    epochs: int,
    batch_size: int = DEFAULT_BATCH,
    seed: int = 0,
    lr: float = DEFAULT_LR,
    gamma: float = DEFAULT_GAMMA,
) -> BnnModel:
    """Train in place on (X, y); returns the model for chaining."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.asarray(y, dtype=float).ravel()
    if len(X) == 0:
        raise AtlasError("bnn_train requires a non-empty dataset")

    if model.y_mean is None:
        model.x_mean = X.mean(axis=0)
        model.x_std = np.where(X.std(axis=0) < 1e-9, 1.0, X.std(axis=0))
        model.y_mean = float(y.mean())
        y_std = float(y.std())
        model.y_std = 1.0 if y_std < 1e-9 else y_std

    xt = _normalize_x(model, X)
    yt = torch.as_tensor((y - model.y_mean) / model.y_std, dtype=model.dtype)
    n = len(y)
    gen = torch.Generator().manual_seed(int(seed))
    opt = torch.optim.Adadelta(model.net.parameters(), lr=lr)
    for epoch in range(int(epochs)):
        perm = torch.randperm(n, generator=gen)
        for start in range(0, n, batch_size):
            idx = perm[start:start + batch_size]
            xb, yb = xt[idx], yt[idx]
            eps = sample_eps(model, gen)
            loss = elbo_loss(model, xb, yb, eps, kl_scale=len(idx) / n)
            if not torch.isfinite(loss):
                raise NumericalError(
                    f"non-finite training loss {float(loss)} at epoch {epoch}, "
                    f"n={n}, batch={len(idx)}"
                )
            opt.zero_grad()
            loss.backward()
            opt.step()
        for group in opt.param_groups:
            group["lr"] *= gamma
    model.n_train_calls += 1
    return model


def epoch_loss(model: BnnModel, X, y, seed: int = 0,
               batch_size: int = DEFAULT_BATCH) -> float:
    """Epoch-averaged loss with fresh draws; used for training-curve checks."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.asarray(y, dtype=float).ravel()
    xt = _normalize_x(model, X)
    ym = model.y_mean if model.y_mean is not None else 0.0
    ys = model.y_std if model.y_std is not None else 1.0
    yt = torch.as_tensor((y - ym) / ys, dtype=model.dtype)
    gen = torch.Generator().manual_seed(int(seed))
    total, batches = 0.0, 0
    with torch.no_grad():
        for start in range(0, len(y), batch_size):
            xb, yb = xt[start:start + batch_size], yt[start:start + batch_size]
            eps = sample_eps(model, gen)
            total += float(elbo_loss(model, xb, yb, eps, kl_scale=len(yb) / len(y)))
            batches += 1
    return total / batches


def _denorm(model: BnnModel, out: torch.Tensor) -> np.ndarray:
    values = out.detach().numpy().reshape(-1)
    if model.y_mean is not None:
        values = values * model.y_std + model.y_mean
    return values


def bnn_mean_predict(model: BnnModel, X) -> np.ndarray:
    """Deterministic forward pass with mu-only weights."""
    with torch.no_grad():
        out = _forward(model, _normalize_x(model, X), _mu_draws(model))
    return _denorm(model, out)


def bnn_thompson_predict(model: BnnModel, X, draw_seed: int) -> np.ndarray:
    """Sample one weight vector, run one forward pass for the whole batch."""
    gen = torch.Generator().manual_seed(int(draw_seed))
    with torch.no_grad():
        draws, _ = _sample_draws(model, gen)
        out = _forward(model, _normalize_x(model, X), draws)
    return _denorm(model, out)


def bnn_posterior(model: BnnModel, X, n_mc: int = 30, seed: int = 0):
    """Empirical mean and std over n_mc independent weight draws."""
    if n_mc < 2:
        raise AtlasError("bnn_posterior requires n_mc >= 2")
    gen = torch.Generator().manual_seed(int(seed))
    xt = _normalize_x(model, X)
    outs = []
    with torch.no_grad():
        for _ in range(int(n_mc)):
            draws, _ = _sample_draws(model, gen)
            outs.append(_forward(model, xt, draws).numpy().reshape(-1))
    stack = np.stack(outs)
    mean, std = stack.mean(axis=0), stack.std(axis=0)
    if model.y_mean is not None:
        mean = mean * model.y_std + model.y_mean
        std = std * model.y_std
    return mean, std


def save_checkpoint(model: BnnModel, path) -> None:
    torch.save(
        {
            "version": 1,
            "input_dim": model.input_dim,
            "output_dim": model.output_dim,
            "hidden": model.hidden,
            "state": model.net.state_dict(),
            "x_mean": model.x_mean,
            "x_std": model.x_std,
            "y_mean": model.y_mean,
            "y_std": model.y_std,
            "n_train_calls": model.n_train_calls,
        },
        path,
    )


def load_checkpoint(path) -> BnnModel:
    payload = torch.load(path, weights_only=False)
    model = bnn_init(payload["input_dim"], payload["output_dim"],
                     hidden=payload["hidden"])
    model.net.load_state_dict(payload["state"])
    model.x_mean = payload["x_mean"]
    model.x_std = payload["x_std"]
    model.y_mean = payload["y_mean"]
    model.y_std = payload["y_std"]
    model.n_train_calls = payload["n_train_calls"]
    return model
