"""Deterministic seed derivation.

Every stochastic call in the pipeline derives its seed from the run seed
plus a structured context tuple, so no global RNG state exists anywhere
and results are independent of scheduling.
"""

import hashlib


def derive_seed(run_seed: int, *parts) -> int:
    """Derive a 63-bit seed from the run seed and a context tuple.

    Parts may be ints or strings, e.g. (stage, iteration, worker, purpose).
    """
    text = repr((int(run_seed),) + tuple(parts)).encode()
    digest = hashlib.sha256(text).digest()
    return int.from_bytes(digest[:8], "big") >> 1
