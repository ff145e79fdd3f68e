"""Small shared helpers: derived RNG streams, log-sum-exp, CSV formatting."""

from __future__ import annotations

import hashlib

import numpy as np


def derive_seed(seed: int, *tokens) -> int:
    """Derive a child seed from a global seed and a token path.

    Stable across platforms and process boundaries (sha256 of the string
    path), so parallel workers and sequential runs agree.
    """
    payload = "|".join([str(seed), *[str(t) for t in tokens]])
    digest = hashlib.sha256(payload.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


def derive_rng(seed: int, *tokens) -> np.random.Generator:
    return np.random.default_rng(derive_seed(seed, *tokens))


def logsumexp(a: np.ndarray, axis=None) -> np.ndarray:
    """log(sum(exp(a))) with max-shift; handles -inf rows without warnings."""
    a = np.asarray(a, dtype=float)
    amax = np.max(a, axis=axis, keepdims=True)
    amax = np.where(np.isfinite(amax), amax, 0.0)
    with np.errstate(divide="ignore"):
        out = np.log(np.sum(np.exp(a - amax), axis=axis, keepdims=True)) + amax
    if axis is None:
        return float(out)
    return np.squeeze(out, axis=axis)


def fmt_g17(x: float) -> str:
    """Format a float at 17 significant digits (round-trip exact)."""
    return format(float(x), ".17g")
