"""Undecimated (maximal overlap) wavelet transform of trip signals.

The forward transform runs the standard pyramid recursion with circular
boundary handling: at stage j the previous scaling vector is filtered with
the base filters rescaled by 1/sqrt(2) and strided by 2**(j-1). Under this
recursion the per-level energy split is exact, which the tests enforce, and
the equivalent level-j filter touches (2**j - 1) * (L - 1) + 1 lags.

All operations are pure; per-trip calls can run in parallel.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import BadWeights, SeriesTooShort, ZeroVarianceSignal

logger = logging.getLogger(__name__)

SQRT2 = float(np.sqrt(2.0))

AGGREGATION_RULES = ("signed_max_abs", "max_abs", "average_abs", "weighted_abs", "single_level")


@dataclass(frozen=True)
class FilterPair:
    """Base wavelet/scaling filter pair related by the quadrature-mirror rule."""

    wavelet: tuple[float, ...]
    scaling: tuple[float, ...]
    name: str = "d4"

    @property
    def width(self) -> int:
        return len(self.wavelet)


def _qmf(h: np.ndarray) -> np.ndarray:
    L = len(h)
    return np.array([(-1.0) ** (ell + 1) * h[L - 1 - ell] for ell in range(L)])


def d4_filters() -> FilterPair:
    """Daubechies 4-tap filter pair (the pipeline default)."""
    s3 = np.sqrt(3.0)
    h = np.array([1.0 - s3, -3.0 + s3, 3.0 + s3, -1.0 - s3]) / (4.0 * SQRT2)
    return FilterPair(tuple(h), tuple(_qmf(h)), "d4")


def haar_filters() -> FilterPair:
    """Haar pair, kept as a comparison option; tends to damp localized bursts."""
    h = np.array([1.0, -1.0]) / SQRT2
    return FilterPair(tuple(h), tuple(_qmf(h)), "haar")


def filters_by_name(name: str) -> FilterPair:
    if name == "d4":
        return d4_filters()
    if name == "haar":
        return haar_filters()
    raise ValueError(f"unknown filter family {name!r}")


def filter_width(level: int, base_width: int = 4) -> int:
    """Number of signal lags referenced by one level-`level` coefficient."""
    return (2 ** level - 1) * (base_width - 1) + 1


@dataclass
class WaveletDecomposition:
    """Per-level wavelet vectors plus the final scaling vector for one trip.

    Every level keeps all T time points (no downsampling), so
    ||x||^2 == sum_j ||W[j]||^2 + ||V||^2 up to roundoff.
    """

    trip_id: str
    levels: int
    wavelet_coeffs: np.ndarray  # shape (J, T)
    scaling_coeffs: np.ndarray  # shape (T,)
    filters: FilterPair = field(default_factory=d4_filters)

    @property
    def length(self) -> int:
        return int(self.scaling_coeffs.size)


def modwt_forward(samples, levels: int, filters: FilterPair | None = None,
                  trip_id: str = "") -> WaveletDecomposition:
    """Pyramid decomposition into `levels` wavelet vectors and a scaling vector.

    Requires len(samples) >= filter_width(levels) so no level wraps around
    the whole series.
    """
    if levels < 1:
        raise ValueError("levels must be >= 1")
    filters = filters or d4_filters()
    x = np.asarray(samples, dtype=float)
    t = x.size
    width = filter_width(levels, filters.width)
    if t < width:
        raise SeriesTooShort(t, width)

    h = np.asarray(filters.wavelet) / SQRT2
    g = np.asarray(filters.scaling) / SQRT2
    v = x
    coeffs = np.empty((levels, t))
    for j in range(1, levels + 1):
        stride = 1 << (j - 1)
        w_j = np.zeros(t)
        v_j = np.zeros(t)
        for ell in range(filters.width):
            shifted = np.roll(v, ell * stride)
            w_j += h[ell] * shifted
            v_j += g[ell] * shifted
        coeffs[j - 1] = w_j
        v = v_j
    return WaveletDecomposition(trip_id, levels, coeffs, v, filters)


def modwt_inverse(decomp: WaveletDecomposition) -> np.ndarray:
    """Exact inverse of :func:`modwt_forward` (relative error ~1e-12)."""
    filters = decomp.filters
    h = np.asarray(filters.wavelet) / SQRT2
    g = np.asarray(filters.scaling) / SQRT2
    v = decomp.scaling_coeffs.copy()
    for j in range(decomp.levels, 0, -1):
        stride = 1 << (j - 1)
        w_j = decomp.wavelet_coeffs[j - 1]
        nxt = np.zeros_like(v)
        for ell in range(filters.width):
            nxt += h[ell] * np.roll(w_j, -ell * stride)
            nxt += g[ell] * np.roll(v, -ell * stride)
        v = nxt
    return v


def variance_contributions(samples, decomp: WaveletDecomposition) -> np.ndarray:
    """Per-level share of the sample variance carried by each wavelet vector."""
    x = np.asarray(samples, dtype=float)
    t = x.size
    var = float(np.var(x))
    meansq = float(np.mean(x * x)) if t else 0.0
    if var <= 0.0 or var <= meansq * 1e-24:
        raise ZeroVarianceSignal("sample variance is zero")
    energy = np.sum(decomp.wavelet_coeffs ** 2, axis=1) / t
    return energy / var


def select_depth(contributions, drop_threshold: float, cap: int | None = None) -> int:
    """Depth selection rule: stop where the next level's share collapses.

    Returns the smallest j with rho[j+1] < drop_threshold * rho[j]; if the
    drop never happens, falls back to `cap` (default: the table length).
    """
    rho = np.asarray(contributions, dtype=float)
    if rho.size == 0:
        raise ValueError("contributions must be nonempty")
    cap = int(cap) if cap is not None else rho.size
    cap = min(cap, rho.size) if cap >= 1 else rho.size
    logger.info("variance contribution table: %s", np.array2string(rho, precision=4))
    for j in range(1, rho.size):
        if rho[j] < drop_threshold * rho[j - 1]:
            return min(j, cap)
    logger.warning("depth rule never fired; falling back to cap %d", cap)
    return cap


@dataclass
class AggregatedSeries:
    """Across-level summary series for one trip."""

    trip_id: str
    values: np.ndarray
    rule: str
    levels_used: tuple[int, ...]

    @property
    def length(self) -> int:
        return int(self.values.size)


def aggregate(decomp: WaveletDecomposition, rule: str = "signed_max_abs",
              levels=None, weights=None, level: int | None = None) -> AggregatedSeries:
    """Collapse the selected levels into one coefficient per time point.

    The default keeps, at each time point, the coefficient with the largest
    magnitude across the selected levels *with its sign*; on magnitude ties
    the lowest level wins.
    """
    if rule not in AGGREGATION_RULES:
        raise ValueError(f"unknown aggregation rule {rule!r}")
    if levels is None:
        levels = range(1, decomp.levels + 1)
    lv = tuple(sorted(set(int(j) for j in levels)))
    if not lv or lv[0] < 1 or lv[-1] > decomp.levels:
        raise ValueError(f"levels {lv} not a nonempty subset of 1..{decomp.levels}")

    sub = decomp.wavelet_coeffs[[j - 1 for j in lv], :]
    mag = np.abs(sub)
    if rule == "signed_max_abs":
        pick = np.argmax(mag, axis=0)  # first max -> lowest level on ties
        values = sub[pick, np.arange(sub.shape[1])]
    elif rule == "max_abs":
        values = np.max(mag, axis=0)
    elif rule == "average_abs":
        values = np.mean(mag, axis=0)
    elif rule == "weighted_abs":
        w = np.asarray(weights, dtype=float) if weights is not None else None
        if w is None or w.size != len(lv) or np.any(w < 0) or abs(w.sum() - 1.0) > 1e-9:
            raise BadWeights("weighted_abs needs nonnegative weights summing to 1, one per level")
        values = w @ mag
    else:  # single_level
        if level is None or level not in lv:
            raise ValueError("single_level rule needs `level` inside the selected levels")
        values = decomp.wavelet_coeffs[level - 1].copy()
        rule = f"single_level({level})"
    return AggregatedSeries(decomp.trip_id, np.asarray(values, dtype=float), rule, lv)
