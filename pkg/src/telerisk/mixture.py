"""Gaussian bulk + ordered Uniform tail-layer mixture, fitted by a
constrained multi-run EM over enumerated layer-endpoint candidates.

Endpoints make the likelihood discontinuous, so they are never moved inside
an EM run: a base grid built from trimmed-k-means tail points supplies a
finite candidate set, each candidate gets its own EM run over the remaining
(continuous) parameters, and the best converged run wins. Within a run the
constrained M-steps are exact maximizers, so every run's log-likelihood
trace is nondecreasing.

Constraints carried by every fitted model:
  * component scales bounded below by exp(-n**d),
  * tail layers separated from the Gaussian bulk by delta standard deviations,
  * consecutive layers tile each trimmed tail exactly (outer edges pinned),
  * layer probabilities nonincreasing with depth on each tail.
"""

from __future__ import annotations

import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from itertools import combinations
from pathlib import Path

import numpy as np

from ._util import derive_rng, derive_seed, logsumexp
from .errors import (
    AllCellsFailed,
    AllRunsRejected,
    ConstraintViolatedAtInit,
    DegenerateClusters,
    NoFeasibleCandidate,
    NonFiniteLikelihood,
    NoTailPoints,
)

logger = logging.getLogger(__name__)

LOG_SQRT_2PI = 0.5 * np.log(2.0 * np.pi)
PI_FLOOR = 1e-12
_TOL = 1e-9


@dataclass(frozen=True)
class Gaussian:
    mu: float
    sigma: float
    pi: float


@dataclass(frozen=True)
class Layer:
    """One Uniform severity layer; (lo, hi) is its support interval."""

    lo: float
    hi: float
    pi: float

    @property
    def width(self) -> float:
        return self.hi - self.lo


@dataclass
class SeverityModel:
    """Fitted portfolio severity model.

    ``left_layers``/``right_layers`` are ordered shallow-to-deep. Left
    layers own their upper edge (lo, hi], right layers their lower edge
    [lo, hi); the outermost layer of each tail is closed at the pinned
    extreme, so the layers tile the tails with no gaps or double counting.
    """

    gaussians: list[Gaussian]
    left_layers: list[Layer]
    right_layers: list[Layer]
    log_lik: float
    n: int
    config: dict = field(default_factory=dict)

    @property
    def n_components(self) -> int:
        return len(self.gaussians) + len(self.left_layers) + len(self.right_layers)

    @property
    def mixing(self) -> np.ndarray:
        """Component probabilities in EM column order: left, Gaussians, right."""
        return np.array([l.pi for l in self.left_layers]
                        + [g.pi for g in self.gaussians]
                        + [r.pi for r in self.right_layers])

    def layer_probabilities(self) -> np.ndarray:
        """Tail-layer probabilities ordered deepest-left ... deepest-right."""
        return np.array([l.pi for l in reversed(self.left_layers)]
                        + [r.pi for r in self.right_layers])


def scale_floor(n: int, d: float) -> float:
    return float(np.exp(-float(n) ** d))


def validate_model(model: SeverityModel, n: int | None = None) -> None:
    """Raise ConstraintViolatedAtInit if any model invariant fails."""
    n = n if n is not None else model.n
    d = float(model.config.get("d", 0.5))
    delta = float(model.config.get("delta", 1.96))
    floor = scale_floor(n, d)

    pis = model.mixing
    if np.any(pis <= 0.0) or np.any(pis >= 1.0):
        raise ConstraintViolatedAtInit("mixing probabilities must lie in (0, 1)")
    if abs(pis.sum() - 1.0) > 1e-10:
        raise ConstraintViolatedAtInit(f"mixing probabilities sum to {pis.sum()!r}, not 1")

    mus = [g.mu for g in model.gaussians]
    if any(b < a for a, b in zip(mus, mus[1:])):
        raise ConstraintViolatedAtInit("Gaussian means must be ascending")
    for g in model.gaussians:
        if g.sigma < floor * (1 - _TOL):
            raise ConstraintViolatedAtInit(f"sigma {g.sigma} below scale floor {floor}")
    for lay in model.left_layers + model.right_layers:
        if lay.width <= 0:
            raise ConstraintViolatedAtInit(f"layer ({lay.lo}, {lay.hi}) has nonpositive width")
        if lay.width / np.sqrt(12.0) < floor * (1 - _TOL):
            raise ConstraintViolatedAtInit(f"layer width {lay.width} below scale floor")

    if model.left_layers:
        u1 = model.left_layers[0].hi
        g1 = model.gaussians[0]
        if u1 > g1.mu - delta * g1.sigma + _TOL * max(1.0, abs(u1)):
            raise ConstraintViolatedAtInit(
                f"left tail edge {u1} not separated from bulk (needs <= {g1.mu - delta * g1.sigma})")
        for shallow, deep in zip(model.left_layers, model.left_layers[1:]):
            if shallow.lo != deep.hi:
                raise ConstraintViolatedAtInit("left layers must share boundaries")
        lpis = [l.pi for l in model.left_layers]
        if any(b > a + 1e-12 for a, b in zip(lpis, lpis[1:])):
            raise ConstraintViolatedAtInit("left layer probabilities must be nonincreasing with depth")
    if model.right_layers:
        u1 = model.right_layers[0].lo
        gG = model.gaussians[-1]
        if u1 < gG.mu + delta * gG.sigma - _TOL * max(1.0, abs(u1)):
            raise ConstraintViolatedAtInit(
                f"right tail edge {u1} not separated from bulk (needs >= {gG.mu + delta * gG.sigma})")
        for shallow, deep in zip(model.right_layers, model.right_layers[1:]):
            if shallow.hi != deep.lo:
                raise ConstraintViolatedAtInit("right layers must share boundaries")
        rpis = [r.pi for r in model.right_layers]
        if any(b > a + 1e-12 for a, b in zip(rpis, rpis[1:])):
            raise ConstraintViolatedAtInit("right layer probabilities must be nonincreasing with depth")


# -- density machinery ---------------------------------------------------------

def _uniform_log_density_columns(c: np.ndarray, left: list[Layer],
                                 right: list[Layer]) -> np.ndarray:
    """(n, M-+M+) matrix of Uniform log densities; -inf outside each support."""
    n = c.size
    cols = np.full((n, len(left) + len(right)), -np.inf)
    for i, lay in enumerate(left):
        closed_lo = i == len(left) - 1  # deepest layer owns the pinned extreme
        inside = (c >= lay.lo if closed_lo else c > lay.lo) & (c <= lay.hi)
        cols[inside, i] = -np.log(lay.width)
    off = len(left)
    for i, lay in enumerate(right):
        closed_hi = i == len(right) - 1
        inside = (c >= lay.lo) & (c <= lay.hi if closed_hi else c < lay.hi)
        cols[inside, off + i] = -np.log(lay.width)
    return cols


def _gaussian_log_density_columns(c: np.ndarray, mus: np.ndarray,
                                  sigmas: np.ndarray) -> np.ndarray:
    z = (c[:, None] - mus[None, :]) / sigmas[None, :]
    return -0.5 * z * z - np.log(sigmas)[None, :] - LOG_SQRT_2PI


def _log_density_matrix(c: np.ndarray, model: SeverityModel) -> np.ndarray:
    cols = _uniform_log_density_columns(c, model.left_layers, model.right_layers)
    mus = np.array([g.mu for g in model.gaussians])
    sigmas = np.array([g.sigma for g in model.gaussians])
    ml = len(model.left_layers)
    gauss = _gaussian_log_density_columns(c, mus, sigmas)
    return np.concatenate([cols[:, :ml], gauss, cols[:, ml:]], axis=1)


def mixture_logpdf(x, model: SeverityModel) -> np.ndarray | float:
    """Log mixture density, evaluated in log space with max-shift."""
    scalar = np.isscalar(x)
    c = np.atleast_1d(np.asarray(x, dtype=float))
    with np.errstate(divide="ignore"):
        a = _log_density_matrix(c, model) + np.log(model.mixing)[None, :]
    out = logsumexp(a, axis=1)
    return float(out[0]) if scalar else out


def responsibilities(x, model: SeverityModel) -> np.ndarray:
    """Posterior component probabilities, columns ordered left/Gaussian/right."""
    c = np.atleast_1d(np.asarray(x, dtype=float))
    with np.errstate(divide="ignore"):
        a = _log_density_matrix(c, model) + np.log(model.mixing)[None, :]
    lse = logsumexp(a, axis=1)
    return np.exp(a - lse[:, None])


# -- isotonic projection -------------------------------------------------------

def pava_nonincreasing(values, weights=None) -> np.ndarray:
    """Weighted least-squares projection onto nonincreasing sequences.

    Pool-adjacent-violators; preserves the weighted mean and is idempotent.
    """
    vl = values.tolist() if isinstance(values, np.ndarray) else [float(x) for x in values]
    if weights is None:
        wl = [1.0] * len(vl)
    else:
        wl = weights.tolist() if isinstance(weights, np.ndarray) else [float(x) for x in weights]
        if len(wl) != len(vl):
            raise ValueError("values and weights must have equal length")
        if min(wl, default=1.0) <= 0:
            raise ValueError("weights must be strictly positive")
    means: list[float] = []
    wts: list[float] = []
    counts: list[int] = []
    for vi, wi in zip(vl, wl):
        means.append(vi)
        wts.append(wi)
        counts.append(1)
        while len(means) > 1 and means[-2] < means[-1]:
            m2, w2, c2 = means.pop(), wts.pop(), counts.pop()
            m1, w1, c1 = means.pop(), wts.pop(), counts.pop()
            wt = w1 + w2
            means.append((m1 * w1 + m2 * w2) / wt)
            wts.append(wt)
            counts.append(c1 + c2)
    out: list[float] = []
    for m, cnt in zip(means, counts):
        out.extend([m] * cnt)
    return np.array(out)


# -- trimmed k-means -----------------------------------------------------------

def trimmed_kmeans(values, n_clusters: int, trim: float, rng: np.random.Generator,
                   restarts: int = 10, max_iter: int = 100):
    """Robust 1-d clustering; returns (means, sds, left tail, right tail).

    Each Lloyd step trims the ceil(trim*n) points farthest from their
    nearest center before updating. The trimmed points of the best restart
    (lowest trimmed within-cluster SSE) are split strictly by sign into the
    two tails.
    """
    c = np.asarray(values, dtype=float)
    n = c.size
    if n_clusters < 1:
        raise ValueError("n_clusters must be >= 1")
    if not 0.0 < trim < 1.0:
        raise ValueError("trim must be in (0, 1)")
    n_trim = int(np.ceil(trim * n))
    n_keep = n - n_trim
    if n_keep <= n_clusters:
        raise ValueError(f"n*(1-trim)={n_keep} must exceed n_clusters={n_clusters}")

    best = None
    for _ in range(max(1, restarts)):
        centers = c[rng.choice(n, size=n_clusters, replace=False)].astype(float)
        assign = None
        degenerate = False
        for _ in range(max_iter):
            dist_all = np.abs(c[:, None] - centers[None, :])
            nearest = np.argmin(dist_all, axis=1)
            dist = dist_all[np.arange(n), nearest]
            order = np.argsort(dist, kind="stable")
            keep = order[:n_keep]
            new_assign = nearest.copy()
            new_assign[order[n_keep:]] = -1
            if assign is not None and np.array_equal(new_assign, assign):
                break
            assign = new_assign
            for g in range(n_clusters):
                members = c[(assign == g)]
                if members.size == 0:
                    degenerate = True
                    break
                centers[g] = members.mean()
            if degenerate:
                break
        if degenerate or assign is None:
            continue
        sse = float(np.sum(dist[keep] ** 2))
        if best is None or sse < best[0]:
            best = (sse, centers.copy(), assign.copy())
    if best is None:
        raise DegenerateClusters("every restart produced an empty cluster after trimming")

    _, centers, assign = best
    order = np.argsort(centers, kind="stable")
    means = np.empty(n_clusters)
    sds = np.empty(n_clusters)
    for rank, g in enumerate(order):
        members = c[assign == g]
        means[rank] = members.mean()
        sds[rank] = members.std()
    trimmed = c[assign == -1]
    c_neg = np.sort(trimmed[trimmed < 0])
    c_pos = np.sort(trimmed[trimmed > 0])
    if c_neg.size == 0 or c_pos.size == 0:
        raise NoTailPoints("trimming left one tail empty")
    return means, sds, c_neg, c_pos


# -- base grid and candidate enumeration ---------------------------------------

@dataclass
class BaseGrid:
    """Snapped endpoint candidates per tail, plus the pinned extremes."""

    left_points: np.ndarray   # ascending, in (c_min_left, c_max_left]
    right_points: np.ndarray  # ascending, in [c_min_right, c_max_right)
    c_min_left: float
    c_max_left: float
    c_min_right: float
    c_max_right: float


def _snap_to_observed(targets: np.ndarray, observed: np.ndarray) -> np.ndarray:
    """Nearest observed value per target; distance ties go to the smaller."""
    idx = np.searchsorted(observed, targets)
    lo = np.clip(idx - 1, 0, observed.size - 1)
    hi = np.clip(idx, 0, observed.size - 1)
    pick_lo = np.abs(targets - observed[lo]) <= np.abs(observed[hi] - targets)
    return np.where(pick_lo, observed[lo], observed[hi])


def build_base_grid(c_neg, c_pos, q: int, p: int) -> BaseGrid:
    """Equally spaced split points per tail, snapped to observed values.

    The pinned outer extremes (deep edges) are excluded from the grid; the
    inner edges are its last/first points, so a candidate can always cover
    a tail up to its least extreme trimmed observation. Snapping can merge
    neighbors, reducing the effective resolution (logged).
    """
    if q < 1 or p < 1:
        raise ValueError("q and p must be >= 1")
    c_neg = np.sort(np.asarray(c_neg, dtype=float))
    c_pos = np.sort(np.asarray(c_pos, dtype=float))
    if c_neg.size == 0 or c_pos.size == 0:
        raise NoTailPoints("both tails need at least one trimmed observation")

    a, b = c_neg[0], c_neg[-1]
    raw_left = a + (b - a) * np.arange(1, q + 1) / q
    left = np.unique(_snap_to_observed(raw_left, c_neg))
    left = left[left > a]
    if left.size < q:
        logger.warning("left grid reduced from %d to %d points after snapping", q, left.size)

    lo, hi = c_pos[0], c_pos[-1]
    raw_right = lo + (hi - lo) * np.arange(0, p) / p
    right = np.unique(_snap_to_observed(raw_right, c_pos))
    right = right[right < hi]
    if right.size < p:
        logger.warning("right grid reduced from %d to %d points after snapping", p, right.size)
    return BaseGrid(left, right, float(a), float(b), float(lo), float(hi))


def _chain_feasible(points, min_width: float) -> bool:
    return all(b - a >= min_width for a, b in zip(points, points[1:]))


def enumerate_candidates(grid: BaseGrid, m_minus: int, m_plus: int, min_width: float):
    """Yield every feasible (left selection, right selection) pair.

    Selections are ascending tuples; feasibility requires all consecutive
    gaps, including those to the pinned extremes, to be at least
    ``min_width``. Iteration order is lexicographic for reproducibility.
    """
    if m_minus < 1 or m_plus < 1:
        raise ValueError("need at least one layer per tail")
    if m_minus > grid.left_points.size or m_plus > grid.right_points.size:
        raise NoFeasibleCandidate(
            f"layer counts ({m_minus}, {m_plus}) exceed grid sizes "
            f"({grid.left_points.size}, {grid.right_points.size})")
    lefts = [combo for combo in combinations(grid.left_points.tolist(), m_minus)
             if _chain_feasible((grid.c_min_left, *combo), min_width)]
    rights = [combo for combo in combinations(grid.right_points.tolist(), m_plus)
              if _chain_feasible((*combo, grid.c_max_right), min_width)]
    for lc in lefts:
        for rc in rights:
            yield lc, rc


# -- EM ------------------------------------------------------------------------

@dataclass
class EmTrace:
    """Observed log-likelihood per iteration; nondecreasing by construction."""

    loglik: list[float]
    iterations: int
    converged: bool


def _layers_from_selection(left_sel, right_sel, c_min_left: float, c_max_right: float,
                           left_pis, right_pis) -> tuple[list[Layer], list[Layer]]:
    us = [c_min_left, *left_sel]  # ascending: u_{M-+1} .. u_1
    m_minus = len(left_sel)
    left = [Layer(us[m_minus - mp], us[m_minus + 1 - mp], float(left_pis[mp - 1]))
            for mp in range(1, m_minus + 1)]
    vs = [*right_sel, c_max_right]  # ascending: u+_1 .. u+_{M++1}
    right = [Layer(vs[m - 1], vs[m], float(right_pis[m - 1]))
             for m in range(1, len(right_sel) + 1)]
    return left, right


def em_run(values, init: SeverityModel, eps: float = 1e-6,
           max_iter: int = 500) -> tuple[SeverityModel, EmTrace]:
    """Run EM from a feasible init with layer endpoints held fixed.

    Per iteration: E-step responsibilities; exact constrained M-steps
    (Gaussian moments with the scale floor; mixing proportions with the
    per-tail nonincreasing projection). Stops when |delta loglik| <=
    eps * |loglik| or after ``max_iter`` iterations.
    """
    c = np.asarray(values, dtype=float)
    n = c.size
    validate_model(init, n=n)
    d = float(init.config.get("d", 0.5))
    floor = scale_floor(n, d)

    ml, g_count, mr = len(init.left_layers), len(init.gaussians), len(init.right_layers)
    unif_cols = _uniform_log_density_columns(c, init.left_layers, init.right_layers)
    mus = np.array([g.mu for g in init.gaussians])
    sigmas = np.array([g.sigma for g in init.gaussians])
    pis = init.mixing.copy()

    trace: list[float] = []
    converged = False
    prev_ll = -np.inf
    for _ in range(max_iter):
        dens = np.concatenate(
            [unif_cols[:, :ml], _gaussian_log_density_columns(c, mus, sigmas),
             unif_cols[:, ml:]], axis=1)
        with np.errstate(divide="ignore"):
            a = dens + np.log(pis)[None, :]
        lse = logsumexp(a, axis=1)
        ll = float(np.sum(lse))
        if not np.isfinite(ll):
            raise NonFiniteLikelihood(f"log-likelihood became {ll}")
        trace.append(ll)
        if np.isfinite(prev_ll) and abs(ll - prev_ll) <= eps * abs(ll):
            converged = True
            break
        prev_ll = ll

        tau = np.exp(a - lse[:, None])
        nj = tau.sum(axis=0)

        # M1: Gaussian moments under the scale floor
        for g in range(g_count):
            col = ml + g
            if nj[col] <= 0:
                continue
            w = tau[:, col]
            mu = float(np.dot(w, c) / nj[col])
            var = float(np.dot(w, (c - mu) ** 2) / nj[col])
            mus[g] = mu
            sigmas[g] = max(np.sqrt(var), floor)

        # M2: proportions, tail subvectors projected to nonincreasing with
        # depth (exact order-restricted maximizer; preserves tail mass)
        pis = nj / n
        if ml:  # list order is shallow->deep on both tails
            pis[:ml] = pava_nonincreasing(pis[:ml])
        if mr:
            pis[ml + g_count:] = pava_nonincreasing(pis[ml + g_count:])
        small = pis < PI_FLOOR
        if np.any(small):
            pis = np.maximum(pis, PI_FLOOR)
            pis = pis / pis.sum()

    order = np.argsort(mus, kind="stable")
    gaussians = [Gaussian(float(mus[g]), float(sigmas[g]), float(pis[ml + g])) for g in order]
    left = [Layer(l.lo, l.hi, float(pis[i])) for i, l in enumerate(init.left_layers)]
    right = [Layer(r.lo, r.hi, float(pis[ml + g_count + i]))
             for i, r in enumerate(init.right_layers)]
    model = SeverityModel(gaussians, left, right, trace[-1], n, dict(init.config))
    return model, EmTrace(trace, len(trace), converged)


# -- the multi-run driver --------------------------------------------------------

def _separated(left_sel, right_sel, mus, sigmas, delta: float) -> bool:
    return (left_sel[-1] <= mus[0] - delta * sigmas[0] + _TOL
            and right_sel[0] >= mus[-1] + delta * sigmas[-1] - _TOL)


def _make_init(left_sel, right_sel, grid: BaseGrid, mus, sigmas, n: int,
               config: dict) -> SeverityModel:
    g_count = len(mus)
    m_minus, m_plus = len(left_sel), len(right_sel)
    alpha = config["alpha"]
    pi_tail = alpha / (m_minus + m_plus)
    left, right = _layers_from_selection(left_sel, right_sel, grid.c_min_left,
                                         grid.c_max_right,
                                         [pi_tail] * m_minus, [pi_tail] * m_plus)
    gaussians = [Gaussian(float(m), float(s), (1.0 - alpha) / g_count)
                 for m, s in zip(mus, sigmas)]
    return SeverityModel(gaussians, left, right, -np.inf, n, dict(config))


_WORKER_STATE: dict = {}


def _worker_init(values, grid, mus, sigmas, config, eps, max_iter):
    _WORKER_STATE.update(values=values, grid=grid, mus=mus, sigmas=sigmas,
                         config=config, eps=eps, max_iter=max_iter)


def _fit_candidate_batch(batch):
    s = _WORKER_STATE
    out = []
    for idx, (left_sel, right_sel) in batch:
        out.append(_fit_one(idx, left_sel, right_sel, s["values"], s["grid"], s["mus"],
                            s["sigmas"], s["config"], s["eps"], s["max_iter"]))
    return out


def _fit_one(idx, left_sel, right_sel, values, grid, mus, sigmas, config, eps, max_iter):
    delta = config["delta"]
    init = _make_init(left_sel, right_sel, grid, mus, sigmas, len(values), config)
    try:
        model, trace = em_run(values, init, eps=eps, max_iter=max_iter)
    except (ConstraintViolatedAtInit, NonFiniteLikelihood) as exc:
        return idx, None, f"em: {exc}"
    fit_mus = [g.mu for g in model.gaussians]
    fit_sigmas = [g.sigma for g in model.gaussians]
    if not _separated(left_sel, right_sel, fit_mus, fit_sigmas, delta):
        return idx, None, "tail separation violated after convergence"
    return idx, (model.log_lik, model), trace.iterations


def mu_memr(values, n_gaussians: int, m_minus: int, m_plus: int, *,
            d: float = 0.5, alpha: float = 0.05, delta: float = 1.96,
            q: int = 12, p: int = 10, eps: float = 1e-6, max_iter: int = 500,
            restarts: int = 10, seed: int = 0, rng: np.random.Generator | None = None,
            jobs: int = 1) -> SeverityModel:
    """Multi-run constrained fit; returns the highest-likelihood converged run.

    Ties break toward the lexicographically earliest candidate so the result
    is independent of execution order (and of ``jobs``).
    """
    c = np.asarray(values, dtype=float)
    n = c.size
    if n < 100:
        raise ValueError(f"need at least 100 points, got {n}")
    if not 0 < d < 1:
        raise ValueError("d must be in (0, 1)")
    config = {"d": d, "alpha": alpha, "delta": delta, "q": q, "p": p}
    rng = rng if rng is not None else derive_rng(seed, "mu_memr", n_gaussians, m_minus, m_plus)

    means, sds, c_neg, c_pos = trimmed_kmeans(c, n_gaussians, alpha, rng, restarts=restarts)
    floor = scale_floor(n, d)
    sds = np.maximum(sds, floor)
    grid = build_base_grid(c_neg, c_pos, q, p)
    min_width = np.sqrt(12.0) * floor

    candidates = list(enumerate_candidates(grid, m_minus, m_plus, min_width))
    if not candidates:
        raise NoFeasibleCandidate("no endpoint selection satisfies the width constraint")
    feasible = [(i, cand) for i, cand in enumerate(candidates)
                if _separated(cand[0], cand[1], means, sds, delta)]
    logger.info("MU-MEMR: %d candidates, %d separation-feasible at init",
                len(candidates), len(feasible))
    if not feasible:
        raise AllRunsRejected("no candidate satisfies tail separation at initialization")

    results = []
    if jobs > 1 and len(feasible) > 1:
        chunk = max(1, len(feasible) // (jobs * 4))
        batches = [feasible[i:i + chunk] for i in range(0, len(feasible), chunk)]
        with ProcessPoolExecutor(max_workers=jobs, initializer=_worker_init,
                                 initargs=(c, grid, means, sds, config, eps, max_iter)) as ex:
            for out in ex.map(_fit_candidate_batch, batches):
                results.extend(out)
    else:
        for idx, (ls, rs) in feasible:
            results.append(_fit_one(idx, ls, rs, c, grid, means, sds, config, eps, max_iter))

    kept = [(payload[0], idx, payload[1]) for idx, payload, _ in results if payload is not None]
    if not kept:
        reasons = {info for _, payload, info in results if payload is None}
        raise AllRunsRejected(f"every EM run was discarded ({'; '.join(sorted(map(str, reasons)))})")
    kept.sort(key=lambda item: (-item[0], item[1]))
    best = kept[0][2]
    validate_model(best, n=n)
    return best


# -- model selection -----------------------------------------------------------

def free_parameter_count(n_gaussians: int, m_minus: int, m_plus: int) -> int:
    """Declared k for AIC/BIC: Gaussian params + interior endpoints + free mixes."""
    return 2 * n_gaussians + (m_minus + m_plus) + (n_gaussians + m_minus + m_plus - 1)


@dataclass
class SelectionCell:
    n_gaussians: int
    m_minus: int
    m_plus: int
    loglik: float | None
    aic: float | None
    bic: float | None
    status: str
    model: SeverityModel | None = None


@dataclass
class SelectionResult:
    cells: list[SelectionCell]
    best_loglik: SelectionCell
    best_aic: SelectionCell
    best_bic: SelectionCell


def model_select(values, g_grid, m_minus_grid, m_plus_grid, *, seed: int = 0,
                 jobs: int = 1, precomputed: dict | None = None,
                 **fit_kwargs) -> SelectionResult:
    """Fit every (G, M-, M+) cell and rank by log-likelihood, AIC, and BIC.

    Individual cell failures are recorded, not fatal; ``precomputed`` lets a
    resumed run reuse finished cells keyed by (G, M-, M+).
    """
    c = np.asarray(values, dtype=float)
    n = c.size
    cells: list[SelectionCell] = []
    for g in g_grid:
        for mm in m_minus_grid:
            for mp in m_plus_grid:
                key = (int(g), int(mm), int(mp))
                if precomputed and key in precomputed:
                    cells.append(precomputed[key])
                    continue
                try:
                    model = mu_memr(c, g, mm, mp, seed=derive_seed(seed, "cell", *key),
                                    jobs=jobs, **fit_kwargs)
                    k = free_parameter_count(g, mm, mp)
                    ll = model.log_lik
                    cells.append(SelectionCell(g, mm, mp, ll, 2 * k - 2 * ll,
                                               k * np.log(n) - 2 * ll, "ok", model))
                except Exception as exc:  # record and continue
                    logger.warning("cell (G=%d, M-=%d, M+=%d) failed: %s", g, mm, mp, exc)
                    cells.append(SelectionCell(g, mm, mp, None, None, None,
                                               f"failed: {exc}"))
    ok = [cell for cell in cells if cell.status == "ok"]
    if not ok:
        raise AllCellsFailed("no selection cell produced a model")
    return SelectionResult(
        cells,
        max(ok, key=lambda cl: cl.loglik),
        min(ok, key=lambda cl: cl.aic),
        min(ok, key=lambda cl: cl.bic),
    )


# -- serialization ---------------------------------------------------------------

def model_to_dict(model: SeverityModel) -> dict:
    return {
        "gaussians": [{"mu": g.mu, "sigma": g.sigma, "pi": g.pi} for g in model.gaussians],
        "left_layers": [{"lo": l.lo, "hi": l.hi, "pi": l.pi} for l in model.left_layers],
        "right_layers": [{"lo": r.lo, "hi": r.hi, "pi": r.pi} for r in model.right_layers],
        "loglik": model.log_lik,
        "n": model.n,
        "config": dict(model.config),
    }


def model_from_dict(payload: dict) -> SeverityModel:
    return SeverityModel(
        [Gaussian(g["mu"], g["sigma"], g["pi"]) for g in payload["gaussians"]],
        [Layer(l["lo"], l["hi"], l["pi"]) for l in payload["left_layers"]],
        [Layer(r["lo"], r["hi"], r["pi"]) for r in payload["right_layers"]],
        float(payload["loglik"]),
        int(payload["n"]),
        dict(payload.get("config", {})),
    )


def write_model_json(model: SeverityModel, path, meta: dict | None = None) -> None:
    payload = model_to_dict(model)
    if meta:
        payload["_meta"] = meta
    Path(path).write_text(json.dumps(payload, indent=2) + "\n", encoding="utf-8")


def read_model_json(path) -> SeverityModel:
    return model_from_dict(json.loads(Path(path).read_text(encoding="utf-8")))
