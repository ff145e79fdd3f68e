"""Portfolio construction: ACF-based within-trip thinning and pooling.

Thinning keeps every ``lag``-th aggregated coefficient starting from a
random offset, so the pooled sample is approximately independent while
each trip's retained-index set doubles as its exposure downstream.
"""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ._util import derive_rng, fmt_g17
from .errors import EmptyCohort, UnparsableRow, ZeroVarianceSignal
from .wavelet import AggregatedSeries

logger = logging.getLogger(__name__)

DEFAULT_ACF_THRESHOLD = 0.1
DEFAULT_ACF_RUN = 3
MAX_ACF_LAG = 400


@dataclass
class ThinningReport:
    """Which indices of one trip survived thinning, and why."""

    trip_id: str
    chosen_lag: int
    start_offset: int
    retained_indices: np.ndarray
    acf_values: np.ndarray = field(default_factory=lambda: np.empty(0))
    capped: bool = False

    @property
    def exposure(self) -> int:
        return int(self.retained_indices.size)


@dataclass
class PortfolioSample:
    """Pooled thinned coefficients with per-point provenance."""

    driver_ids: list[str]
    trip_ids: list[str]
    t_indices: np.ndarray
    values: np.ndarray
    provenance: dict[str, ThinningReport]

    @property
    def n(self) -> int:
        return int(self.values.size)

    def points(self):
        for trip, t, v in zip(self.trip_ids, self.t_indices, self.values):
            yield trip, int(t), float(v)


def autocorrelation(series, max_lag: int) -> np.ndarray:
    """Biased (1/T) sample ACF; index k of the result is lag k, acf[0] == 1."""
    x = np.asarray(series, dtype=float)
    t = x.size
    if max_lag < 1 or t <= max_lag:
        raise ValueError(f"need series length > max_lag >= 1, got T={t}, max_lag={max_lag}")
    xc = x - x.mean()
    c0 = float(np.dot(xc, xc)) / t
    meansq = float(np.mean(x * x))
    if c0 <= 0.0 or c0 <= meansq * 1e-24:
        raise ZeroVarianceSignal("constant series has no autocorrelation")
    acf = np.empty(max_lag + 1)
    acf[0] = 1.0
    for k in range(1, max_lag + 1):
        acf[k] = np.dot(xc[:-k], xc[k:]) / t / c0
    return acf


def _lag_from_acf(acf: np.ndarray, t: int, threshold: float, run: int) -> tuple[int, bool]:
    max_lag = acf.size - 1
    for lag in range(1, max_lag - run + 2):
        if np.all(np.abs(acf[lag:lag + run]) < threshold):
            return lag, False
    cap = max(1, t // 10)
    logger.warning("ACF never stayed below %.3g for %d consecutive lags; capping lag at %d",
                   threshold, run, cap)
    return cap, True


def thinning_lag(series, threshold: float = DEFAULT_ACF_THRESHOLD,
                 run: int = DEFAULT_ACF_RUN, max_lag: int | None = None) -> int:
    """Smallest lag at which |acf| stays below `threshold` for `run` lags."""
    if not 0 < threshold < 1:
        raise ValueError("threshold must be in (0, 1)")
    if run < 1:
        raise ValueError("run must be >= 1")
    x = np.asarray(series, dtype=float)
    if max_lag is None:
        max_lag = min(x.size - 2, MAX_ACF_LAG)
    acf = autocorrelation(x, max_lag)
    lag, _ = _lag_from_acf(acf, x.size, threshold, run)
    return lag


def thin_trip(series: AggregatedSeries, lag: int, rng: np.random.Generator,
              acf_values=None, capped: bool = False) -> ThinningReport:
    """Retain every `lag`-th index from a uniformly random start offset."""
    if lag < 1:
        raise ValueError("lag must be >= 1")
    start = int(rng.integers(lag))
    retained = np.arange(start, series.length, lag, dtype=int)
    acf = np.asarray(acf_values, dtype=float) if acf_values is not None else np.empty(0)
    return ThinningReport(series.trip_id, int(lag), start, retained, acf, capped)


def build_portfolio(items, mode: str = "all_trips", draws: int | None = None,
                    threshold: float = DEFAULT_ACF_THRESHOLD, run: int = DEFAULT_ACF_RUN,
                    max_lag: int | None = None, seed: int = 0) -> PortfolioSample:
    """Thin and pool trips into the portfolio sample.

    `items` is a sequence of (driver_id, AggregatedSeries). Mode
    ``all_trips`` thins every trip; ``hierarchical`` draws driver-then-trip
    uniformly `draws` times with replacement (each trip thinned at most
    once). Points come out ordered by (driver_id, trip_id, t_index).
    """
    items = list(items)
    if not items:
        raise EmptyCohort("no trips to pool")
    if mode not in ("all_trips", "hierarchical"):
        raise ValueError(f"unknown portfolio mode {mode!r}")

    if mode == "hierarchical":
        if not draws or draws < 1:
            raise ValueError("hierarchical mode needs draws >= 1")
        by_driver: dict[str, list] = {}
        for driver, series in items:
            by_driver.setdefault(driver, []).append((driver, series))
        drivers = sorted(by_driver)
        rng = derive_rng(seed, "hierarchical")
        chosen: dict[str, tuple] = {}
        for _ in range(draws):
            driver = drivers[int(rng.integers(len(drivers)))]
            pool = by_driver[driver]
            pick = pool[int(rng.integers(len(pool)))]
            chosen.setdefault(pick[1].trip_id, pick)
        selected = list(chosen.values())
    else:
        selected = items

    selected.sort(key=lambda it: (it[0], it[1].trip_id))
    driver_ids: list[str] = []
    trip_ids: list[str] = []
    t_chunks: list[np.ndarray] = []
    v_chunks: list[np.ndarray] = []
    provenance: dict[str, ThinningReport] = {}
    for driver, series in selected:
        lag_cap = min(series.length - 2, max_lag if max_lag is not None else MAX_ACF_LAG)
        acf = autocorrelation(series.values, lag_cap)
        lag, capped = _lag_from_acf(acf, series.length, threshold, run)
        report = thin_trip(series, lag, derive_rng(seed, "thin", series.trip_id), acf, capped)
        provenance[series.trip_id] = report
        idx = report.retained_indices
        driver_ids.extend([driver] * idx.size)
        trip_ids.extend([series.trip_id] * idx.size)
        t_chunks.append(idx)
        v_chunks.append(series.values[idx])
    return PortfolioSample(driver_ids, trip_ids, np.concatenate(t_chunks),
                           np.concatenate(v_chunks), provenance)


# -- artifacts ----------------------------------------------------------------

PORTFOLIO_HEADER = ["driver_id", "trip_id", "t_index", "c"]


def write_portfolio_csv(sample: PortfolioSample, path, meta: str | None = None) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        if meta:
            fh.write(f"# {meta}\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(PORTFOLIO_HEADER)
        for driver, trip, t, v in zip(sample.driver_ids, sample.trip_ids,
                                      sample.t_indices, sample.values):
            writer.writerow([driver, trip, int(t), fmt_g17(v)])


def read_portfolio_values(path) -> np.ndarray:
    path = Path(path)
    values = []
    with open(path, "r", encoding="utf-8", newline="") as fh:
        first = fh.readline()
        if first.startswith("#"):
            first = fh.readline()
        header = next(csv.reader([first]))
        if header != PORTFOLIO_HEADER:
            raise UnparsableRow(path, 1, f"unexpected header {header}")
        for row in csv.reader(fh):
            if row:
                values.append(float(row[3]))
    return np.array(values)


def write_thinning_report(sample: PortfolioSample, path, meta: dict | None = None) -> None:
    payload = {
        "_meta": meta or {},
        "n": sample.n,
        "trips": {
            trip: {
                "lag": rep.chosen_lag,
                "start": rep.start_offset,
                "exposure": rep.exposure,
                "capped": rep.capped,
            }
            for trip, rep in sorted(sample.provenance.items())
        },
    }
    Path(path).write_text(json.dumps(payload, indent=2) + "\n", encoding="utf-8")
