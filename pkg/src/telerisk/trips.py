"""Trip loading, synthetic cohort generation, and the CSV interchange format.

Real trips come from UAH-DriveSet-style directory trees (one
``RAW_ACCELEROMETERS.txt`` per trip, whitespace-separated, timestamp in the
first column). Synthetic trips draw bulk samples from a two-Gaussian mix and
inject isolated spikes calibrated so that the post-aggregation wavelet
coefficient lands inside a requested tail layer.
"""

from __future__ import annotations

import csv
import json
import logging
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ._util import derive_rng, fmt_g17
from .errors import (
    EmptyDataset,
    EmptyTrip,
    InfeasibleSpec,
    MissingColumn,
    TripTooShort,
    UnparsableRow,
)
from .wavelet import aggregate, filter_width, filters_by_name, modwt_forward

logger = logging.getLogger(__name__)

LABELS = ("normal", "aggressive", "drowsy")
ROAD_TYPES = ("secondary", "motorway", "synthetic")

UAH_SENSOR_FILE = "RAW_ACCELEROMETERS.txt"


def canonical_label(raw: str) -> str:
    """Map raw labels like ``normal1`` onto the three behavioral classes."""
    low = raw.strip().lower()
    for lab in LABELS:
        if low.startswith(lab):
            return lab
    raise ValueError(f"unrecognized trip label {raw!r}")


@dataclass(eq=False)
class TripRecord:
    """One trip's longitudinal-acceleration series plus metadata.

    ``label`` is the canonical class; ``label_raw`` keeps the original
    variant (``normal1``/``normal2``) as a trip ordering hint.
    """

    driver_id: str
    trip_id: str
    label: str
    road_type: str
    sample_rate_hz: float
    samples: np.ndarray
    label_raw: str = ""

    def __post_init__(self):
        if self.label not in LABELS:
            raise ValueError(f"bad label {self.label!r}")
        if self.road_type not in ROAD_TYPES:
            raise ValueError(f"bad road_type {self.road_type!r}")
        if self.sample_rate_hz <= 0:
            raise ValueError("sample_rate_hz must be positive")
        self.samples = np.asarray(self.samples, dtype=float)
        if not self.label_raw:
            self.label_raw = self.label

    @property
    def length(self) -> int:
        return int(self.samples.size)


def min_trip_length(max_level: int, base_width: int = 4) -> int:
    """Trips shorter than twice the deepest filter width are rejected."""
    return 2 * filter_width(max_level, base_width)


def _parse_trip_dir_name(name: str) -> tuple[str, str, str] | None:
    """Extract (driver, raw label, road) from names like
    ``20151110175712-16km-D1-NORMAL1-SECONDARY``."""
    tokens = name.split("-")
    if len(tokens) < 3:
        return None
    driver = next((t for t in tokens if re.fullmatch(r"[Dd]\d+", t)), None)
    road = tokens[-1].lower()
    raw_label = tokens[-2]
    if driver is None or road not in ("secondary", "motorway"):
        return None
    try:
        canonical_label(raw_label)
    except ValueError:
        return None
    return driver.upper(), raw_label, road


def _read_uah_file(path: Path, time_column: int, accel_column: int) -> np.ndarray:
    needed = max(time_column, accel_column) + 1
    values = []
    prev_t = -np.inf
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            parts = line.split()
            if not parts:
                continue
            if len(parts) < needed:
                raise MissingColumn(path, lineno, needed, len(parts))
            try:
                t = float(parts[time_column])
                a = float(parts[accel_column])
            except ValueError:
                raise UnparsableRow(path, lineno) from None
            if not np.isfinite(a) or not np.isfinite(t):
                raise UnparsableRow(path, lineno, "non-finite value")
            if t < prev_t:
                raise UnparsableRow(path, lineno, "non-monotone timestamp")
            prev_t = t
            values.append(a)
    if not values:
        raise EmptyTrip(str(path))
    return np.array(values)


def load_uah_dataset(root_dir, accel_column: int = 4, time_column: int = 0,
                     sample_rate_hz: float = 10.0, max_level: int = 6) -> list[TripRecord]:
    """Load every trip below ``root_dir``.

    The default ``accel_column`` selects the raw longitudinal channel; pass
    the KF-filtered column index to use the filtered variant instead.
    """
    root = Path(root_dir)
    if not root.is_dir():
        raise EmptyDataset(f"{root} is not a directory")
    trips: list[TripRecord] = []
    minimum = min_trip_length(max_level)
    for sensor in sorted(root.rglob(UAH_SENSOR_FILE)):
        parsed = _parse_trip_dir_name(sensor.parent.name)
        if parsed is None:
            logger.warning("skipping unrecognized trip directory %s", sensor.parent)
            continue
        driver, raw_label, road = parsed
        samples = _read_uah_file(sensor, time_column, accel_column)
        trip_id = sensor.parent.name
        if samples.size < minimum:
            raise TripTooShort(trip_id, samples.size, minimum)
        trips.append(TripRecord(driver, trip_id, canonical_label(raw_label), road,
                                sample_rate_hz, samples, raw_label.lower()))
    if not trips:
        raise EmptyDataset(f"no {UAH_SENSOR_FILE} trips under {root}")
    trips.sort(key=lambda tr: (tr.driver_id, tr.trip_id))
    return trips


# -- synthetic cohorts --------------------------------------------------------

@dataclass
class CohortSpec:
    """Ground-truth recipe for a synthetic cohort.

    ``tail_events`` maps a label to a list of ((lo, hi), rate-per-1000)
    pairs; events are injected so the aggregated coefficient lands in
    (lo, hi). Intervals must stay clear of the bulk's +-3 sd band.
    """

    drivers: int
    trips_per_driver: list[tuple[str, float]]
    bulk_params: tuple[tuple[float, float], tuple[float, float]]
    tail_events: dict[str, list[tuple[tuple[float, float], float]]]
    seed: int
    sample_rate_hz: float = 10.0
    max_level: int = 6
    rule: str = "signed_max_abs"
    filters: str = "d4"

    def validate(self) -> None:
        if self.drivers < 1 or not self.trips_per_driver:
            raise InfeasibleSpec("need at least one driver and one trip")
        for label, dur in self.trips_per_driver:
            canonical_label(label)
            if dur <= 0:
                raise InfeasibleSpec(f"duration must be positive, got {dur}")
        (m1, s1), (m2, s2) = self.bulk_params
        if s1 <= 0 or s2 <= 0:
            raise InfeasibleSpec("bulk sds must be positive")
        bulk_lo = min(m1 - 3 * s1, m2 - 3 * s2)
        bulk_hi = max(m1 + 3 * s1, m2 + 3 * s2)
        intervals = [iv for evs in self.tail_events.values() for iv, _ in evs]
        for lo, hi in intervals:
            if not lo < hi:
                raise InfeasibleSpec(f"empty layer interval ({lo}, {hi})")
            if hi > bulk_lo and lo < bulk_hi:
                raise InfeasibleSpec(
                    f"layer ({lo}, {hi}) overlaps bulk band ({bulk_lo:.4g}, {bulk_hi:.4g})")
        for evs in self.tail_events.values():
            ivs = sorted(iv for iv, _ in evs)
            for (a, b), (c, d) in zip(ivs, ivs[1:]):
                if c < b:
                    raise InfeasibleSpec(f"layer intervals ({a},{b}) and ({c},{d}) overlap")

    @classmethod
    def from_json(cls, payload: dict) -> "CohortSpec":
        spec = cls(
            drivers=int(payload["drivers"]),
            trips_per_driver=[(str(l), float(d)) for l, d in payload["trips_per_driver"]],
            bulk_params=tuple((float(m), float(s)) for m, s in payload["bulk_params"]),
            tail_events={
                str(k): [((float(iv[0]), float(iv[1])), float(rate)) for iv, rate in v]
                for k, v in payload.get("tail_events", {}).items()},
            seed=int(payload["seed"]),
            sample_rate_hz=float(payload.get("sample_rate_hz", 10.0)),
            max_level=int(payload.get("max_level", 6)),
            rule=str(payload.get("rule", "signed_max_abs")),
            filters=str(payload.get("filters", "d4")),
        )
        spec.validate()
        return spec

    def to_json(self) -> dict:
        return {
            "drivers": self.drivers,
            "trips_per_driver": [[l, d] for l, d in self.trips_per_driver],
            "bulk_params": [list(p) for p in self.bulk_params],
            "tail_events": {k: [[list(iv), r] for iv, r in v]
                            for k, v in self.tail_events.items()},
            "seed": self.seed,
            "sample_rate_hz": self.sample_rate_hz,
            "max_level": self.max_level,
            "rule": self.rule,
            "filters": self.filters,
        }


@dataclass
class Injection:
    """One injected tail event, for auditing the generator."""

    driver_id: str
    trip_id: str
    t_index: int
    coef_index: int
    interval: tuple[float, float]
    target: float
    achieved: float
    amplitude: float


_EVENT_SPACING = 64  # keeps spike responses from overlapping at the levels that matter


def _impulse_peak(filters, levels: int):
    """Strongest single-sample response across levels: (level, offset, gain)."""
    t = max(4 * filter_width(levels, filters.width), 256)
    imp = np.zeros(t)
    imp[0] = 1.0
    dec = modwt_forward(imp, levels, filters)
    j, off = np.unravel_index(np.argmax(np.abs(dec.wavelet_coeffs)), dec.wavelet_coeffs.shape)
    return int(j + 1), int(off), float(dec.wavelet_coeffs[j, off])


def _draw_positions(rng, t: int, count: int, spacing: int) -> list[int]:
    taken: list[int] = []
    for cand in rng.permutation(t):
        if all(min(abs(cand - p), t - abs(cand - p)) >= spacing for p in taken):
            taken.append(int(cand))
            if len(taken) == count:
                break
    return taken


def generate_cohort_detailed(spec: CohortSpec) -> tuple[list[TripRecord], list[Injection]]:
    """Generate the cohort and the per-event injection log."""
    spec.validate()
    filters = filters_by_name(spec.filters)
    minimum = min_trip_length(spec.max_level, filters.width)
    peak_level, peak_off, peak_gain = _impulse_peak(filters, spec.max_level)
    (m1, s1), (m2, s2) = spec.bulk_params
    means = np.array([m1, m2])
    sds = np.array([s1, s2])

    trips: list[TripRecord] = []
    log: list[Injection] = []
    for d in range(1, spec.drivers + 1):
        driver_id = f"S{d}"
        for k, (raw_label, duration) in enumerate(spec.trips_per_driver, start=1):
            label = canonical_label(raw_label)
            trip_id = f"{driver_id}-T{k:02d}-{raw_label}"
            t = int(round(duration * spec.sample_rate_hz))
            if t < minimum:
                raise InfeasibleSpec(
                    f"trip {trip_id}: {t} samples < {minimum} required for level {spec.max_level}")
            rng = derive_rng(spec.seed, "trip", driver_id, trip_id)
            comp = rng.integers(0, 2, size=t)
            x = rng.normal(means[comp], sds[comp])

            events = []
            for interval, rate in spec.tail_events.get(label, []):
                n_ev = int(rng.poisson(t * rate / 1000.0))
                events.extend((interval, float(rng.uniform(*interval))) for _ in range(n_ev))
            if events:
                # prefer wide spacing; tighten down to the level-1 response
                # width when the requested rate is dense
                spacing = max(8, min(_EVENT_SPACING, t // (2 * len(events))))
                positions = _draw_positions(rng, t, len(events), spacing)
                if len(positions) < len(events):
                    raise InfeasibleSpec(
                        f"trip {trip_id}: cannot place {len(events)} isolated events in {t} samples")
                base = modwt_forward(x, peak_level, filters).wavelet_coeffs[peak_level - 1]
                for (interval, target), pos in zip(events, positions):
                    s_star = (pos + peak_off) % t
                    amp = (target - base[s_star]) / peak_gain
                    x[pos] += amp
                    log.append(Injection(driver_id, trip_id, pos, s_star,
                                         interval, target, np.nan, amp))
                # audit what actually landed after all injections
                agg = aggregate(modwt_forward(x, spec.max_level, filters, trip_id),
                                spec.rule)
                for inj in log:
                    if inj.trip_id == trip_id:
                        inj.achieved = float(agg.values[inj.coef_index])
                        lo, hi = inj.interval
                        if not lo <= inj.achieved <= hi:
                            logger.warning("injection at %s[%d] landed at %.5g outside (%g, %g)",
                                           trip_id, inj.coef_index, inj.achieved, lo, hi)
            trips.append(TripRecord(driver_id, trip_id, label, "synthetic",
                                    spec.sample_rate_hz, x, raw_label.lower()))
    return trips, log


def generate_cohort(spec: CohortSpec) -> list[TripRecord]:
    """Deterministic synthetic cohort for a fixed spec (same seed, same bytes)."""
    return generate_cohort_detailed(spec)[0]


# -- interchange CSV ----------------------------------------------------------

INTERCHANGE_HEADER = ["driver_id", "trip_id", "label", "road_type",
                      "sample_rate_hz", "t_index", "accel_g"]


def write_trips_csv(trips, path, meta: str | None = None) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        if meta:
            fh.write(f"# {meta}\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(INTERCHANGE_HEADER)
        for tr in trips:
            rate = fmt_g17(tr.sample_rate_hz)
            for t, a in enumerate(tr.samples):
                writer.writerow([tr.driver_id, tr.trip_id, tr.label_raw, tr.road_type,
                                 rate, t, fmt_g17(a)])


def read_trips_csv(path) -> list[TripRecord]:
    path = Path(path)
    by_trip: dict[str, dict] = {}
    order: list[str] = []
    with open(path, "r", encoding="utf-8", newline="") as fh:
        first = fh.readline()
        if first.startswith("#"):
            first = fh.readline()
        header = next(csv.reader([first]))
        if header != INTERCHANGE_HEADER:
            raise UnparsableRow(path, 1, f"unexpected header {header}")
        for lineno, row in enumerate(csv.reader(fh), start=2):
            if not row:
                continue
            if len(row) != len(INTERCHANGE_HEADER):
                raise MissingColumn(path, lineno, len(INTERCHANGE_HEADER), len(row))
            driver, trip, raw_label, road, rate, t_index, accel = row
            try:
                a = float(accel)
                rate_f = float(rate)
                int(t_index)
            except ValueError:
                raise UnparsableRow(path, lineno) from None
            if not np.isfinite(a):
                raise UnparsableRow(path, lineno, "non-finite value")
            rec = by_trip.get(trip)
            if rec is None:
                rec = {"driver": driver, "raw_label": raw_label, "road": road,
                       "rate": rate_f, "samples": []}
                by_trip[trip] = rec
                order.append(trip)
            rec["samples"].append(a)
    if not by_trip:
        raise EmptyDataset(str(path))
    return [TripRecord(r["driver"], trip, canonical_label(r["raw_label"]), r["road"],
                       r["rate"], np.array(r["samples"]), r["raw_label"])
            for trip, r in ((t, by_trip[t]) for t in order)]


def write_cohort_spec(spec: CohortSpec, path) -> None:
    Path(path).write_text(json.dumps(spec.to_json(), indent=2) + "\n", encoding="utf-8")


def read_cohort_spec(path) -> CohortSpec:
    return CohortSpec.from_json(json.loads(Path(path).read_text(encoding="utf-8")))
