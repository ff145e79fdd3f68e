import math

import numpy as np
import pytest

from telerisk.errors import (
    EmptyDataset,
    EmptyTrip,
    InfeasibleSpec,
    MissingColumn,
    TripTooShort,
    UnparsableRow,
)
from telerisk.trips import (
    CohortSpec,
    TripRecord,
    canonical_label,
    generate_cohort,
    generate_cohort_detailed,
    load_uah_dataset,
    min_trip_length,
    read_trips_csv,
    write_trips_csv,
)


def _write_uah_trip(root, dirname, accel, rate_hz=10.0):
    trip_dir = root / "D1" / dirname
    trip_dir.mkdir(parents=True)
    lines = []
    for i, a in enumerate(accel):
        t = i / rate_hz
        # timestamp, activation flag, ax, ay(longitudinal), az
        lines.append(f"{t:.2f} 1 0.01 0.02 {a} 0.0")
    (trip_dir / "RAW_ACCELEROMETERS.txt").write_text("\n".join(lines) + "\n")
    return trip_dir


class TestCanonicalLabel:
    @pytest.mark.parametrize("raw,expect", [
        ("normal1", "normal"), ("NORMAL2", "normal"), ("normal", "normal"),
        ("AGGRESSIVE", "aggressive"), ("drowsy", "drowsy"),
    ])
    def test_mapping(self, raw, expect):
        assert canonical_label(raw) == expect

    def test_unknown(self):
        with pytest.raises(ValueError):
            canonical_label("motorway")


class TestUahLoader:
    def test_loads_trip_with_metadata(self, tmp_path):
        accel = np.linspace(-0.05, 0.05, 40)
        _write_uah_trip(tmp_path, "20151110175712-16km-D1-NORMAL1-SECONDARY", accel)
        trips = load_uah_dataset(tmp_path, max_level=2)
        assert len(trips) == 1
        tr = trips[0]
        assert tr.driver_id == "D1"
        assert tr.label == "normal"
        assert tr.label_raw == "normal1"
        assert tr.road_type == "secondary"
        assert tr.sample_rate_hz == 10.0
        np.testing.assert_allclose(tr.samples, accel, atol=1e-12)

    def test_empty_directory(self, tmp_path):
        with pytest.raises(EmptyDataset):
            load_uah_dataset(tmp_path)

    def test_missing_directory(self, tmp_path):
        with pytest.raises(EmptyDataset):
            load_uah_dataset(tmp_path / "nope")

    def test_nan_row_reports_line(self, tmp_path):
        accel = ["0.01"] * 6 + ["NaN"] + ["0.01"] * 33
        _write_uah_trip(tmp_path, "20151110175712-16km-D1-DROWSY-MOTORWAY", accel)
        with pytest.raises(UnparsableRow) as exc:
            load_uah_dataset(tmp_path, max_level=2)
        assert exc.value.line == 7

    def test_unparsable_value(self, tmp_path):
        accel = ["0.01"] * 5 + ["abc"] + ["0.01"] * 30
        _write_uah_trip(tmp_path, "20151110175712-16km-D1-NORMAL-MOTORWAY", accel)
        with pytest.raises(UnparsableRow) as exc:
            load_uah_dataset(tmp_path, max_level=2)
        assert exc.value.line == 6

    def test_out_of_order_timestamp_rejected(self, tmp_path):
        trip_dir = tmp_path / "D2" / "20151110175712-16km-D2-NORMAL-SECONDARY"
        trip_dir.mkdir(parents=True)
        rows = [f"{i / 10:.2f} 1 0 0 0.01 0" for i in range(30)]
        rows[12] = "0.10 1 0 0 0.01 0"  # jumps backwards
        (trip_dir / "RAW_ACCELEROMETERS.txt").write_text("\n".join(rows) + "\n")
        with pytest.raises(UnparsableRow) as exc:
            load_uah_dataset(tmp_path, max_level=2)
        assert exc.value.line == 13

    def test_missing_column(self, tmp_path):
        trip_dir = tmp_path / "D1" / "20151110175712-16km-D1-NORMAL-SECONDARY"
        trip_dir.mkdir(parents=True)
        (trip_dir / "RAW_ACCELEROMETERS.txt").write_text("0.0 1 0.1\n")
        with pytest.raises(MissingColumn):
            load_uah_dataset(tmp_path, max_level=2)

    def test_empty_trip_file(self, tmp_path):
        trip_dir = tmp_path / "D1" / "20151110175712-16km-D1-NORMAL-SECONDARY"
        trip_dir.mkdir(parents=True)
        (trip_dir / "RAW_ACCELEROMETERS.txt").write_text("")
        with pytest.raises(EmptyTrip):
            load_uah_dataset(tmp_path, max_level=2)

    def test_short_trip_rejected(self, tmp_path):
        _write_uah_trip(tmp_path, "20151110175712-16km-D1-NORMAL-SECONDARY", [0.01] * 30)
        with pytest.raises(TripTooShort):
            load_uah_dataset(tmp_path, max_level=6)  # needs 380

    def test_accel_column_knob(self, tmp_path):
        accel = np.full(40, 0.33)
        _write_uah_trip(tmp_path, "20151110175712-16km-D1-NORMAL-SECONDARY", accel)
        trips = load_uah_dataset(tmp_path, accel_column=3, max_level=2)
        np.testing.assert_allclose(trips[0].samples, 0.02)


def _basic_spec(seed=7, **kw):
    defaults = dict(
        drivers=1,
        trips_per_driver=[("normal", 60.0)],
        bulk_params=((0.0, 0.02), (0.0, 0.02)),
        tail_events={},
        seed=seed,
        max_level=6,
    )
    defaults.update(kw)
    return CohortSpec(**defaults)


def _poisson_band(mean, level=0.99):
    """[lo, hi] covering >= `level` central mass of Poisson(mean)."""
    tail = (1 - level) / 2
    pmf = math.exp(-mean)
    cdf = pmf
    lo = hi = None
    k = 0
    while hi is None:
        if lo is None and cdf >= tail:
            lo = k
        if cdf >= 1 - tail:
            hi = k
        k += 1
        pmf *= mean / k
        cdf += pmf
    return lo, hi


class TestGenerateCohort:
    def test_no_events_stays_in_bulk(self):
        trips = generate_cohort(_basic_spec())
        assert len(trips) == 1
        tr = trips[0]
        assert tr.length == 600
        assert tr.road_type == "synthetic"
        assert np.max(np.abs(tr.samples)) < 6 * 0.02

    def test_different_seeds_differ_same_lengths(self):
        a = generate_cohort(_basic_spec(seed=1))[0]
        b = generate_cohort(_basic_spec(seed=2))[0]
        assert a.length == b.length
        assert not np.array_equal(a.samples, b.samples)

    def test_fixed_seed_is_byte_identical(self):
        spec = _basic_spec(seed=99, tail_events={"normal": [((-0.5, -0.3), 3.0)]},
                           trips_per_driver=[("normal", 100.0)])
        a = generate_cohort(spec)
        b = generate_cohort(spec)
        for ta, tb in zip(a, b):
            assert ta.trip_id == tb.trip_id
            assert ta.samples.tobytes() == tb.samples.tobytes()

    def test_injection_count_in_poisson_band(self):
        # 5 events / 1000 samples over 10,000 samples -> Poisson(50)
        spec = _basic_spec(
            seed=123,
            trips_per_driver=[("drowsy", 1000.0)],
            tail_events={"drowsy": [((-0.5, -0.3), 5.0)]},
        )
        _, log = generate_cohort_detailed(spec)
        lo, hi = _poisson_band(50.0)
        assert lo <= len(log) <= hi

    def test_injections_land_in_layer(self):
        spec = _basic_spec(
            seed=5,
            trips_per_driver=[("aggressive", 200.0)],
            tail_events={"aggressive": [((-0.5, -0.3), 4.0), ((0.25, 0.45), 4.0)]},
        )
        trips, log = generate_cohort_detailed(spec)
        assert log, "expected some injections"
        for inj in log:
            lo, hi = inj.interval
            assert lo <= inj.achieved <= hi

    def test_infeasible_overlap_with_bulk(self):
        spec = _basic_spec(tail_events={"normal": [((-0.05, 0.01), 1.0)]})
        with pytest.raises(InfeasibleSpec):
            generate_cohort(spec)

    def test_overlapping_layers_rejected(self):
        spec = _basic_spec(tail_events={"normal": [((-0.5, -0.3), 1.0), ((-0.35, -0.2), 1.0)]})
        with pytest.raises(InfeasibleSpec):
            generate_cohort(spec)

    def test_too_short_trip_rejected(self):
        spec = _basic_spec(trips_per_driver=[("normal", 10.0)])  # 100 < 380
        with pytest.raises(InfeasibleSpec):
            generate_cohort(spec)

    def test_label_conditional_rates(self):
        spec = _basic_spec(
            seed=11,
            trips_per_driver=[("normal", 120.0), ("drowsy", 120.0)],
            tail_events={"drowsy": [((-0.5, -0.3), 10.0)]},
        )
        _, log = generate_cohort_detailed(spec)
        assert all("drowsy" in inj.trip_id for inj in log)

    def test_spec_json_roundtrip(self):
        spec = _basic_spec(tail_events={"normal": [((-0.5, -0.3), 2.0)]})
        again = CohortSpec.from_json(spec.to_json())
        assert again == spec


class TestInterchangeCsv:
    def test_roundtrip_bit_exact(self, tmp_path):
        spec = _basic_spec(seed=3, trips_per_driver=[("normal1", 60.0), ("drowsy", 60.0)])
        trips = generate_cohort(spec)
        path = tmp_path / "trips.csv"
        write_trips_csv(trips, path, meta="test")
        again = read_trips_csv(path)
        assert len(again) == len(trips)
        for a, b in zip(trips, again):
            assert (a.driver_id, a.trip_id, a.label, a.label_raw, a.road_type) == \
                   (b.driver_id, b.trip_id, b.label, b.label_raw, b.road_type)
            assert a.samples.tobytes() == b.samples.tobytes()

    def test_min_trip_length(self):
        assert min_trip_length(6) == 380
        assert min_trip_length(1) == 8

    def test_trip_record_validation(self):
        with pytest.raises(ValueError):
            TripRecord("D1", "t", "bad", "secondary", 10.0, np.zeros(10))
        with pytest.raises(ValueError):
            TripRecord("D1", "t", "normal", "secondary", -1.0, np.zeros(10))
