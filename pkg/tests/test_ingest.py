"""Dataset parsing, validation/rejection behaviour, and trip extraction."""

import io

import numpy as np
import pytest

from routecast.errors import CorruptInputError, FormatError
from routecast.ingest import (
    HEADERS,
    TaxiRecord,
    epoch_day,
    epoch_to_iso,
    extract_all_trips,
    extract_trips,
    group_trajectories,
    iso_to_epoch,
    parse_dataset,
    to_trajectories,
    write_dataset,
)

T0 = iso_to_epoch("2015-07-01T06:00:00")


def taxi_csv(rows):
    return ",".join(HEADERS["taxi"]) + "\n" + "".join(r + "\n" for r in rows)


def record(taxi="T1", t=T0, lat=22.3, lon=113.3, speed=30.0, direction=90.0, occupied=False):
    return TaxiRecord(taxi_id=taxi, t=t, lat=lat, lon=lon, speed_kmh=speed,
                      direction_deg=direction, occupied=occupied)


class TestTimestamps:
    def test_round_trip(self):
        assert epoch_to_iso(iso_to_epoch("2015-07-03T08:15:42")) == "2015-07-03T08:15:42"

    def test_z_suffix_accepted(self):
        assert iso_to_epoch("2015-07-03T08:15:42Z") == iso_to_epoch("2015-07-03T08:15:42")

    def test_epoch_day(self):
        assert epoch_day(iso_to_epoch("2015-07-03T23:59:59")) == "2015-07-03"


class TestParsing:
    def test_empty_file_with_header(self):
        result = parse_dataset("taxi", io.StringIO(taxi_csv([])))
        assert result.records == [] and result.n_rejected == 0

    def test_bad_latitude_rejected_and_reported(self):
        rows = ["T1,2015-07-01T06:00:00,200.0,113.3,30.0,90.0,1",
                "T1,2015-07-01T06:00:10,22.3,113.3,30.0,90.0,1"]
        result = parse_dataset("taxi", io.StringIO(taxi_csv(rows)))
        assert len(result.records) == 1
        assert result.n_rejected == 1
        line_no, reason = result.rejected[0]
        assert line_no == 2 and "lat" in reason

    def test_missing_field_rejected(self):
        rows = ["T1,2015-07-01T06:00:00,22.3",
                "T1,2015-07-01T06:00:10,22.3,113.3,30.0,90.0,1",
                "T1,2015-07-01T06:00:20,22.3,113.3,30.0,90.0,1"]
        result = parse_dataset("taxi", io.StringIO(taxi_csv(rows)))
        assert result.n_rejected == 1

    def test_bad_header_raises(self):
        with pytest.raises(FormatError):
            parse_dataset("taxi", io.StringIO("a,b,c\n"))
        with pytest.raises(FormatError):
            parse_dataset("taxi", io.StringIO(""))

    def test_unknown_kind_raises(self):
        with pytest.raises(FormatError):
            parse_dataset("tram", io.StringIO("x\n"))

    def test_mostly_corrupt_file_refused(self):
        rows = ["T1,2015-07-01T06:00:00,200.0,113.3,30.0,90.0,1"] * 3 + \
               ["T1,2015-07-01T06:00:10,22.3,113.3,30.0,90.0,1"]
        with pytest.raises(CorruptInputError):
            parse_dataset("taxi", io.StringIO(taxi_csv(rows)))

    def test_records_sorted_per_vehicle(self):
        rows = ["T2,2015-07-01T06:00:20,22.3,113.3,30.0,90.0,0",
                "T1,2015-07-01T06:00:10,22.3,113.3,30.0,90.0,0",
                "T1,2015-07-01T06:00:00,22.3,113.3,30.0,90.0,0"]
        result = parse_dataset("taxi", io.StringIO(taxi_csv(rows)))
        keys = [(r.taxi_id, r.t) for r in result.records]
        assert keys == sorted(keys)

    def test_weather_validation(self):
        header = ",".join(HEADERS["weather"])
        ok = parse_dataset("weather", io.StringIO(header + "\n2015-07-01,30.0,22.0,1\n"))
        assert len(ok.records) == 1
        good = "2015-07-02,30.0,22.0,1\n2015-07-03,30.0,22.0,2\n"
        inverted = parse_dataset("weather", io.StringIO(
            header + "\n2015-07-01,20.0,22.0,1\n" + good))
        assert inverted.n_rejected == 1
        bad_cond = parse_dataset("weather", io.StringIO(
            header + "\n2015-07-01,30.0,22.0,21\n" + good))
        assert bad_cond.n_rejected == 1

    def test_poi_category_range(self):
        header = ",".join(HEADERS["poi"])
        body = "P1,shop,13,22.3,113.3\nP2,shop,12,22.3,113.3\nP3,shop,1,22.3,113.3\n"
        result = parse_dataset("poi", io.StringIO(header + "\n" + body))
        assert result.n_rejected == 1 and len(result.records) == 2

    def test_occupied_flag_strict(self):
        rows = ["T1,2015-07-01T06:00:00,22.3,113.3,30.0,90.0,2",
                "T1,2015-07-01T06:00:10,22.3,113.3,30.0,90.0,0",
                "T1,2015-07-01T06:00:20,22.3,113.3,30.0,90.0,1"]
        result = parse_dataset("taxi", io.StringIO(taxi_csv(rows)))
        assert result.n_rejected == 1


class TestRoundTrip:
    @pytest.mark.parametrize("kind", ["taxi", "bus", "ic", "poi", "weather"])
    def test_write_parse_write_is_stable(self, kind, tmp_path):
        """Serializing parsed records reproduces the file byte for byte."""
        rng = np.random.default_rng(23)
        rows = _random_rows(kind, rng, n=500)
        raw = ",".join(HEADERS[kind]) + "\n" + "".join(",".join(map(str, r)) + "\n" for r in rows)
        first = parse_dataset(kind, io.StringIO(raw))
        assert first.n_rejected == 0
        out1 = io.StringIO()
        write_dataset(kind, first.records, out1)
        second = parse_dataset(kind, io.StringIO(out1.getvalue()))
        assert second.records == first.records
        out2 = io.StringIO()
        write_dataset(kind, second.records, out2)
        assert out2.getvalue() == out1.getvalue()

    def test_big_taxi_round_trip(self):
        rng = np.random.default_rng(29)
        rows = _random_rows("taxi", rng, n=10_000)
        raw = taxi_csv([",".join(map(str, r)) for r in rows])
        parsed = parse_dataset("taxi", io.StringIO(raw))
        assert parsed.n_rejected == 0
        out = io.StringIO()
        write_dataset("taxi", parsed.records, out)
        assert parse_dataset("taxi", io.StringIO(out.getvalue())).records == parsed.records


def _random_rows(kind, rng, n):
    rows = []
    for i in range(n):
        t = epoch_to_iso(T0 + int(rng.integers(0, 86_400)))
        lat = round(22.0 + float(rng.uniform(0, 0.5)), 6)
        lon = round(113.0 + float(rng.uniform(0, 0.5)), 6)
        if kind == "taxi":
            rows.append([f"T{int(rng.integers(0, 20)):03d}", t, lat, lon,
                         round(float(rng.uniform(0, 80)), 1),
                         round(float(rng.uniform(0, 359.9)), 1), int(rng.integers(0, 2))])
        elif kind == "bus":
            rows.append([f"B{int(rng.integers(0, 5)):02d}", t, lat, lon,
                         round(float(rng.uniform(0, 60)), 1), "prev", f"{i % 20:02d}", "R01"])
        elif kind == "ic":
            rows.append(["R%02d" % rng.integers(0, 9), "B01", t, f"C{i:06d}"])
        elif kind == "poi":
            rows.append([f"P{i:05d}", f"poi-{i}", int(rng.integers(1, 13)), lat, lon])
        else:
            day = epoch_day(T0 + i * 86_400)
            hi = round(float(rng.uniform(20, 36)), 1)
            rows.append([day, hi, round(hi - float(rng.uniform(2, 10)), 1),
                         int(rng.integers(1, 21))])
    return rows


class TestExtractTrips:
    def seq(self, pattern, taxi="T1"):
        return [record(taxi=taxi, t=T0 + 10 * i, lon=113.3 + 0.001 * i, occupied=ch == "T")
                for i, ch in enumerate(pattern)]

    def test_no_occupancy_no_trips(self):
        assert extract_trips(self.seq("FFF")) == []

    def test_single_run_endpoints(self):
        trips = extract_trips(self.seq("FTTTF"))
        assert len(trips) == 1
        assert trips[0].o_t == T0 + 10 and trips[0].d_t == T0 + 30

    def test_run_at_end_of_records(self):
        trips = extract_trips(self.seq("FFTT"))
        assert len(trips) == 1 and trips[0].d_t == T0 + 30

    def test_length_one_runs_discarded(self):
        assert extract_trips(self.seq("FTF")) == []
        assert extract_trips(self.seq("TFTFT")) == []

    def test_matches_run_length_oracle(self):
        """Trip count equals the number of T-runs of length >= 2."""
        rng = np.random.default_rng(31)
        for _ in range(200):
            pattern = "".join(rng.choice(["T", "F"], size=rng.integers(1, 40)))
            runs = [len(r) for r in pattern.replace("F", " ").split() if r]
            expected = sum(1 for r in runs if r >= 2)
            assert len(extract_trips(self.seq(pattern))) == expected

    def test_trips_ordered_and_disjoint(self):
        rng = np.random.default_rng(37)
        pattern = "".join(rng.choice(["T", "F"], size=200))
        trips = extract_trips(self.seq(pattern))
        for a, b in zip(trips[:-1], trips[1:]):
            assert a.d_t < b.o_t
        for tr in trips:
            assert tr.o_t < tr.d_t

    def test_all_trips_sums_per_vehicle(self):
        recs = self.seq("FTTF", taxi="T1") + self.seq("TTFTT", taxi="T2")
        assert len(extract_all_trips(recs)) == 3


class TestTrajectories:
    def test_grouping_preserves_order(self):
        recs = [record(taxi="T1", t=T0), record(taxi="T1", t=T0 + 10),
                record(taxi="T2", t=T0 + 5)]
        groups = group_trajectories(recs)
        assert [g[0].taxi_id for g in groups] == ["T1", "T2"]
        trajs = to_trajectories(recs)
        assert [tr.vehicle_id for tr in trajs] == ["T1", "T2"]
        assert list(trajs[0].t) == [T0, T0 + 10]
