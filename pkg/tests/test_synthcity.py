"""Synthetic-city generator: determinism, parseability, ground-truth fidelity."""

import filecmp

import numpy as np
import pytest

from routecast.emission import grid_window_mileage, load_coefficients
from routecast.errors import ConfigError
from routecast.extract import label_window_set
from routecast.features import demand_label
from routecast.ingest import parse_dataset, to_trajectories
from routecast.synthcity import (
    DEMAND_TRUTH_KIND,
    MILEAGE_TRUTH_KIND,
    CityModel,
    generate,
    read_truth,
)

SMALL = CityModel(seed=11, n_routes=4, stations_per_route=16, n_taxis=24, n_days=6,
                  grid_rows=4, grid_cols=4, hours=(8, 12, 18))


@pytest.fixture(scope="module")
def small_city(tmp_path_factory):
    out = tmp_path_factory.mktemp("city")
    return generate(SMALL, out)


class TestDeterminism:
    def test_same_seed_byte_identical(self, tmp_path, small_city):
        again = generate(SMALL, tmp_path / "again")
        for kind, path in small_city.files.items():
            assert filecmp.cmp(path, again.files[kind], shallow=False), kind
        assert filecmp.cmp(small_city.truth_path, again.truth_path, shallow=False)

    def test_different_seed_differs(self, tmp_path, small_city):
        other = generate(CityModel(seed=12, n_routes=4, stations_per_route=16,
                                   n_taxis=24, n_days=6, grid_rows=4, grid_cols=4,
                                   hours=(8, 12, 18)), tmp_path / "other")
        assert not filecmp.cmp(small_city.files["taxi"], other.files["taxi"], shallow=False)


class TestParseability:
    @pytest.mark.parametrize("kind", ["taxi", "bus", "ic", "poi", "weather"])
    def test_zero_rejections(self, small_city, kind):
        result = parse_dataset(kind, small_city.files[kind])
        assert result.n_rejected == 0
        assert len(result.records) > 0

    def test_weather_covers_every_day(self, small_city):
        weather = parse_dataset("weather", small_city.files["weather"]).records
        assert [w.date for w in weather] == SMALL.day_list()

    def test_bus_file_defines_all_stations(self, small_city):
        bus = parse_dataset("bus", small_city.files["bus"]).records
        stops = {(r.route_name, r.current_stop) for r in bus}
        assert len(stops) == SMALL.n_routes * SMALL.stations_per_route


class TestGroundTruth:
    def test_demand_truth_matches_ic_file(self, small_city):
        """Sidecar counts equal the trip-demand evaluation on the IC file."""
        ic = parse_dataset("ic", small_city.files["ic"]).records
        truth = read_truth(small_city.truth_path)
        demand_rows = [(rid, ws, v) for (k, rid, ws), v in truth.items()
                       if k == DEMAND_TRUTH_KIND]
        assert len(demand_rows) == SMALL.n_routes * SMALL.n_days * len(SMALL.hours)
        for rid, ws, v in demand_rows:
            label = demand_label(ic, rid, (ws, ws + 3600.0 * SMALL.horizon_hours))
            assert label.raw == int(v), (rid, ws)

    def test_mileage_truth_matches_module_recomputation(self, small_city):
        """Sidecar mileage equals the emission module's re-integration."""
        taxi = parse_dataset("taxi", small_city.files["taxi"]).records
        trajectories = to_trajectories(taxi)
        windows = label_window_set(SMALL.day_list(), SMALL.hours, SMALL.horizon_hours)
        mileage = grid_window_mileage(trajectories, SMALL.grid(), windows)
        truth = read_truth(small_city.truth_path)
        checked = 0
        for (kind, cid, ws), v in truth.items():
            if kind != MILEAGE_TRUTH_KIND:
                continue
            row, col = (int(part) for part in cid.split(":"))
            w = int(np.searchsorted(windows.starts, ws))
            got = mileage.total_km[row * SMALL.grid_cols + col, w]
            assert got == pytest.approx(v, rel=1e-3, abs=1e-9), (cid, ws)
            checked += 1
        assert checked == SMALL.grid_rows * SMALL.grid_cols * SMALL.n_days * len(SMALL.hours)

    def test_coefficients_file_loadable(self, small_city):
        coeffs = load_coefficients(small_city.coefficients_path)
        assert ("taxi", "gasoline") in coeffs.k_kg_per_l


class TestModelValidation:
    def test_zero_routes_rejected(self):
        with pytest.raises(ConfigError):
            CityModel(n_routes=0)

    def test_overlapping_windows_rejected(self):
        with pytest.raises(ConfigError):
            CityModel(hours=(8, 9), horizon_hours=2)

    def test_windows_must_fit_day(self):
        with pytest.raises(ConfigError):
            CityModel(hours=(0,), span_hours=1)
        with pytest.raises(ConfigError):
            CityModel(hours=(23,), horizon_hours=2)
