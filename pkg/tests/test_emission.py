"""Top-down emission arithmetic, per-cell mileage, and conservation."""

import io

import numpy as np
import pytest

from routecast.emission import (
    EmissionCoefficients,
    MileageTable,
    cell_mileage_table,
    default_coefficients,
    emission_labels_from_mileage,
    grid_emission_label,
    grid_window_mileage,
    load_coefficients,
    peak_reduction,
    top_down,
    write_coefficients,
)
from routecast.errors import InvalidInputError
from routecast.features import WindowSet
from routecast.geo import KM_PER_DEG_LAT, GeoPoint, GridIndex, haversine_km, km_per_deg_lon
from routecast.ingest import Trajectory

LAT0, LON0 = 22.25, 113.25
T0 = 1_435_708_800.0
BUS = ("bus", "gasoline")
TAXI = ("taxi", "gasoline")


def coeffs(k=2.73, e=0.38, key=BUS):
    return EmissionCoefficients(k_kg_per_l={key: k}, e_l_per_km={key: e})


class TestTopDown:
    def test_empty_table(self):
        table = MileageTable(n_vehicles={}, l_km={})
        assert top_down(coeffs(), table) == 0.0

    def test_gasoline_bus_reference(self):
        """One bus over 100 km at 0.38 L/km and 2.73 kg/L emits 103.74 kg."""
        table = MileageTable(n_vehicles={BUS: 1}, l_km={BUS: 100.0})
        assert top_down(coeffs(), table) == pytest.approx(103.74, rel=1e-12)

    def test_matches_double_loop(self):
        rng = np.random.default_rng(5)
        for _ in range(100):
            keys = [(f"v{i}", f"f{j}") for i in range(3) for j in range(2)]
            k = {key: float(rng.uniform(0, 5)) for key in keys}
            e = {key: float(rng.uniform(0, 1)) for key in keys}
            n = {key: float(rng.integers(0, 50)) for key in keys}
            l = {key: float(rng.uniform(0, 300)) for key in keys}
            expected = 0.0
            for key in keys:
                expected += k[key] * n[key] * l[key] * e[key]
            got = top_down(EmissionCoefficients(k, e), MileageTable(n, l))
            assert got == pytest.approx(expected, rel=1e-12)

    def test_linearity(self):
        table = MileageTable(n_vehicles={BUS: 2}, l_km={BUS: 50.0})
        base = top_down(coeffs(), table)
        doubled_n = MileageTable(n_vehicles={BUS: 4}, l_km={BUS: 50.0})
        doubled_l = MileageTable(n_vehicles={BUS: 2}, l_km={BUS: 100.0})
        assert top_down(coeffs(), doubled_n) == pytest.approx(2 * base)
        assert top_down(coeffs(), doubled_l) == pytest.approx(2 * base)
        assert top_down(coeffs(k=5.46), table) == pytest.approx(2 * base)
        assert top_down(coeffs(e=0.76), table) == pytest.approx(2 * base)

    def test_negative_entries_rejected(self):
        with pytest.raises(InvalidInputError):
            MileageTable(n_vehicles={BUS: -1}, l_km={BUS: 1.0})
        with pytest.raises(InvalidInputError):
            EmissionCoefficients(k_kg_per_l={BUS: -0.1}, e_l_per_km={BUS: 0.38})

    def test_missing_coefficients_rejected(self):
        table = MileageTable(n_vehicles={TAXI: 1}, l_km={TAXI: 10.0})
        with pytest.raises(InvalidInputError):
            top_down(coeffs(key=BUS), table)


class TestPeakReduction:
    def test_values(self):
        assert peak_reduction(0.0) == 0.0
        assert peak_reduction(10.0) == pytest.approx(9.0)
        assert peak_reduction(100.0) == pytest.approx(90.0)

    def test_negative_rejected(self):
        with pytest.raises(InvalidInputError):
            peak_reduction(-1.0)


def straight_traj(vehicle, t_offsets, norths, easts, speed=30.0):
    lat = np.array([LAT0 + n / KM_PER_DEG_LAT for n in norths])
    lon = np.array([LON0 + e / km_per_deg_lon(LAT0) for e in easts])
    return Trajectory(vehicle_id=vehicle, t=np.array(t_offsets, float) + T0,
                      lat=lat, lon=lon, speed_kmh=np.full(len(lat), speed))


GRID = GridIndex(origin=GeoPoint(LAT0, LON0), cell_size_km=2.0, rows=4, cols=4)
WINDOW = (T0, T0 + 3600.0)


class TestGridEmission:
    def test_no_trajectories(self):
        assert grid_emission_label([], (0, 0), GRID, WINDOW, default_coefficients()) == 0.0

    def test_ten_km_single_cell(self):
        """10 km inside one cell at 2.73 kg/L and 0.08 L/km is 2.184 kg.

        A north-south zigzag keeps every midpoint inside cell (0, 0) and
        makes the haversine length exact (meridian arcs).
        """
        n_seg = 8
        norths = [0.3 if i % 2 == 0 else 0.3 + 10.0 / n_seg for i in range(n_seg + 1)]
        tr = straight_traj("V1", np.arange(n_seg + 1) * 60.0, norths, [1.0] * (n_seg + 1))
        got = grid_emission_label([tr], (0, 0), GRID, WINDOW, default_coefficients())
        assert got == pytest.approx(2.73 * 10.0 * 0.08, rel=1e-9)

    def test_multi_cell_path_conserves_length(self):
        rng = np.random.default_rng(7)
        t = np.sort(rng.uniform(0, 3500, size=60))
        norths = np.cumsum(rng.uniform(-0.4, 0.6, size=60)) + 2.0
        easts = np.cumsum(rng.uniform(-0.4, 0.6, size=60)) + 2.0
        norths = np.clip(norths, 0.1, 7.9)
        easts = np.clip(easts, 0.1, 7.9)
        tr = straight_traj("V1", t, norths, easts)
        windows = WindowSet(starts=np.array([T0]), length_s=3600.0)
        mileage = grid_window_mileage([tr], GRID, windows)
        total_path = float(haversine_km(tr.lat[:-1], tr.lon[:-1], tr.lat[1:], tr.lon[1:]).sum())
        assert mileage.total_km.sum() == pytest.approx(total_path, rel=1e-9)

    def test_cell_sums_match_whole_city_top_down(self):
        """Conservation: per-cell labels sum to the city-wide figure."""
        rng = np.random.default_rng(11)
        trajs = []
        for v in range(10):
            t = np.sort(rng.uniform(0, 3500, size=30))
            norths = np.clip(np.cumsum(rng.uniform(-0.5, 0.7, size=30)) + 3, 0.1, 7.9)
            easts = np.clip(np.cumsum(rng.uniform(-0.5, 0.7, size=30)) + 3, 0.1, 7.9)
            trajs.append(straight_traj(f"V{v}", t, norths, easts))
        windows = WindowSet(starts=np.array([T0]), length_s=3600.0)
        coefficients = default_coefficients()
        mileage = grid_window_mileage(trajs, GRID, windows)
        labels = emission_labels_from_mileage(mileage, coefficients)
        city_total_km = float(mileage.total_km.sum())
        n_city = len(trajs)
        city_table = cell_mileage_table(n_city, city_total_km)
        assert labels.sum() == pytest.approx(top_down(coefficients, city_table), rel=1e-3)

    def test_label_equals_top_down_of_cell_table(self):
        tr = straight_traj("V1", [0, 300, 600], [0.2, 0.8, 1.4], [0.2, 0.8, 1.4])
        windows = WindowSet(starts=np.array([T0]), length_s=3600.0)
        mileage = grid_window_mileage([tr], GRID, windows)
        coefficients = default_coefficients()
        for cid in range(16):
            cell = (cid // 4, cid % 4)
            table = cell_mileage_table(mileage.n_vehicles[cid, 0], mileage.total_km[cid, 0],
                                       key=TAXI)
            assert grid_emission_label([tr], cell, GRID, WINDOW, coefficients) == \
                pytest.approx(top_down(coefficients, table), rel=1e-12)

    def test_labels_non_negative(self):
        rng = np.random.default_rng(13)
        trajs = [straight_traj(f"V{v}", np.sort(rng.uniform(0, 3000, 10)),
                               rng.uniform(0, 8, 10), rng.uniform(0, 8, 10))
                 for v in range(5)]
        windows = WindowSet(starts=np.array([T0]), length_s=3600.0)
        labels = emission_labels_from_mileage(grid_window_mileage(trajs, GRID, windows),
                                              default_coefficients())
        assert np.all(labels >= 0.0)


class TestCoefficientsFile:
    def test_round_trip(self):
        original = default_coefficients()
        buf = io.StringIO()
        write_coefficients(original, buf)
        loaded = load_coefficients(io.StringIO(buf.getvalue()))
        assert loaded == original

    def test_header_validated(self):
        from routecast.errors import FormatError
        with pytest.raises(FormatError):
            load_coefficients(io.StringIO("a,b\n1,2\n"))
