"""Top-down transportation carbon-emission accounting.

Total emission is the double sum over vehicle types and fuel types of

    coefficient (kg CO2 per litre)
    * vehicle count
    * mileage per vehicle (km)
    * fuel intensity (litres per km).

The count-times-mileage product is therefore the class's total mileage;
:func:`grid_emission_label` feeds the per-vehicle mean mileage so that
summing labels over all grid cells reproduces the whole-city total.

Reference constants for a conventional gasoline bus: 2.73 kg CO2 per litre
and 0.38 L/km.  An electric bus passing through an area cuts the local
emission peak by 0.90 kg per km driven; the peak-cut figure is not the
product of the two bus constants (about 1.04 kg/km) and both are exposed
as named constants.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .errors import FormatError, InvalidInputError
from .features import WindowSet
from .geo import GridIndex, haversine_km, locate_cells
from .ingest import Trajectory

GASOLINE_BUS_KG_PER_L = 2.73
GASOLINE_BUS_L_PER_KM = 0.38
ELECTRIC_BUS_PEAK_CUT_KG_PER_KM = 0.90
DEFAULT_TAXI_L_PER_KM = 0.08

FuelKey = tuple[str, str]  # (vehicle_type, fuel_type)

COEFFICIENTS_HEADER = ["vehicle_type", "fuel_type", "k_kg_per_l", "e_l_per_km"]


@dataclass(frozen=True)
class EmissionCoefficients:
    """kg-CO2-per-litre and litres-per-km factors keyed by (vehicle, fuel)."""

    k_kg_per_l: dict[FuelKey, float]
    e_l_per_km: dict[FuelKey, float]

    def __post_init__(self) -> None:
        for name, table in (("k", self.k_kg_per_l), ("e", self.e_l_per_km)):
            for key, v in table.items():
                if v < 0 or not np.isfinite(v):
                    raise InvalidInputError(f"{name}[{key}] must be >= 0, got {v}")


@dataclass(frozen=True)
class MileageTable:
    """Vehicle counts and per-vehicle mileage keyed by (vehicle, fuel)."""

    n_vehicles: dict[FuelKey, float]
    l_km: dict[FuelKey, float]

    def __post_init__(self) -> None:
        for name, table in (("n", self.n_vehicles), ("l", self.l_km)):
            for key, v in table.items():
                if v < 0 or not np.isfinite(v):
                    raise InvalidInputError(f"{name}[{key}] must be >= 0, got {v}")


def default_coefficients() -> EmissionCoefficients:
    """Gasoline bus and taxi rows used by the synthetic city."""
    return EmissionCoefficients(
        k_kg_per_l={
            ("bus", "gasoline"): GASOLINE_BUS_KG_PER_L,
            ("taxi", "gasoline"): GASOLINE_BUS_KG_PER_L,
        },
        e_l_per_km={
            ("bus", "gasoline"): GASOLINE_BUS_L_PER_KM,
            ("taxi", "gasoline"): DEFAULT_TAXI_L_PER_KM,
        },
    )


def load_coefficients(source) -> EmissionCoefficients:
    """Read a coefficients CSV (vehicle_type,fuel_type,k_kg_per_l,e_l_per_km)."""
    if hasattr(source, "read"):
        rows = list(csv.reader(source))
    else:
        with open(source, "r", encoding="utf-8", newline="") as fh:
            rows = list(csv.reader(fh))
    if not rows or [h.strip() for h in rows[0]] != COEFFICIENTS_HEADER:
        raise FormatError(f"coefficients file needs header {COEFFICIENTS_HEADER}")
    k: dict[FuelKey, float] = {}
    e: dict[FuelKey, float] = {}
    for row in rows[1:]:
        if not row:
            continue
        if len(row) != 4:
            raise FormatError(f"coefficients row has {len(row)} fields: {row!r}")
        key = (row[0], row[1])
        k[key] = float(row[2])
        e[key] = float(row[3])
    return EmissionCoefficients(k_kg_per_l=k, e_l_per_km=e)


def write_coefficients(coeffs: EmissionCoefficients, target) -> None:
    def _write(fh):
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(COEFFICIENTS_HEADER)
        for key in sorted(coeffs.k_kg_per_l):
            writer.writerow([key[0], key[1],
                             repr(coeffs.k_kg_per_l[key]), repr(coeffs.e_l_per_km[key])])

    if hasattr(target, "write"):
        _write(target)
    else:
        with open(target, "w", encoding="utf-8", newline="") as fh:
            _write(fh)


def top_down(coeffs: EmissionCoefficients, mileage: MileageTable) -> float:
    """Total kg CO2 over every (vehicle, fuel) class in the mileage table.

    Raises:
        InvalidInputError: A mileage key has no matching coefficients.
    """
    total = 0.0
    for key, n in mileage.n_vehicles.items():
        if key not in coeffs.k_kg_per_l or key not in coeffs.e_l_per_km:
            raise InvalidInputError(f"no coefficients for {key}")
        total += coeffs.k_kg_per_l[key] * n * mileage.l_km.get(key, 0.0) * coeffs.e_l_per_km[key]
    return total


def peak_reduction(l_km: float) -> float:
    """Peak-emission cut (kg CO2) from an electric bus driving ``l_km``."""
    if l_km < 0:
        raise InvalidInputError(f"mileage must be >= 0, got {l_km}")
    return ELECTRIC_BUS_PEAK_CUT_KG_PER_KM * l_km


# ---------------------------------------------------------------------------
# per-cell mileage and labels
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CellMileage:
    """Distinct-vehicle counts and total km per (cell, window)."""

    n_vehicles: np.ndarray   # (rows*cols, W) int
    total_km: np.ndarray     # (rows*cols, W) float


def grid_window_mileage(
    trajectories: list[Trajectory], index: GridIndex, windows: WindowSet
) -> CellMileage:
    """Haversine mileage per grid cell and window.

    Each trajectory segment whose endpoints share a window is assigned to
    the cell containing its spatial midpoint; segments with midpoints
    outside the grid are dropped.  This assignment conserves the summed
    path length across cells.
    """
    n_cells = index.rows * index.cols
    n_win = len(windows)
    total = np.zeros(n_cells * n_win)
    veh_count = np.zeros((n_cells, n_win), dtype=np.int64)
    for traj in trajectories:
        if len(traj) < 2:
            continue
        wid = windows.id_of(traj.t)
        pair = (wid[:-1] == wid[1:]) & (wid[:-1] >= 0)
        if not pair.any():
            continue
        mid_lat = (traj.lat[:-1] + traj.lat[1:]) / 2.0
        mid_lon = (traj.lon[:-1] + traj.lon[1:]) / 2.0
        rows, cols, inside = locate_cells(index, mid_lat, mid_lon)
        sel = pair & inside
        if not sel.any():
            continue
        d = haversine_km(traj.lat[:-1], traj.lon[:-1], traj.lat[1:], traj.lon[1:])
        keys = (rows * index.cols + cols)[sel] * n_win + wid[:-1][sel]
        total += np.bincount(keys, weights=d[sel], minlength=n_cells * n_win)
        occupied = np.unique(keys)
        veh_count.reshape(-1)[occupied] += 1
    return CellMileage(n_vehicles=veh_count, total_km=total.reshape(n_cells, n_win))


def cell_mileage_table(n_vehicles: int, total_km: float,
                       key: FuelKey = ("taxi", "gasoline")) -> MileageTable:
    """Mileage table for one cell: count plus per-vehicle mean mileage."""
    n = int(n_vehicles)
    mean_km = total_km / n if n > 0 else 0.0
    return MileageTable(n_vehicles={key: float(n)}, l_km={key: mean_km})


def grid_emission_label(
    trajectories: list[Trajectory],
    cell: tuple[int, int],
    index: GridIndex,
    window,
    coeffs: EmissionCoefficients,
    key: FuelKey = ("taxi", "gasoline"),
) -> float:
    """Top-down kg CO2 attributed to one grid cell over one window."""
    start, end = window
    windows = WindowSet(starts=np.array([float(start)]), length_s=float(end) - float(start))
    mileage = grid_window_mileage(trajectories, index, windows)
    cid = cell[0] * index.cols + cell[1]
    table = cell_mileage_table(mileage.n_vehicles[cid, 0], mileage.total_km[cid, 0], key)
    return top_down(coeffs, table)


def emission_labels_from_mileage(
    mileage: CellMileage, coeffs: EmissionCoefficients,
    key: FuelKey = ("taxi", "gasoline"),
) -> np.ndarray:
    """kg CO2 per (cell, window) from precomputed mileage; vectorized."""
    factor = coeffs.k_kg_per_l[key] * coeffs.e_l_per_km[key]
    return factor * mileage.total_km
