"""Spatial primitives: city grid partition, affecting regions, route geometry.

All membership tests and cell sizing use an equirectangular local projection
(kilometres per degree of longitude scaled by the cosine of a reference
latitude).  At city scale the error against true geodesics is below 0.1%,
which is negligible next to the 0.5 km affecting regions this package works
with.

Conventions:

- Grid cells are half-open: closed on their south/west edges, open on their
  north/east edges, so every interior point of the covered area belongs to
  exactly one cell.  The outermost north/east edge of the whole grid is
  closed so the covered area is itself a closed box.
- An affecting region is a closed axis-aligned square (its boundary counts
  as inside).
"""

from __future__ import annotations

import math
import zlib
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, InvalidGeometryError

# Mean Earth radius; one degree of latitude in kilometres.
EARTH_RADIUS_KM = 6371.0088
KM_PER_DEG_LAT = math.pi / 180.0 * EARTH_RADIUS_KM

# Absorbs float noise when a box extent divides the cell size exactly.
_CEIL_EPS = 1e-9

CellId = tuple[int, int]


@dataclass(frozen=True, slots=True)
class GeoPoint:
    """A WGS-84 coordinate in decimal degrees."""

    lat: float
    lon: float

    def __post_init__(self) -> None:
        if not (-90.0 <= self.lat <= 90.0) or not (-180.0 <= self.lon <= 180.0):
            raise InvalidGeometryError(
                f"coordinate out of range: lat={self.lat}, lon={self.lon}"
            )


def km_per_deg_lon(lat_deg: float) -> float:
    """Kilometres per degree of longitude at the given latitude."""
    return KM_PER_DEG_LAT * math.cos(math.radians(lat_deg))


def haversine_km(lat1, lon1, lat2, lon2):
    """Great-circle distance in km.  Accepts scalars or numpy arrays."""
    phi1 = np.radians(lat1)
    phi2 = np.radians(lat2)
    dphi = phi2 - phi1
    dlam = np.radians(np.asarray(lon2) - np.asarray(lon1))
    a = np.sin(dphi / 2.0) ** 2 + np.cos(phi1) * np.cos(phi2) * np.sin(dlam / 2.0) ** 2
    return 2.0 * EARTH_RADIUS_KM * np.arcsin(np.sqrt(a))


@dataclass(frozen=True, slots=True)
class GridIndex:
    """Uniform city grid anchored at its south-west corner.

    The local projection of the whole grid is anchored at ``origin``: east
    offsets are scaled by ``cos(origin.lat)``.  ``rows`` counts cells going
    north, ``cols`` going east.  The last row/column may overhang the
    bounding box the grid was built from; cells stay uniform.
    """

    origin: GeoPoint
    cell_size_km: float
    rows: int
    cols: int

    def __post_init__(self) -> None:
        if self.cell_size_km <= 0 or self.rows < 1 or self.cols < 1:
            raise InvalidGeometryError("grid needs positive cell size and extents")

    @property
    def _km_per_deg_lon(self) -> float:
        return km_per_deg_lon(self.origin.lat)

    def offsets_km(self, lat, lon):
        """North/east offsets in km from the grid origin (scalar or array)."""
        dy = (np.asarray(lat, dtype=float) - self.origin.lat) * KM_PER_DEG_LAT
        dx = (np.asarray(lon, dtype=float) - self.origin.lon) * self._km_per_deg_lon
        return dy, dx

    def cell_center(self, cell: CellId) -> GeoPoint:
        row, col = cell
        lat = self.origin.lat + (row + 0.5) * self.cell_size_km / KM_PER_DEG_LAT
        lon = self.origin.lon + (col + 0.5) * self.cell_size_km / self._km_per_deg_lon
        return GeoPoint(lat, lon)

    def all_cells(self) -> list[CellId]:
        return [(r, c) for r in range(self.rows) for c in range(self.cols)]


def partition_city(bbox: tuple[GeoPoint, GeoPoint], cell_size_km: float) -> GridIndex:
    """Partition a bounding box into disjoint uniform square cells.

    Args:
        bbox: Two opposite corners of the box, in either order.
        cell_size_km: Side length of each cell.

    Returns:
        A :class:`GridIndex` with ``rows = ceil(height/cell)`` and
        ``cols = ceil(width/cell)``; the last row/column may overhang the
        box.

    Raises:
        InvalidGeometryError: If the box has zero area or the cell size is
            not positive.
    """
    if cell_size_km <= 0:
        raise InvalidGeometryError(f"cell_size_km must be > 0, got {cell_size_km}")
    a, b = bbox
    lat0, lat1 = min(a.lat, b.lat), max(a.lat, b.lat)
    lon0, lon1 = min(a.lon, b.lon), max(a.lon, b.lon)
    if lat0 == lat1 or lon0 == lon1:
        raise InvalidGeometryError("bounding box has zero area")
    origin = GeoPoint(lat0, lon0)
    height_km = (lat1 - lat0) * KM_PER_DEG_LAT
    width_km = (lon1 - lon0) * km_per_deg_lon(lat0)
    rows = math.ceil(height_km / cell_size_km - _CEIL_EPS)
    cols = math.ceil(width_km / cell_size_km - _CEIL_EPS)
    return GridIndex(origin=origin, cell_size_km=cell_size_km, rows=rows, cols=cols)


def locate_cell(index: GridIndex, p: GeoPoint) -> CellId | None:
    """Cell containing ``p``, or ``None`` when outside the covered area.

    Boundary points belong to the cell on their north/east side (half-open
    cells) except on the outermost north/east edge, which is closed.
    """
    dy, dx = index.offsets_km(p.lat, p.lon)
    row_f = float(dy) / index.cell_size_km
    col_f = float(dx) / index.cell_size_km
    if row_f < 0.0 or col_f < 0.0 or row_f > index.rows or col_f > index.cols:
        return None
    row = min(int(math.floor(row_f)), index.rows - 1)
    col = min(int(math.floor(col_f)), index.cols - 1)
    return (row, col)


def locate_cells(index: GridIndex, lat: np.ndarray, lon: np.ndarray):
    """Vectorized :func:`locate_cell`.

    Returns:
        ``(rows, cols, inside)`` integer arrays plus a boolean mask; row/col
        values are only meaningful where ``inside`` is true.
    """
    dy, dx = index.offsets_km(lat, lon)
    row_f = dy / index.cell_size_km
    col_f = dx / index.cell_size_km
    inside = (row_f >= 0.0) & (col_f >= 0.0) & (row_f <= index.rows) & (col_f <= index.cols)
    rows = np.minimum(np.floor(row_f).astype(np.int64), index.rows - 1)
    cols = np.minimum(np.floor(col_f).astype(np.int64), index.cols - 1)
    return rows, cols, inside


@dataclass(frozen=True, slots=True)
class AffectingRegion:
    """Closed square around a bus station, default side 0.5 km."""

    center: GeoPoint
    side_km: float = 0.5

    def __post_init__(self) -> None:
        if self.side_km <= 0:
            raise InvalidGeometryError("region side must be > 0")

    def bounds_deg(self) -> tuple[float, float, float, float]:
        """(lat_min, lat_max, lon_min, lon_max) of the square."""
        half = self.side_km / 2.0
        dlat = half / KM_PER_DEG_LAT
        dlon = half / km_per_deg_lon(self.center.lat)
        return (
            self.center.lat - dlat,
            self.center.lat + dlat,
            self.center.lon - dlon,
            self.center.lon + dlon,
        )

    def contains_mask(self, lat: np.ndarray, lon: np.ndarray) -> np.ndarray:
        """Vectorized membership; boundary counts as inside."""
        half = self.side_km / 2.0
        dy = np.abs(np.asarray(lat, dtype=float) - self.center.lat) * KM_PER_DEG_LAT
        dx = np.abs(np.asarray(lon, dtype=float) - self.center.lon) * km_per_deg_lon(
            self.center.lat
        )
        return (dy <= half) & (dx <= half)


def region_contains(region: AffectingRegion, p: GeoPoint) -> bool:
    """True iff ``p`` lies inside the region square (boundary inclusive)."""
    return bool(region.contains_mask(p.lat, p.lon))


@dataclass(frozen=True, slots=True)
class BusRoute:
    """An ordered station sequence plus its sampled affecting regions.

    ``regions`` preserves station order along the route.  Routes with at
    least ``regions_per_route`` stations carry exactly that many regions;
    shorter routes use every station.
    """

    route_id: str
    stations: tuple[GeoPoint, ...]
    regions: tuple[AffectingRegion, ...]


def route_seed(seed: int, route_id: str) -> int:
    """Stable per-route seed so region sampling ignores iteration order."""
    return (int(seed) & 0xFFFFFFFF) ^ zlib.crc32(route_id.encode("utf-8"))


def make_route(
    route_id: str,
    stations: list[GeoPoint] | tuple[GeoPoint, ...],
    seed: int,
    regions_per_route: int = 15,
    region_side_km: float = 0.5,
) -> BusRoute:
    """Build a route, sampling its affecting regions without replacement.

    Sampling uses a per-route seed derived from ``seed`` and ``route_id``;
    the chosen stations are then re-sorted into route order.
    """
    if len(stations) < 2:
        raise ConfigError(f"route {route_id} needs at least 2 stations")
    stations = tuple(stations)
    n = len(stations)
    k = min(regions_per_route, n)
    rng = np.random.default_rng(route_seed(seed, route_id))
    picked = np.sort(rng.choice(n, size=k, replace=False))
    regions = tuple(
        AffectingRegion(center=stations[i], side_km=region_side_km) for i in picked
    )
    return BusRoute(route_id=route_id, stations=stations, regions=regions)


def grids_crossed(route: BusRoute, index: GridIndex) -> set[CellId]:
    """Cells touched by a route: station cells plus segment-traversed cells.

    Consecutive stations are joined by straight segments in the projected
    plane; each segment is cut at every grid line it crosses and the cell of
    every piece's midpoint is collected.  A route entirely outside the grid
    yields an empty set.
    """
    if len(route.stations) < 2:
        raise InvalidGeometryError(f"route {route.route_id} has fewer than 2 stations")
    cells: set[CellId] = set()
    for st in route.stations:
        cell = locate_cell(index, st)
        if cell is not None:
            cells.add(cell)
    size = index.cell_size_km
    for a, b in zip(route.stations[:-1], route.stations[1:]):
        ay, ax = index.offsets_km(a.lat, a.lon)
        by, bx = index.offsets_km(b.lat, b.lon)
        r0, c0 = float(ay) / size, float(ax) / size
        r1, c1 = float(by) / size, float(bx) / size
        ts = [0.0, 1.0]
        ts.extend(_axis_crossings(r0, r1))
        ts.extend(_axis_crossings(c0, c1))
        ts = sorted(t for t in ts if 0.0 <= t <= 1.0)
        for t0, t1 in zip(ts[:-1], ts[1:]):
            tm = (t0 + t1) / 2.0
            row_f = r0 + tm * (r1 - r0)
            col_f = c0 + tm * (c1 - c0)
            if 0.0 <= row_f < index.rows and 0.0 <= col_f < index.cols:
                cells.add((int(math.floor(row_f)), int(math.floor(col_f))))
    return cells


def _axis_crossings(v0: float, v1: float) -> list[float]:
    """Parameters t in (0,1) where v0 + t*(v1-v0) crosses an integer."""
    if v1 == v0:
        return []
    lo, hi = min(v0, v1), max(v0, v1)
    out = []
    k = math.floor(lo) + 1
    while k < hi:
        out.append((k - v0) / (v1 - v0))
        k += 1
    return out
