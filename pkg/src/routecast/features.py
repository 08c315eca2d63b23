"""Spatio-temporal feature extraction for routes and grid cells.

Per affecting region (or grid cell) and half-open time window, five mobility
and flow statistics are computed from vehicle trajectories and derived
passenger trips:

- ``N``     distinct vehicles observed in the area (each counted once),
- ``E``     average passing speed: total in-area path length over total
            in-area dwell time, in km/h,
- ``D``     time-weighted standard deviation of recorded point speeds
            about ``E``,
- ``f_in``  trips ending in the area that started outside it,
- ``f_out`` trips starting in the area that ended outside it,

plus eight POI-category counts and a 22-entry meteorological block
(high temperature, low temperature, one-hot condition).

A route vector concatenates the 13 per-region entries of its affecting
regions in route order, then the meteo block: 15*13 + 22 = 217 entries.
A grid-cell vector holds a single 13-entry block plus meteo: 35 entries.

The module exposes both per-area reference operations (clear, direct
transcriptions of the definitions) and a batched window engine used by the
pipeline; a test asserts they agree.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import (
    ConfigError,
    InvalidCategoryError,
    InvalidInputError,
    SelectionError,
    UndefinedCorrelationError,
    UndefinedStatError,
)
from .geo import BusRoute, CellId, GridIndex, haversine_km, locate_cells
from .ingest import (
    N_POI_CATEGORIES,
    N_WEATHER_CONDITIONS,
    PoiRecord,
    Trajectory,
    TripTable,
    WeatherRecord,
    to_trip_table,
)

# Fixed demand-class bin edges; the last bin is open-ended.
DEFAULT_BIN_EDGES = (0, 60, 120, 180, 240, 360, 480, 720)
N_DEMAND_CLASSES = 8

N_SELECTED_CATEGORIES = 8
REGION_BLOCK = 5 + N_SELECTED_CATEGORIES            # N, E, D, f_in, f_out, 8 POI counts
METEO_BLOCK = 2 + N_WEATHER_CONDITIONS              # f_h, f_o, one-hot condition
REGIONS_PER_ROUTE = 15
ROUTE_DIM = REGIONS_PER_ROUTE * REGION_BLOCK + METEO_BLOCK
GRID_DIM = REGION_BLOCK + METEO_BLOCK

Window = tuple[float, float]


def in_window(t, window: Window):
    """Half-open membership test ``start <= t < end`` (scalar or array)."""
    start, end = window
    t = np.asarray(t, dtype=float)
    return (t >= start) & (t < end)


@dataclass(frozen=True)
class CellArea:
    """Adapter giving a grid cell the same membership API as a region."""

    index: GridIndex
    cell: CellId

    def contains_mask(self, lat, lon) -> np.ndarray:
        rows, cols, inside = locate_cells(self.index, np.asarray(lat, dtype=float),
                                          np.asarray(lon, dtype=float))
        return inside & (rows == self.cell[0]) & (cols == self.cell[1])


# ---------------------------------------------------------------------------
# per-area reference operations
# ---------------------------------------------------------------------------

def traffic_volume(trajectories: list[Trajectory], area, window: Window) -> int:
    """Number of distinct vehicles with at least one sample in the area
    during the window; repeated passes of one vehicle count once."""
    count = 0
    for traj in trajectories:
        m = area.contains_mask(traj.lat, traj.lon) & in_window(traj.t, window)
        if m.any():
            count += 1
    return count


def passing_speed_stats(
    trajectories: list[Trajectory], area, window: Window
) -> tuple[float, float]:
    """Average passing speed ``E`` (km/h) and its time-weighted spread ``D``.

    Maximal runs of consecutive samples inside the area and window are
    extracted per vehicle.  ``E`` divides the summed run path lengths
    (haversine over consecutive samples) by the summed time gaps; ``D`` is
    the square root of the time-weighted mean of ``(E - v_i)^2`` where
    ``v_i`` is the recorded speed at the sample opening each gap.  Runs of a
    single sample contribute nothing.

    Raises:
        UndefinedStatError: No run has positive dwell time.
    """
    dist_sum = 0.0
    dt_sum = 0.0
    v_dt = 0.0
    v2_dt = 0.0
    for traj in trajectories:
        if len(traj) < 2:
            continue
        m = area.contains_mask(traj.lat, traj.lon) & in_window(traj.t, window)
        pair = m[:-1] & m[1:]
        if not pair.any():
            continue
        d = haversine_km(traj.lat[:-1], traj.lon[:-1], traj.lat[1:], traj.lon[1:])
        dt = np.abs(np.diff(traj.t))
        v = traj.speed_kmh[:-1]
        dist_sum += float(d[pair].sum())
        dt_sum += float(dt[pair].sum())
        v_dt += float((v * dt)[pair].sum())
        v2_dt += float((v * v * dt)[pair].sum())
    return _speed_stats_from_moments(dist_sum, dt_sum, v_dt, v2_dt)


def _speed_stats_from_moments(
    dist_sum: float, dt_sum: float, v_dt: float, v2_dt: float
) -> tuple[float, float]:
    if dt_sum <= 0.0:
        raise UndefinedStatError("zero total dwell time in area")
    avg = dist_sum / (dt_sum / 3600.0)
    var = v2_dt / dt_sum - 2.0 * avg * (v_dt / dt_sum) + avg * avg
    return avg, float(np.sqrt(max(var, 0.0)))


def flow_in_out(trips, area, window: Window) -> tuple[int, int]:
    """Entering and leaving passenger flows of an area during a window.

    A trip enters when its origin lies outside and destination inside the
    area; it leaves in the symmetric case.  Both endpoints' timestamps must
    fall in the window.  Trips fully inside the area count in neither flow.
    """
    table = trips if isinstance(trips, TripTable) else to_trip_table(list(trips))
    if len(table) == 0:
        return 0, 0
    t_ok = in_window(table.o_t, window) & in_window(table.d_t, window)
    o_in = area.contains_mask(table.o_lat, table.o_lon)
    d_in = area.contains_mask(table.d_lat, table.d_lon)
    f_in = int(np.count_nonzero(t_ok & ~o_in & d_in))
    f_out = int(np.count_nonzero(t_ok & o_in & ~d_in))
    return f_in, f_out


@dataclass(frozen=True)
class PoiTable:
    """Columnar POI collection."""

    category: np.ndarray
    lat: np.ndarray
    lon: np.ndarray

    def __len__(self) -> int:
        return len(self.category)


def to_poi_table(pois: list[PoiRecord]) -> PoiTable:
    return PoiTable(
        category=np.array([p.category for p in pois], dtype=np.int64),
        lat=np.array([p.lat for p in pois], dtype=np.float64),
        lon=np.array([p.lon for p in pois], dtype=np.float64),
    )


def poi_counts(pois, area, categories) -> np.ndarray:
    """POI counts inside the area, one entry per selected category in order."""
    if len(categories) != N_SELECTED_CATEGORIES:
        raise InvalidInputError(
            f"expected {N_SELECTED_CATEGORIES} categories, got {len(categories)}"
        )
    table = pois if isinstance(pois, PoiTable) else to_poi_table(list(pois))
    out = np.zeros(len(categories), dtype=np.int64)
    if len(table) == 0:
        return out
    inside = area.contains_mask(table.lat, table.lon)
    for i, cat in enumerate(categories):
        out[i] = int(np.count_nonzero(inside & (table.category == cat)))
    return out


def pearson_cc(x, y) -> float:
    """Pearson correlation coefficient (population form), in [-1, 1].

    Raises:
        InvalidInputError: Length mismatch or fewer than two points.
        UndefinedCorrelationError: Either argument has zero variance.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1 or len(x) < 2:
        raise InvalidInputError("pearson_cc needs two equal-length sequences (n >= 2)")
    xm = x - x.mean()
    ym = y - y.mean()
    sx = np.sqrt(np.mean(xm * xm))
    sy = np.sqrt(np.mean(ym * ym))
    if sx == 0.0 or sy == 0.0:
        raise UndefinedCorrelationError("zero variance")
    rho = float(np.mean(xm * ym) / (sx * sy))
    return max(-1.0, min(1.0, rho))


def select_top_categories(pois, regions, demand) -> list[int]:
    """Pick the 8 POI categories most correlated with per-region trip demand.

    For each of the 12 categories the per-region POI counts are correlated
    with the per-region demand; categories are ranked by descending absolute
    correlation (undefined correlations rank last, then lower category index
    wins ties).

    Args:
        pois: POI records or a :class:`PoiTable`.
        regions: Areas whose counts and demand are compared.
        demand: Per-region demand values, aligned with ``regions``.

    Raises:
        SelectionError: Every category's correlation is undefined.
    """
    demand = np.asarray(demand, dtype=np.float64)
    if len(regions) != len(demand) or len(regions) < 2:
        raise InvalidInputError("need demand for each of >= 2 regions")
    table = pois if isinstance(pois, PoiTable) else to_poi_table(list(pois))
    counts = np.zeros((N_POI_CATEGORIES, len(regions)), dtype=np.float64)
    for j, region in enumerate(regions):
        inside = region.contains_mask(table.lat, table.lon)
        for cat in range(1, N_POI_CATEGORIES + 1):
            counts[cat - 1, j] = np.count_nonzero(inside & (table.category == cat))
    scored: list[tuple[float, int]] = []
    n_defined = 0
    for cat in range(1, N_POI_CATEGORIES + 1):
        try:
            rho = pearson_cc(counts[cat - 1], demand)
            n_defined += 1
        except UndefinedCorrelationError:
            rho = -np.inf  # ranks after every defined correlation
        scored.append((abs(rho) if np.isfinite(rho) else -np.inf, cat))
    if n_defined == 0:
        raise SelectionError("no POI category has a defined demand correlation")
    scored.sort(key=lambda sc: (-sc[0], sc[1]))
    return [cat for _, cat in scored[:N_SELECTED_CATEGORIES]]


def meteo_block(w: WeatherRecord) -> np.ndarray:
    """[high temp, low temp, one-hot(condition)] as a 22-entry vector."""
    if not (1 <= w.condition <= N_WEATHER_CONDITIONS):
        raise InvalidCategoryError(f"weather condition out of range: {w.condition}")
    out = np.zeros(METEO_BLOCK, dtype=np.float64)
    out[0] = w.temp_high_c
    out[1] = w.temp_low_c
    out[2 + w.condition - 1] = 1.0
    return out


# ---------------------------------------------------------------------------
# assembled vectors and labels
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RegionFeatures:
    """The 13 per-area entries, plus a flag for an undefined speed stat."""

    n_vehicles: int
    avg_speed: float
    speed_std: float
    flow_in: int
    flow_out: int
    poi_counts: np.ndarray
    speed_undefined: bool = False

    def vector(self) -> np.ndarray:
        return np.concatenate((
            [float(self.n_vehicles), self.avg_speed, self.speed_std,
             float(self.flow_in), float(self.flow_out)],
            self.poi_counts.astype(np.float64),
        ))


def region_features(trajectories, trips, pois, area, categories, window: Window) -> RegionFeatures:
    """All mobility/flow/POI entries of one area over one window.

    An undefined speed statistic (no dwell time) is encoded as zeros with
    ``speed_undefined`` set, keeping the vector layout fixed.
    """
    n = traffic_volume(trajectories, area, window)
    undefined = False
    try:
        avg, std = passing_speed_stats(trajectories, area, window)
    except UndefinedStatError:
        avg, std, undefined = 0.0, 0.0, True
    f_in, f_out = flow_in_out(trips, area, window)
    counts = poi_counts(pois, area, categories)
    return RegionFeatures(
        n_vehicles=n, avg_speed=avg, speed_std=std,
        flow_in=f_in, flow_out=f_out, poi_counts=counts,
        speed_undefined=undefined,
    )


def route_features(
    route: BusRoute,
    trajectories,
    trips,
    pois,
    weather: WeatherRecord,
    categories,
    window: Window,
) -> np.ndarray:
    """Fixed-layout 217-entry route vector for one feature window.

    Concatenates the 13-entry block of each affecting region in route order,
    then the meteo block.  Routes carrying fewer than 15 regions (short
    routes) are padded with zero blocks to preserve the layout.
    """
    blocks = []
    for region in route.regions[:REGIONS_PER_ROUTE]:
        blocks.append(
            region_features(trajectories, trips, pois, region, categories, window).vector()
        )
    for _ in range(REGIONS_PER_ROUTE - len(blocks)):
        blocks.append(np.zeros(REGION_BLOCK, dtype=np.float64))
    blocks.append(meteo_block(weather))
    return np.concatenate(blocks)


def grid_features(
    cell: CellId,
    index: GridIndex,
    trajectories,
    trips,
    pois,
    weather: WeatherRecord,
    categories,
    window: Window,
) -> np.ndarray:
    """Fixed-layout 35-entry grid-cell vector for one feature window."""
    area = CellArea(index=index, cell=cell)
    block = region_features(trajectories, trips, pois, area, categories, window).vector()
    return np.concatenate((block, meteo_block(weather)))


@dataclass(frozen=True)
class DemandLabel:
    """Raw trip count for a route/window and its demand class."""

    raw: int
    cls: int


def demand_class(count: int, edges=DEFAULT_BIN_EDGES) -> int:
    """Demand class of a trip count under half-open bins ``[e_i, e_{i+1})``.

    The last bin is open-ended, so a count equal to the final edge maps to
    the top class.
    """
    if count < 0:
        raise InvalidInputError(f"negative trip count: {count}")
    return int(np.searchsorted(np.asarray(edges), count, side="right")) - 1


def demand_label(ic_records, route_id: str, window: Window, edges=DEFAULT_BIN_EDGES) -> DemandLabel:
    """Trip demand of a route over a window: fare-record count plus class."""
    q = sum(1 for r in ic_records if r.route_id == route_id and window[0] <= r.t < window[1])
    return DemandLabel(raw=q, cls=demand_class(q, edges))


# ---------------------------------------------------------------------------
# batched window engine
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class WindowSet:
    """Sorted, equal-length, non-overlapping half-open windows."""

    starts: np.ndarray
    length_s: float

    def __post_init__(self) -> None:
        starts = np.asarray(self.starts, dtype=np.float64)
        object.__setattr__(self, "starts", starts)
        if self.length_s <= 0:
            raise ConfigError("window length must be positive")
        if len(starts) == 0:
            raise ConfigError("empty window set")
        gaps = np.diff(starts)
        if np.any(gaps < self.length_s):
            raise ConfigError("windows must be sorted and non-overlapping")

    def __len__(self) -> int:
        return len(self.starts)

    def window(self, i: int) -> Window:
        return (float(self.starts[i]), float(self.starts[i] + self.length_s))

    def id_of(self, t) -> np.ndarray:
        """Window index of each timestamp, -1 outside every window."""
        t = np.asarray(t, dtype=np.float64)
        idx = np.searchsorted(self.starts, t, side="right") - 1
        safe = np.clip(idx, 0, len(self.starts) - 1)
        ok = (idx >= 0) & (t < self.starts[safe] + self.length_s)
        return np.where(ok, idx, -1)


@dataclass
class MobilityAggregate:
    """Per (area, window) mobility statistics from one engine pass."""

    n_vehicles: np.ndarray       # (A, W) int
    avg_speed: np.ndarray        # (A, W) float, 0 where undefined
    speed_std: np.ndarray        # (A, W) float, 0 where undefined
    speed_defined: np.ndarray    # (A, W) bool


def region_window_mobility(
    trajectories: list[Trajectory], areas, windows: WindowSet
) -> MobilityAggregate:
    """One pass over all trajectories accumulating per (area, window) moments."""
    n_areas, n_win = len(areas), len(windows)
    n_veh = np.zeros((n_areas, n_win), dtype=np.int64)
    dist = np.zeros((n_areas, n_win))
    dwell = np.zeros((n_areas, n_win))
    v_dt = np.zeros((n_areas, n_win))
    v2_dt = np.zeros((n_areas, n_win))
    for traj in trajectories:
        wid = windows.id_of(traj.t)
        observed = wid >= 0
        if not observed.any():
            continue
        if len(traj) >= 2:
            d = haversine_km(traj.lat[:-1], traj.lon[:-1], traj.lat[1:], traj.lon[1:])
            dt = np.abs(np.diff(traj.t))
            v = traj.speed_kmh[:-1]
            pair_base = (wid[:-1] == wid[1:]) & (wid[:-1] >= 0)
        else:
            pair_base = None
        for a, area in enumerate(areas):
            m = area.contains_mask(traj.lat, traj.lon)
            sel = m & observed
            if sel.any():
                n_veh[a, np.unique(wid[sel])] += 1
            if pair_base is None:
                continue
            pair = pair_base & m[:-1] & m[1:]
            if not pair.any():
                continue
            idx = wid[:-1][pair]
            dist[a] += np.bincount(idx, weights=d[pair], minlength=n_win)
            dwell[a] += np.bincount(idx, weights=dt[pair], minlength=n_win)
            v_dt[a] += np.bincount(idx, weights=(v * dt)[pair], minlength=n_win)
            v2_dt[a] += np.bincount(idx, weights=(v * v * dt)[pair], minlength=n_win)
    return _moments_to_aggregate(n_veh, dist, dwell, v_dt, v2_dt)


def _moments_to_aggregate(n_veh, dist, dwell, v_dt, v2_dt) -> MobilityAggregate:
    defined = dwell > 0.0
    safe = np.where(defined, dwell, 1.0)
    avg = np.where(defined, dist / (safe / 3600.0), 0.0)
    var = v2_dt / safe - 2.0 * avg * (v_dt / safe) + avg * avg
    std = np.where(defined, np.sqrt(np.maximum(var, 0.0)), 0.0)
    return MobilityAggregate(
        n_vehicles=n_veh, avg_speed=avg, speed_std=std, speed_defined=defined
    )


def grid_window_mobility(
    trajectories: list[Trajectory], index: GridIndex, windows: WindowSet
) -> MobilityAggregate:
    """Grid-cell variant of the engine; cells indexed row-major."""
    n_cells = index.rows * index.cols
    n_win = len(windows)
    n_veh = np.zeros((n_cells, n_win), dtype=np.int64)
    dist = np.zeros((n_cells, n_win))
    dwell = np.zeros((n_cells, n_win))
    v_dt = np.zeros((n_cells, n_win))
    v2_dt = np.zeros((n_cells, n_win))
    for traj in trajectories:
        wid = windows.id_of(traj.t)
        rows, cols, inside = locate_cells(index, traj.lat, traj.lon)
        cid = rows * index.cols + cols
        sel = inside & (wid >= 0)
        if sel.any():
            keys = np.unique(cid[sel] * n_win + wid[sel])
            n_veh.reshape(-1)[keys] += 1
        if len(traj) < 2:
            continue
        pair = (
            sel[:-1] & sel[1:] & (cid[:-1] == cid[1:]) & (wid[:-1] == wid[1:])
        )
        if not pair.any():
            continue
        d = haversine_km(traj.lat[:-1], traj.lon[:-1], traj.lat[1:], traj.lon[1:])
        dt = np.abs(np.diff(traj.t))
        v = traj.speed_kmh[:-1]
        keys = (cid[:-1] * n_win + wid[:-1])[pair]
        size = n_cells * n_win
        flat = dist.reshape(-1)
        flat += np.bincount(keys, weights=d[pair], minlength=size)
        flat = dwell.reshape(-1)
        flat += np.bincount(keys, weights=dt[pair], minlength=size)
        flat = v_dt.reshape(-1)
        flat += np.bincount(keys, weights=(v * dt)[pair], minlength=size)
        flat = v2_dt.reshape(-1)
        flat += np.bincount(keys, weights=(v * v * dt)[pair], minlength=size)
    return _moments_to_aggregate(n_veh, dist, dwell, v_dt, v2_dt)


def area_window_flows(trips: TripTable, areas, windows: WindowSet):
    """Per (area, window) entering/leaving flows, one vectorized pass."""
    n_areas, n_win = len(areas), len(windows)
    f_in = np.zeros((n_areas, n_win), dtype=np.int64)
    f_out = np.zeros((n_areas, n_win), dtype=np.int64)
    if len(trips) == 0:
        return f_in, f_out
    o_wid = windows.id_of(trips.o_t)
    d_wid = windows.id_of(trips.d_t)
    same = (o_wid == d_wid) & (o_wid >= 0)
    for a, area in enumerate(areas):
        o_in = area.contains_mask(trips.o_lat, trips.o_lon)
        d_in = area.contains_mask(trips.d_lat, trips.d_lon)
        m_in = same & ~o_in & d_in
        m_out = same & o_in & ~d_in
        f_in[a] = np.bincount(o_wid[m_in], minlength=n_win)
        f_out[a] = np.bincount(o_wid[m_out], minlength=n_win)
    return f_in, f_out


def grid_window_flows(trips: TripTable, index: GridIndex, windows: WindowSet):
    """Grid-cell flows; origin/destination cells located once per trip."""
    n_cells = index.rows * index.cols
    n_win = len(windows)
    f_in = np.zeros((n_cells, n_win), dtype=np.int64)
    f_out = np.zeros((n_cells, n_win), dtype=np.int64)
    if len(trips) == 0:
        return f_in, f_out
    o_wid = windows.id_of(trips.o_t)
    d_wid = windows.id_of(trips.d_t)
    same = (o_wid == d_wid) & (o_wid >= 0)
    o_r, o_c, o_ok = locate_cells(index, trips.o_lat, trips.o_lon)
    d_r, d_c, d_ok = locate_cells(index, trips.d_lat, trips.d_lon)
    o_cid = o_r * index.cols + o_c
    d_cid = d_r * index.cols + d_c
    differs = ~(o_ok & d_ok & (o_cid == d_cid))
    m_in = same & d_ok & differs
    m_out = same & o_ok & differs
    np.add.at(f_in.reshape(-1), d_cid[m_in] * n_win + o_wid[m_in], 1)
    np.add.at(f_out.reshape(-1), o_cid[m_out] * n_win + o_wid[m_out], 1)
    return f_in, f_out


def area_poi_counts(pois, areas, categories) -> np.ndarray:
    """Static per-area POI counts for the selected categories, shape (A, 8)."""
    table = pois if isinstance(pois, PoiTable) else to_poi_table(list(pois))
    out = np.zeros((len(areas), len(categories)), dtype=np.int64)
    for a, area in enumerate(areas):
        out[a] = poi_counts(table, area, categories)
    return out


def grid_poi_counts(pois, index: GridIndex, categories) -> np.ndarray:
    """Static per-cell POI counts, shape (rows*cols, 8), cells row-major."""
    table = pois if isinstance(pois, PoiTable) else to_poi_table(list(pois))
    n_cells = index.rows * index.cols
    out = np.zeros((n_cells, len(categories)), dtype=np.int64)
    if len(table) == 0:
        return out
    rows, cols, inside = locate_cells(index, table.lat, table.lon)
    cid = (rows * index.cols + cols)[inside]
    cat = table.category[inside]
    for i, c in enumerate(categories):
        out[:, i] = np.bincount(cid[cat == c], minlength=n_cells)
    return out


def demand_counts(ic_records, route_ids: list[str], windows: WindowSet) -> np.ndarray:
    """Fare-record counts per (route, window), shape (R, W)."""
    idx = {rid: i for i, rid in enumerate(route_ids)}
    n_win = len(windows)
    out = np.zeros((len(route_ids), n_win), dtype=np.int64)
    t = np.array([r.t for r in ic_records], dtype=np.float64)
    rid = np.array([idx.get(r.route_id, -1) for r in ic_records], dtype=np.int64)
    if len(t) == 0:
        return out
    wid = windows.id_of(t)
    ok = (wid >= 0) & (rid >= 0)
    np.add.at(out.reshape(-1), rid[ok] * n_win + wid[ok], 1)
    return out
