"""Dataset assembly: raw CSV files to labeled feature datasets.

For every calendar day in the weather file and every configured label hour
``h``, one label window ``[h, h + horizon)`` is formed; its features are
extracted from the preceding window ``[h - span, h)``.  Route rows carry the
15-region 217-entry vector and the demand class of the label window; grid
rows carry the 35-entry cell vector and the label window's top-down
emission in kg.

POI category selection is scoped to the training day block (the earliest
days under the configured split ratio) so no validation or test information
leaks into the feature layout.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

from .emission import (
    EmissionCoefficients,
    emission_labels_from_mileage,
    grid_window_mileage,
)
from .errors import ConfigError, MissingInputError
from .features import (
    DEFAULT_BIN_EDGES,
    REGION_BLOCK,
    REGIONS_PER_ROUTE,
    WindowSet,
    area_poi_counts,
    area_window_flows,
    demand_class,
    demand_counts,
    grid_poi_counts,
    grid_window_flows,
    grid_window_mobility,
    meteo_block,
    region_window_mobility,
    select_top_categories,
    to_poi_table,
)
from .geo import BusRoute, GeoPoint, GridIndex, make_route
from .ingest import (
    BusRecord,
    day_to_epoch,
    epoch_day,
    parse_dataset,
    to_trajectories,
    to_trip_table,
    extract_all_trips,
)
from .pipeline import (
    GRID_KIND,
    ROUTE_KIND,
    LabeledDataset,
    cell_id_str,
    train_day_set,
)

DATASET_BASENAMES = ("taxi.csv", "bus.csv", "ic.csv", "poi.csv", "weather.csv")


@dataclass(frozen=True)
class ExtractConfig:
    """Everything featurization needs beyond the raw files."""

    origin_lat: float
    origin_lon: float
    grid_rows: int
    grid_cols: int
    cell_size_km: float
    hours: tuple[int, ...]
    span_hours: int = 1
    horizon_hours: int = 1
    region_side_km: float = 0.5
    regions_per_route: int = REGIONS_PER_ROUTE
    seed: int = 42
    split_fractions: tuple[float, float, float] | None = None
    bin_edges: tuple[int, ...] = DEFAULT_BIN_EDGES

    def grid(self) -> GridIndex:
        return GridIndex(
            origin=GeoPoint(self.origin_lat, self.origin_lon),
            cell_size_km=self.cell_size_km,
            rows=self.grid_rows,
            cols=self.grid_cols,
        )


@dataclass
class ExtractResult:
    route_dataset: LabeledDataset
    grid_dataset: LabeledDataset
    routes: list[BusRoute]
    grid: GridIndex
    categories: list[int]
    label_windows: WindowSet


def derive_routes(bus_records: list[BusRecord], seed: int,
                  regions_per_route: int = REGIONS_PER_ROUTE,
                  region_side_km: float = 0.5) -> list[BusRoute]:
    """Reconstruct routes from bus trajectories.

    Station locations are the earliest recorded position per
    (route, current_stop) pair; stop ids sort lexicographically into route
    order.  Affecting regions are then sampled per route with the shared
    seed.
    """
    first_seen: dict[tuple[str, str], BusRecord] = {}
    for rec in bus_records:
        key = (rec.route_name, rec.current_stop)
        prev = first_seen.get(key)
        if prev is None or rec.t < prev.t:
            first_seen[key] = rec
    by_route: dict[str, list[tuple[str, BusRecord]]] = {}
    for (route_name, stop), rec in first_seen.items():
        by_route.setdefault(route_name, []).append((stop, rec))
    routes = []
    for route_name in sorted(by_route):
        stops = sorted(by_route[route_name], key=lambda sr: sr[0])
        stations = [GeoPoint(rec.lat, rec.lon) for _stop, rec in stops]
        routes.append(make_route(route_name, stations, seed=seed,
                                 regions_per_route=regions_per_route,
                                 region_side_km=region_side_km))
    return routes


def label_window_set(days: list[str], hours, horizon_hours: int) -> WindowSet:
    starts = np.array(
        [day_to_epoch(day) + 3600 * h for day in days for h in sorted(hours)],
        dtype=np.float64,
    )
    return WindowSet(starts=starts, length_s=3600.0 * horizon_hours)


def featurize(data_dir: str, cfg: ExtractConfig,
              coefficients: EmissionCoefficients) -> ExtractResult:
    """Full feature extraction from a directory of the five dataset files."""
    parsed = {}
    for base in DATASET_BASENAMES:
        path = os.path.join(data_dir, base)
        if not os.path.exists(path):
            raise MissingInputError(f"{path} not found")
        kind = base.split(".")[0]
        parsed[kind] = parse_dataset(kind, path).records
    return featurize_records(parsed, cfg, coefficients)


def featurize_records(parsed: dict[str, list], cfg: ExtractConfig,
                      coefficients: EmissionCoefficients) -> ExtractResult:
    """Featurize already-parsed records; see :func:`featurize`."""
    weather_by_day = {w.date: w for w in parsed["weather"]}
    days = sorted(weather_by_day)
    if not days:
        raise ConfigError("weather file lists no days")
    hours = tuple(sorted(cfg.hours))
    if not hours:
        raise ConfigError("no label hours configured")
    if hours[0] - cfg.span_hours < 0:
        raise ConfigError("feature window precedes midnight; adjust hours or span")
    if any(b - a < max(cfg.horizon_hours, cfg.span_hours)
           for a, b in zip(hours[:-1], hours[1:])):
        raise ConfigError("hour list too dense for the window lengths")

    label_ws = label_window_set(days, hours, cfg.horizon_hours)
    feat_ws = WindowSet(starts=label_ws.starts - 3600.0 * cfg.span_hours,
                        length_s=3600.0 * cfg.span_hours)

    trajectories = to_trajectories(parsed["taxi"])
    trips = to_trip_table(extract_all_trips(parsed["taxi"]))
    pois = to_poi_table(parsed["poi"])
    routes = derive_routes(parsed["bus"], seed=cfg.seed,
                           regions_per_route=cfg.regions_per_route,
                           region_side_km=cfg.region_side_km)
    if not routes:
        raise ConfigError("bus file yields no routes")
    grid = cfg.grid()

    regions = [region for route in routes for region in route.regions]
    region_demand = _region_trip_demand(trips, regions, days, cfg.split_fractions)
    categories = select_top_categories(pois, regions, region_demand)

    mobility = region_window_mobility(trajectories, regions, feat_ws)
    flow_in, flow_out = area_window_flows(trips, regions, feat_ws)
    region_poi = area_poi_counts(pois, regions, categories)
    route_ids = [r.route_id for r in routes]
    counts = demand_counts(parsed["ic"], route_ids, label_ws)

    n_win = len(label_ws)
    label_days = [epoch_day(t) for t in label_ws.starts]
    meteo_by_day = {day: meteo_block(weather_by_day[day]) for day in days}
    meteo_mat = np.stack([meteo_by_day[d] for d in label_days])  # (n_win, 22)
    win_starts = label_ws.starts
    win_ends = label_ws.starts + label_ws.length_s

    def area_block(a: int, mob, f_in, f_out, poi) -> np.ndarray:
        """(n_win, 13) feature block of one area."""
        return np.column_stack([
            mob.n_vehicles[a], mob.avg_speed[a], mob.speed_std[a],
            f_in[a], f_out[a], np.tile(poi[a], (n_win, 1)),
        ]).astype(np.float64)

    route_parts = []
    route_y = np.zeros(len(routes) * n_win)
    route_ids_col = []
    region_offset = 0
    for r_idx, route in enumerate(routes):
        blocks = [
            area_block(region_offset + b, mobility, flow_in, flow_out, region_poi)
            for b in range(len(route.regions))
        ]
        blocks += [np.zeros((n_win, REGION_BLOCK))
                   for _ in range(REGIONS_PER_ROUTE - len(blocks))]
        route_parts.append(np.hstack(blocks + [meteo_mat]))
        for w in range(n_win):
            route_y[r_idx * n_win + w] = demand_class(int(counts[r_idx, w]), cfg.bin_edges)
        route_ids_col.extend([route.route_id] * n_win)
        region_offset += len(route.regions)
    route_ds = LabeledDataset(
        kind=ROUTE_KIND, scope_ids=np.array(route_ids_col, dtype=str),
        window_starts=np.tile(win_starts, len(routes)),
        window_ends=np.tile(win_ends, len(routes)),
        X=np.vstack(route_parts), y=route_y,
        days=np.array(label_days * len(routes)),
    )

    g_mob = grid_window_mobility(trajectories, grid, feat_ws)
    g_in, g_out = grid_window_flows(trips, grid, feat_ws)
    g_poi = grid_poi_counts(pois, grid, categories)
    g_mileage = grid_window_mileage(trajectories, grid, label_ws)
    g_labels = emission_labels_from_mileage(g_mileage, coefficients)

    n_cells = grid.rows * grid.cols
    grid_parts = []
    grid_ids_col = []
    for cid in range(n_cells):
        grid_parts.append(np.hstack([area_block(cid, g_mob, g_in, g_out, g_poi), meteo_mat]))
        grid_ids_col.extend([cell_id_str((cid // grid.cols, cid % grid.cols))] * n_win)
    grid_ds = LabeledDataset(
        kind=GRID_KIND, scope_ids=np.array(grid_ids_col, dtype=str),
        window_starts=np.tile(win_starts, n_cells),
        window_ends=np.tile(win_ends, n_cells),
        X=np.vstack(grid_parts), y=g_labels.reshape(-1),
        days=np.array(label_days * n_cells),
    )
    return ExtractResult(route_dataset=route_ds, grid_dataset=grid_ds,
                         routes=routes, grid=grid, categories=categories,
                         label_windows=label_ws)


def _region_trip_demand(trips, regions, days, split_fractions) -> np.ndarray:
    """Per-region taxi-trip arrivals over the training day block.

    Demand here means trips ending in the region (regardless of origin),
    the quantity the POI correlation ranking is computed against.
    """
    train_days = train_day_set(days, split_fractions)
    trip_days = np.array([epoch_day(t) for t in trips.d_t])
    in_train = np.isin(trip_days, sorted(train_days))
    demand = np.zeros(len(regions))
    for i, region in enumerate(regions):
        inside = region.contains_mask(trips.d_lat, trips.d_lon)
        demand[i] = np.count_nonzero(inside & in_train)
    return demand
