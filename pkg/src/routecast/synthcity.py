"""Seeded synthetic-city generator with ground-truth sidecar.

Generates the five dataset files (taxi, bus, ic, poi, weather) from a known
city model, plus ``truth.csv`` holding the exact per-route trip counts and
per-cell taxi mileage for every label window, and ``coefficients.csv`` with
the default emission factors.  Fixed seed means byte-identical files.

The demand process is built so the trip-demand signal is learnable but not
linearly so:

- stations carry archetype-dependent POI mixes (residential, commercial,
  industrial, leisure);
- hourly boarding rates combine three driver terms (home, work, leisure),
  each the product of a POI-derived station weight and an hour profile;
- rain and temperature rescale only the leisure term, and weekends damp the
  commute terms, so weather and weekday enter multiplicatively with the
  station mix;
- taxi trips chain through the city with destination weights following the
  same drivers, so mobility features carry the (noisy) hour and weekday
  signal that the static POI counts lack.

Per-day generator streams use independently derived seeds, so output does
not depend on generation order.
"""

from __future__ import annotations

import csv
import math
import os
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, FormatError
from .geo import (EARTH_RADIUS_KM, KM_PER_DEG_LAT, GeoPoint, GridIndex,
                  km_per_deg_lon, route_seed)
from .ingest import RAINY_CONDITIONS, day_to_epoch, epoch_to_iso, iso_to_epoch
from .emission import default_coefficients, write_coefficients

TRUTH_HEADER = ["kind", "id", "window_start", "window_end", "true_value"]
DEMAND_TRUTH_KIND = "route_demand"
MILEAGE_TRUTH_KIND = "grid_mileage"

DATASET_FILES = {
    "taxi": "taxi.csv",
    "bus": "bus.csv",
    "ic": "ic.csv",
    "poi": "poi.csv",
    "weather": "weather.csv",
}
TRUTH_FILE = "truth.csv"
COEFFICIENTS_FILE = "coefficients.csv"

# Expected POI counts near a station, per archetype x category (12 columns).
# Categories 1/4 drive home demand, 2/10 work demand, 6/12/3 leisure demand;
# the remaining categories are low-mass background so the correlation
# ranking reliably surfaces the drivers.
_ARCHETYPE_POI = np.array([
    [14.0, 0.6, 1.0, 4.0, 0.3, 0.5, 0.2, 0.1, 0.1, 0.3, 0.1, 0.4],  # residential
    [0.8, 12.0, 6.0, 0.6, 0.3, 0.5, 0.3, 0.1, 0.2, 0.4, 0.2, 1.0],  # commercial
    [0.5, 7.0, 0.4, 0.3, 0.2, 0.2, 0.2, 0.1, 0.1, 10.0, 0.1, 0.3],  # industrial
    [0.7, 0.8, 3.0, 0.4, 0.3, 9.0, 0.2, 0.1, 0.3, 0.3, 0.1, 7.0],   # leisure
])
_N_ARCHETYPES = len(_ARCHETYPE_POI)
# Columns (0-based) of the categories that actually drive demand; the
# per-route size factor scales only these, so background categories stay
# weakly correlated with trip arrivals.
_DRIVER_CATEGORIES = np.array([0, 1, 2, 3, 5, 9, 11])

_DRY_CONDITIONS = (1, 2, 9, 10, 14, 17, 19)
_WET_CONDITIONS = (3, 4, 5, 6, 7, 11, 12, 18, 20)


def _gauss_profile(hours: np.ndarray, mu: float, sigma: float) -> np.ndarray:
    return np.exp(-((hours - mu) ** 2) / (2.0 * sigma * sigma))


_HOURS24 = np.arange(24, dtype=np.float64)
# One common day shape multiplies every route's whole demand mix; taxi trip
# pacing follows the same curve, so the fleet's presence in the data exposes
# the factor that scales boardings.
_DAY_SHAPE_WEEKDAY = (0.55 + 0.75 * _gauss_profile(_HOURS24, 8.6, 1.5)
                      + 0.35 * _gauss_profile(_HOURS24, 12.5, 2.2)
                      + 0.95 * _gauss_profile(_HOURS24, 18.3, 1.7))
_DAY_SHAPE_WEEKEND = (0.55 + 0.25 * _gauss_profile(_HOURS24, 9.0, 2.0)
                      + 0.75 * _gauss_profile(_HOURS24, 12.5, 2.5)
                      + 0.90 * _gauss_profile(_HOURS24, 19.5, 2.0))
# Taxi-arrival profiles: where rides end at each hour (spatial mix only).
_ARRIVE_WORK = 0.25 + _gauss_profile(_HOURS24, 8.5, 1.4) + 0.2 * _gauss_profile(_HOURS24, 14.0, 3.0)
_ARRIVE_HOME = 0.25 + _gauss_profile(_HOURS24, 18.5, 1.5) + 0.15 * _gauss_profile(_HOURS24, 12.0, 3.0)
_ARRIVE_LEISURE = 0.25 + 0.8 * _gauss_profile(_HOURS24, 11.5, 2.0) + _gauss_profile(_HOURS24, 19.0, 1.8)


def _day_shape(weekend: bool) -> np.ndarray:
    return _DAY_SHAPE_WEEKEND if weekend else _DAY_SHAPE_WEEKDAY


@dataclass(frozen=True)
class CityModel:
    """Parameters of the synthetic city; defaults run in a few minutes."""

    seed: int = 42
    origin_lat: float = 22.20
    origin_lon: float = 113.20
    grid_rows: int = 8
    grid_cols: int = 8
    cell_size_km: float = 2.0
    n_routes: int = 20
    stations_per_route: int = 20
    n_taxis: int = 200
    n_days: int = 106
    start_day: str = "2015-07-01"
    hours: tuple[int, ...] = (8, 11, 15, 19)
    span_hours: int = 1
    horizon_hours: int = 1
    region_side_km: float = 0.5
    regions_per_route: int = 15
    demand_scale: float = 0.45
    arrival_boost: float = 42.0
    trips_per_taxi_day: float = 8.0
    gps_interval_s: float = 45.0
    rain_probability: float = 0.34

    def __post_init__(self) -> None:
        if min(self.n_routes, self.stations_per_route, self.n_taxis, self.n_days) < 1:
            raise ConfigError("city model needs at least one route, station, taxi, and day")
        if self.grid_rows < 1 or self.grid_cols < 1 or self.cell_size_km <= 0:
            raise ConfigError("invalid grid geometry")
        if not self.hours:
            raise ConfigError("at least one label hour is required")
        if self.span_hours < 1 or self.horizon_hours < 1:
            raise ConfigError("span and horizon must be >= 1 hour")
        hours = tuple(sorted(self.hours))
        if hours[0] - self.span_hours < 0 or hours[-1] + self.horizon_hours > 24:
            raise ConfigError("windows must fit within the day")
        if any(b - a < self.horizon_hours for a, b in zip(hours[:-1], hours[1:])):
            raise ConfigError("label windows overlap; thin the hour list")

    def grid(self) -> GridIndex:
        return GridIndex(
            origin=GeoPoint(self.origin_lat, self.origin_lon),
            cell_size_km=self.cell_size_km,
            rows=self.grid_rows,
            cols=self.grid_cols,
        )

    def bbox(self) -> tuple[GeoPoint, GeoPoint]:
        north = self.origin_lat + self.grid_rows * self.cell_size_km / KM_PER_DEG_LAT
        east = self.origin_lon + self.grid_cols * self.cell_size_km / km_per_deg_lon(self.origin_lat)
        return (GeoPoint(self.origin_lat, self.origin_lon), GeoPoint(north, east))

    def day_list(self) -> list[str]:
        start = day_to_epoch(self.start_day)
        return [epoch_to_iso(start + 86400 * i)[:10] for i in range(self.n_days)]

    def label_window_starts(self) -> np.ndarray:
        start = day_to_epoch(self.start_day)
        hours = sorted(self.hours)
        return np.array(
            [start + 86400 * d + 3600 * h for d in range(self.n_days) for h in hours],
            dtype=np.float64,
        )

    @property
    def active_start_hour(self) -> int:
        return min(self.hours) - self.span_hours

    @property
    def active_end_hour(self) -> int:
        return max(self.hours) + self.horizon_hours


@dataclass
class GeneratedCity:
    """Paths of the emitted files plus the model that produced them."""

    model: CityModel
    out_dir: str
    files: dict[str, str]
    truth_path: str
    coefficients_path: str


# ---------------------------------------------------------------------------
# static structure: stations and POIs
# ---------------------------------------------------------------------------

def _build_stations(model: CityModel, rng: np.random.Generator):
    """Per-route station polylines with archetypes and realized POI counts."""
    sw, ne = model.bbox()
    lat_margin = 0.8 / KM_PER_DEG_LAT
    lon_margin = 0.8 / km_per_deg_lon(model.origin_lat)
    lat_lo, lat_hi = sw.lat + lat_margin, ne.lat - lat_margin
    lon_lo, lon_hi = sw.lon + lon_margin, ne.lon - lon_margin
    routes = []
    for r in range(model.n_routes):
        mix = rng.dirichlet(np.full(_N_ARCHETYPES, 0.5))
        size = float(rng.uniform(0.4, 2.0))  # static per-route scale
        lat = rng.uniform(lat_lo, lat_hi)
        lon = rng.uniform(lon_lo, lon_hi)
        heading = rng.uniform(0.0, 2.0 * np.pi)
        stations = []
        for _ in range(model.stations_per_route):
            archetype = int(rng.choice(_N_ARCHETYPES, p=mix))
            intensity = _ARCHETYPE_POI[archetype].copy()
            intensity[_DRIVER_CATEGORIES] *= size
            poi_counts = rng.poisson(intensity)
            stations.append((lat, lon, archetype, poi_counts))
            # gentle heading drift keeps stations ~1 km apart so affecting
            # regions rarely blend neighbouring stations' POI piles
            step_km = rng.uniform(0.8, 1.2)
            heading += rng.normal(0.0, 0.3)
            dlat = step_km * np.cos(heading) / KM_PER_DEG_LAT
            dlon = step_km * np.sin(heading) / km_per_deg_lon(model.origin_lat)
            lat, lon = lat + dlat, lon + dlon
            if not (lat_lo <= lat <= lat_hi):
                heading = -heading
                lat = np.clip(lat, lat_lo, lat_hi)
            if not (lon_lo <= lon <= lon_hi):
                heading = np.pi - heading
                lon = np.clip(lon, lon_lo, lon_hi)
        routes.append(stations)
    return routes


def _station_drivers(poi_counts: np.ndarray) -> tuple[float, float, float]:
    """(home, work, leisure) demand weights from a 12-category count vector."""
    c = poi_counts
    home = c[0] + 0.5 * c[3]
    work = c[1] + 0.3 * c[9]
    leisure = c[5] + c[11] + 0.4 * c[2]
    return float(home), float(work), float(leisure)


def _emit_pois(model: CityModel, routes, rng: np.random.Generator, writer) -> None:
    sw, ne = model.bbox()
    dlat = 0.12 / KM_PER_DEG_LAT
    dlon = 0.12 / km_per_deg_lon(model.origin_lat)
    poi_id = 0
    for stations in routes:
        for lat, lon, _arch, counts in stations:
            for cat in range(12):
                for _ in range(int(counts[cat])):
                    poi_id += 1
                    p_lat = lat + rng.uniform(-dlat, dlat)
                    p_lon = lon + rng.uniform(-dlon, dlon)
                    writer.writerow([f"P{poi_id:06d}", f"poi-{cat + 1}-{poi_id}",
                                     cat + 1, f"{p_lat:.6f}", f"{p_lon:.6f}"])
    for _ in range(1500):
        poi_id += 1
        cat = int(rng.integers(1, 13))
        p_lat = rng.uniform(sw.lat, ne.lat)
        p_lon = rng.uniform(sw.lon, ne.lon)
        writer.writerow([f"P{poi_id:06d}", f"poi-{cat}-{poi_id}",
                         cat, f"{p_lat:.6f}", f"{p_lon:.6f}"])


# ---------------------------------------------------------------------------
# weather
# ---------------------------------------------------------------------------

def _make_weather(model: CityModel, rng: np.random.Generator):
    """Per-day (condition, temp_high, temp_low); i.i.d. across days."""
    out = []
    for _day in range(model.n_days):
        if rng.random() < model.rain_probability:
            cond = int(rng.choice(_WET_CONDITIONS))
        else:
            cond = int(rng.choice(_DRY_CONDITIONS))
        hi = round(float(rng.uniform(18.0, 36.0)), 1)
        lo = round(hi - float(rng.uniform(4.0, 10.0)), 1)
        out.append((cond, hi, lo))
    return out


def _weather_multipliers(cond: int, temp_high: float) -> tuple[float, float]:
    """(leisure multiplier, commute multiplier) for a day's weather."""
    leisure = 0.3 if cond in RAINY_CONDITIONS else 1.0
    if temp_high < 24.0:
        leisure *= 1.3
    elif temp_high > 32.0:
        leisure *= 0.75
    commute = 0.9 if cond in RAINY_CONDITIONS else 1.0
    return leisure, commute


# ---------------------------------------------------------------------------
# demand and taxi processes
# ---------------------------------------------------------------------------

def _boarding_rates(model, drivers, cond, temp_high, weekend) -> np.ndarray:
    """Expected boardings per station-hour, shape (n_stations, 24).

    The whole weather/weekday-adjusted station mix is scaled by the common
    day shape, so the hourly factor multiplies (rather than adds to) the
    POI-derived signal.
    """
    leis_mult, comm_mult = _weather_multipliers(cond, temp_high)
    wk = 0.75 if weekend else 1.0
    leis_wk = 1.2 if weekend else 1.0
    mix = (drivers[:, 0] * wk * comm_mult
           + drivers[:, 1] * wk * comm_mult
           + drivers[:, 2] * leis_wk * leis_mult)
    shape = _day_shape(weekend)
    return model.demand_scale * mix[:, None] * shape[None, :] + 0.3


def _arrival_weights(drivers, cond, temp_high, weekend) -> np.ndarray:
    """Unnormalized taxi destination weights, shape (n_stations, 24)."""
    leis_mult, comm_mult = _weather_multipliers(cond, temp_high)
    wk = 0.75 if weekend else 1.0
    leis_wk = 1.2 if weekend else 1.0
    work = drivers[:, 1:2] * _ARRIVE_WORK[None, :] * wk * comm_mult
    home = drivers[:, 0:1] * _ARRIVE_HOME[None, :] * wk * comm_mult
    leis = drivers[:, 2:3] * _ARRIVE_LEISURE[None, :] * leis_wk * leis_mult
    return work + home + leis + 0.2


def _region_entering_flows(model, trips, feat_starts_day, region_lat, region_lon,
                           region_kml, half, dlat_half) -> np.ndarray:
    """Trips entering each region box per feature window, shape (R, W).

    Transcribes the entering-flow predicate: origin outside the box,
    destination inside, both timestamps within the same window; evaluated
    on the rounded coordinates written to disk.
    """
    n_win = len(feat_starts_day)
    out = np.zeros((len(region_lat), n_win))
    if not trips:
        return out
    t0 = np.array([tr[0] for tr in trips], dtype=np.float64)
    t1 = np.array([tr[1] for tr in trips], dtype=np.float64)
    o_lat = np.array([tr[2] for tr in trips])
    o_lon = np.array([tr[3] for tr in trips])
    d_lat = np.array([tr[4] for tr in trips])
    d_lon = np.array([tr[5] for tr in trips])
    idx = np.searchsorted(feat_starts_day, t0, side="right") - 1
    safe = np.clip(idx, 0, n_win - 1)
    span = model.span_hours * 3600.0
    ok = (idx >= 0) & (t1 < feat_starts_day[safe] + span)
    for r in range(len(region_lat)):
        o_in = ((np.abs(o_lat - region_lat[r]) * KM_PER_DEG_LAT <= half)
                & (np.abs(o_lon - region_lon[r]) * region_kml[r] <= half))
        d_in = ((np.abs(d_lat - region_lat[r]) * KM_PER_DEG_LAT <= half)
                & (np.abs(d_lon - region_lon[r]) * region_kml[r] <= half))
        m = ok & ~o_in & d_in
        if m.any():
            out[r] += np.bincount(safe[m], minlength=n_win)
    return out


def _bearing_deg(lat1, lon1, lat2, lon2) -> float:
    y = math.sin(math.radians(lon2 - lon1)) * math.cos(math.radians(lat2))
    x = (math.cos(math.radians(lat1)) * math.sin(math.radians(lat2))
         - math.sin(math.radians(lat1)) * math.cos(math.radians(lat2))
         * math.cos(math.radians(lon2 - lon1)))
    deg = math.degrees(math.atan2(y, x))
    return deg % 360.0


def _haversine_scalar(lat1, lon1, lat2, lon2) -> float:
    phi1, phi2 = math.radians(lat1), math.radians(lat2)
    a = (math.sin((phi2 - phi1) / 2.0) ** 2
         + math.cos(phi1) * math.cos(phi2)
         * math.sin(math.radians(lon2 - lon1) / 2.0) ** 2)
    return 2.0 * EARTH_RADIUS_KM * math.asin(math.sqrt(a))


def _simulate_taxi_day(model, rng, day_epoch, station_lat, station_lon,
                       arrive_w, kernel, activity):
    """One taxi's rows for one day: chained trips with demand-paced idling.

    Idle time between trips scales inversely with the citywide activity
    level of the current hour, so taxi presence in the data tracks the hour,
    weekday, and weather structure of demand.  Peak activity also slows
    traffic, which the recorded speeds reflect.  Positions are rounded to
    the file precision so downstream truth accounting sees exactly what
    lands on disk.

    Returns ``(rows, arrivals)``: rows of (t, lat, lon, speed, direction,
    occupied) plus per-trip (t_start, t_end, o_lat, o_lon, d_lat, d_lon)
    tuples (rounded file coordinates) for the demand coupling.
    """
    rows = []
    arrivals = []
    start = day_epoch + model.active_start_hour * 3600
    end = day_epoch + model.active_end_hour * 3600
    jlat = 0.1 / KM_PER_DEG_LAT
    jlon = 0.1 / km_per_deg_lon(model.origin_lat)
    n_stations = len(station_lat)
    # Pacing: expected cycle length that yields the configured trips per day
    # at average (1.0) activity; busy hours shorten the idle share.
    span_s = end - start
    idle_scale = max(span_s / max(model.trips_per_taxi_day, 0.1) - 520.0, 60.0)

    def hour_of(t: float) -> int:
        return min(max(int((t - day_epoch) // 3600), 0), 23)

    t = start + float(rng.exponential(0.5 * idle_scale / activity[hour_of(start)]))
    hour = hour_of(t)
    w0 = arrive_w[:, hour] / arrive_w[:, hour].sum()
    s = int(rng.choice(n_stations, p=w0))
    lat = station_lat[s] + float(rng.uniform(-jlat, jlat))
    lon = station_lon[s] + float(rng.uniform(-jlon, jlon))
    while t < end:
        hour = hour_of(t)
        w = arrive_w[:, hour] * kernel[s]
        w = w / w.sum()
        s = int(rng.choice(n_stations, p=w))
        d_lat = station_lat[s] + float(rng.uniform(-jlat, jlat))
        d_lon = station_lon[s] + float(rng.uniform(-jlon, jlon))
        dist = _haversine_scalar(lat, lon, d_lat, d_lon)
        congestion = 1.0 + 1.0 * min(activity[hour], 2.5)
        # narrow base spread keeps passing speeds a crisp congestion readout
        speed = float(rng.uniform(34.0, 40.0)) / congestion
        duration = max(dist / speed * 3600.0, 30.0)
        n_pts = max(int(duration // model.gps_interval_s) + 1, 2)
        ts = np.linspace(t, t + duration, n_pts)
        f = (ts - t) / duration
        lats = lat + f * (d_lat - lat)
        lons = lon + f * (d_lon - lon)
        # rounding can push a bearing like 359.96 up to 360.0; wrap it back
        bearing = round(_bearing_deg(lat, lon, d_lat, d_lon), 1) % 360.0
        for i in range(n_pts):
            v = max(speed + float(rng.normal(0.0, 1.5)), 0.0)
            rows.append((int(ts[i]), round(float(lats[i]), 6), round(float(lons[i]), 6),
                         round(v, 1), bearing, 1))
        trip_start = int(ts[0])
        o_lat, o_lon = rows[-n_pts][1], rows[-n_pts][2]
        t = t + duration
        lat, lon = float(lats[-1]), float(lons[-1])
        arrivals.append((trip_start, int(t), o_lat, o_lon, rows[-1][1], rows[-1][2]))
        # brief unoccupied dwell at the destination
        for k in (40.0, 100.0):
            if t + k >= end:
                break
            rows.append((int(t + k), round(lat, 6), round(lon, 6), 0.0, bearing, 0))
        idle = float(rng.exponential(idle_scale / activity[hour_of(t)])) + 90.0
        t += idle
    return rows, arrivals


# ---------------------------------------------------------------------------
# generation entry point
# ---------------------------------------------------------------------------

def generate(model: CityModel, out_dir) -> GeneratedCity:
    """Write the five dataset files plus truth and coefficients sidecars."""
    out_dir = str(out_dir)
    os.makedirs(out_dir, exist_ok=True)
    paths = {k: os.path.join(out_dir, v) for k, v in DATASET_FILES.items()}
    truth_path = os.path.join(out_dir, TRUTH_FILE)
    coeff_path = os.path.join(out_dir, COEFFICIENTS_FILE)

    structure_rng = np.random.default_rng(np.random.SeedSequence([model.seed, 0]))
    routes = _build_stations(model, structure_rng)
    with open(paths["poi"] + ".tmp", "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["poi_id", "name", "category", "lat", "lon"])
        _emit_pois(model, routes, structure_rng, writer)
    os.replace(paths["poi"] + ".tmp", paths["poi"])

    weather_rng = np.random.default_rng(np.random.SeedSequence([model.seed, 1]))
    weather = _make_weather(model, weather_rng)
    days = model.day_list()
    with open(paths["weather"] + ".tmp", "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["date", "temp_high_c", "temp_low_c", "condition"])
        for day, (cond, hi, lo) in zip(days, weather):
            writer.writerow([day, f"{hi:.1f}", f"{lo:.1f}", cond])
    os.replace(paths["weather"] + ".tmp", paths["weather"])

    # flat station arrays shared by the demand and taxi processes
    station_lat = np.array([s[0] for r in routes for s in r])
    station_lon = np.array([s[1] for r in routes for s in r])
    drivers = np.array([_station_drivers(s[3]) for r in routes for s in r])
    station_route = np.repeat(np.arange(model.n_routes), model.stations_per_route)
    # distance kernel keeps taxi trips local (mean a few km)
    dy = (station_lat[:, None] - station_lat[None, :]) * KM_PER_DEG_LAT
    dx = (station_lon[:, None] - station_lon[None, :]) * km_per_deg_lon(model.origin_lat)
    kernel = np.exp(-np.sqrt(dy * dy + dx * dx) / 6.0)
    np.fill_diagonal(kernel, 0.2)

    grid = model.grid()
    hours_sorted = sorted(model.hours)
    n_win_day = len(hours_sorted)
    n_cells = grid.rows * grid.cols
    mileage_truth = np.zeros((n_cells, model.n_days * n_win_day))
    demand_truth = np.zeros((model.n_routes, model.n_days * n_win_day), dtype=np.int64)

    route_ids = [f"R{r:02d}" for r in range(model.n_routes)]
    taxi_ids = [f"T{i:03d}" for i in range(model.n_taxis)]
    # The affecting regions downstream feature extraction will sample (same
    # seeded draw).  The demand coupling counts taxi trips entering each
    # region box exactly the way the entering-flow feature does, so that
    # part of the boarding rate is observable by construction.
    half = model.region_side_km / 2.0
    dlat_half = half / KM_PER_DEG_LAT
    region_owner = []   # flat station index owning each region
    region_lat = []
    region_lon = []
    for r, rid in enumerate(route_ids):
        rng_r = np.random.default_rng(route_seed(model.seed, rid))
        k = min(model.regions_per_route, model.stations_per_route)
        picked = np.sort(rng_r.choice(model.stations_per_route, size=k, replace=False))
        for p in picked:
            flat = r * model.stations_per_route + int(p)
            region_owner.append(flat)
            region_lat.append(station_lat[flat])
            region_lon.append(station_lon[flat])
    region_owner = np.array(region_owner, dtype=np.int64)
    region_lat = np.array(region_lat)
    region_lon = np.array(region_lon)
    is_region_station = np.zeros(len(station_lat), dtype=bool)
    is_region_station[region_owner] = True
    # longitude half-width per region, matching the membership rule exactly
    region_kml = np.array([km_per_deg_lon(la) for la in region_lat])

    taxi_fh = open(paths["taxi"] + ".tmp", "w", encoding="utf-8", newline="")
    bus_fh = open(paths["bus"] + ".tmp", "w", encoding="utf-8", newline="")
    ic_fh = open(paths["ic"] + ".tmp", "w", encoding="utf-8", newline="")
    try:
        taxi_w = csv.writer(taxi_fh, lineterminator="\n")
        taxi_w.writerow(["taxi_id", "timestamp", "lat", "lon", "speed_kmh",
                         "direction_deg", "occupied"])
        bus_w = csv.writer(bus_fh, lineterminator="\n")
        bus_w.writerow(["bus_id", "timestamp", "lat", "lon", "speed_kmh",
                        "last_position", "current_stop", "route_name"])
        ic_w = csv.writer(ic_fh, lineterminator="\n")
        ic_w.writerow(["route_id", "bus_id", "timestamp", "card_id"])

        n_stations = len(station_lat)
        for day_idx, day in enumerate(days):
            day_epoch = day_to_epoch(day)
            weekend = (day_idx + 2) % 7 >= 5  # start_day defaults to a Wednesday
            cond, hi, _lo = weather[day_idx]

            arrive_w = _arrival_weights(drivers, cond, hi, weekend)
            # taxi pacing follows the common day shape, sharpened so hour
            # levels stand out in the observed vehicle counts
            act = _day_shape(weekend) ** 2.2
            act = act / act[model.active_start_hour:model.active_end_hour].mean()
            activity = np.clip(act, 0.15, 3.0)
            taxi_rng = np.random.default_rng(np.random.SeedSequence([model.seed, 2, day_idx]))
            win_starts_day = np.array([day_epoch + h * 3600 for h in hours_sorted], dtype=np.float64)
            feat_starts_day = win_starts_day - model.span_hours * 3600.0
            day_trips = []
            for taxi_id in taxi_ids:
                rows, arrivals = _simulate_taxi_day(model, taxi_rng, day_epoch, station_lat,
                                                    station_lon, arrive_w, kernel, activity)
                for t, lat, lon, v, direction, occ in rows:
                    taxi_w.writerow([taxi_id, epoch_to_iso(t), f"{lat:.6f}", f"{lon:.6f}",
                                     f"{v:.1f}", f"{direction:.1f}", occ])
                day_trips.extend(arrivals)
                _accumulate_mileage(model, grid, rows, win_starts_day,
                                    mileage_truth, day_idx * n_win_day)
            region_flow = _region_entering_flows(
                model, day_trips, feat_starts_day,
                region_lat, region_lon, region_kml, half, dlat_half,
            )
            station_arrivals = np.zeros((n_stations, n_win_day))
            np.add.at(station_arrivals, region_owner, region_flow)

            # Boardings couple to the taxi flow entering each affecting
            # region just before the label window, on top of the
            # POI/weather/weekday base rate.
            demand_rng = np.random.default_rng(np.random.SeedSequence([model.seed, 3, day_idx]))
            # stations without a sampled affecting region are minor stops;
            # they carry a reduced share of the boardings
            rates = _boarding_rates(model, drivers, cond, hi, weekend)
            rates = rates * np.where(is_region_station, 1.0, 0.15)[:, None]
            for w_idx, hour in enumerate(hours_sorted):
                col = day_idx * n_win_day + w_idx
                w_start = day_epoch + hour * 3600
                w_len = model.horizon_hours * 3600
                lam = (rates[:, hour] * model.horizon_hours
                       + model.arrival_boost * station_arrivals[:, w_idx])
                counts = demand_rng.poisson(lam)
                for r in range(model.n_routes):
                    demand_truth[r, col] = counts[station_route == r].sum()
                for r in range(model.n_routes):
                    q = int(demand_truth[r, col])
                    if q == 0:
                        continue
                    times = np.sort(demand_rng.integers(0, w_len, size=q)) + w_start
                    for j, ts in enumerate(times):
                        ic_w.writerow([route_ids[r], f"B{r:02d}a", epoch_to_iso(ts),
                                       f"C{r:02d}{day_idx:03d}{j:05d}"])

            _emit_bus_day(model, routes, route_ids, day_epoch, bus_w)
    finally:
        taxi_fh.close()
        bus_fh.close()
        ic_fh.close()
    for key in ("taxi", "bus", "ic"):
        os.replace(paths[key] + ".tmp", paths[key])

    _write_truth(model, truth_path, route_ids, grid, demand_truth, mileage_truth)
    write_coefficients(default_coefficients(), coeff_path)
    return GeneratedCity(model=model, out_dir=out_dir, files=paths,
                         truth_path=truth_path, coefficients_path=coeff_path)


def _accumulate_mileage(model, grid, rows, win_starts_day, mileage, col0) -> None:
    """Add one taxi-day's per-cell, per-window mileage to the truth table.

    Segment rule transcribed directly: both endpoints in the same label
    window, assigned to the cell under the segment midpoint.  Uses the
    rounded coordinates that were written to disk.
    """
    if len(rows) < 2:
        return
    t = np.array([r[0] for r in rows], dtype=np.float64)
    lat = np.array([r[1] for r in rows])
    lon = np.array([r[2] for r in rows])
    idx = np.searchsorted(win_starts_day, t, side="right") - 1
    safe = np.clip(idx, 0, len(win_starts_day) - 1)
    wid = np.where((idx >= 0) & (t < win_starts_day[safe] + model.horizon_hours * 3600.0),
                   idx, -1)
    pair = (wid[:-1] == wid[1:]) & (wid[:-1] >= 0)
    if not pair.any():
        return
    mid_lat = (lat[:-1] + lat[1:]) / 2.0
    mid_lon = (lon[:-1] + lon[1:]) / 2.0
    row_f = (mid_lat - model.origin_lat) * KM_PER_DEG_LAT / model.cell_size_km
    col_f = (mid_lon - model.origin_lon) * km_per_deg_lon(model.origin_lat) / model.cell_size_km
    inside = (row_f >= 0) & (col_f >= 0) & (row_f <= grid.rows) & (col_f <= grid.cols)
    rr = np.minimum(np.floor(row_f).astype(int), grid.rows - 1)
    cc = np.minimum(np.floor(col_f).astype(int), grid.cols - 1)
    sel = pair & inside
    if not sel.any():
        return
    phi1 = np.radians(lat[:-1])
    phi2 = np.radians(lat[1:])
    a = (np.sin((phi2 - phi1) / 2.0) ** 2
         + np.cos(phi1) * np.cos(phi2) * np.sin(np.radians(lon[1:] - lon[:-1]) / 2.0) ** 2)
    d = 2.0 * EARTH_RADIUS_KM * np.arcsin(np.sqrt(a))
    cols = (rr * grid.cols + cc)[sel]
    wids = wid[:-1][sel]
    np.add.at(mileage, (cols, col0 + wids), d[sel])


def _emit_bus_day(model, routes, route_ids, day_epoch, writer) -> None:
    """Two loops per route per day; two exact records per station pass."""
    for r, stations in enumerate(routes):
        bus_id = f"B{r:02d}a"
        for loop, start_hour in enumerate((model.active_start_hour + 1,
                                           model.active_start_hour + 6)):
            t = day_epoch + start_hour * 3600 + r * 120
            prev_stop = "depot"
            for s_idx, (lat, lon, _arch, _counts) in enumerate(stations):
                stop = f"{s_idx:02d}"
                for dt, speed in ((0, 16.0), (20, 0.0)):
                    writer.writerow([bus_id, epoch_to_iso(t + dt), f"{lat:.6f}",
                                     f"{lon:.6f}", f"{speed:.1f}", prev_stop, stop,
                                     route_ids[r]])
                t += 150
                prev_stop = stop


def _write_truth(model, truth_path, route_ids, grid, demand_truth, mileage_truth) -> None:
    hours_sorted = sorted(model.hours)
    n_win_day = len(hours_sorted)
    start0 = day_to_epoch(model.start_day)
    with open(truth_path + ".tmp", "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(TRUTH_HEADER)
        for day_idx in range(model.n_days):
            for w_idx, hour in enumerate(hours_sorted):
                w_start = start0 + 86400 * day_idx + 3600 * hour
                w_end = w_start + model.horizon_hours * 3600
                col = day_idx * n_win_day + w_idx
                for r, rid in enumerate(route_ids):
                    writer.writerow([DEMAND_TRUTH_KIND, rid, epoch_to_iso(w_start),
                                     epoch_to_iso(w_end), int(demand_truth[r, col])])
        for day_idx in range(model.n_days):
            for w_idx, hour in enumerate(hours_sorted):
                w_start = start0 + 86400 * day_idx + 3600 * hour
                w_end = w_start + model.horizon_hours * 3600
                col = day_idx * n_win_day + w_idx
                for cell_row in range(grid.rows):
                    for cell_col in range(grid.cols):
                        cid = cell_row * grid.cols + cell_col
                        writer.writerow([
                            MILEAGE_TRUTH_KIND, f"{cell_row}:{cell_col}",
                            epoch_to_iso(w_start), epoch_to_iso(w_end),
                            repr(float(mileage_truth[cid, col])),
                        ])
    os.replace(truth_path + ".tmp", truth_path)


def read_truth(path) -> dict[tuple[str, str, int], float]:
    """Sidecar rows keyed by (kind, id, window_start_epoch)."""
    out: dict[tuple[str, str, int], float] = {}
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != TRUTH_HEADER:
            raise FormatError(f"{path}: not a truth sidecar")
        for row in reader:
            if not row:
                continue
            out[(row[0], row[1], iso_to_epoch(row[2]))] = float(row[4])
    return out
