"""Dataset ingestion: CSV parsing, validation, and passenger-trip derivation.

Five dataset kinds are supported (taxi, bus, ic, poi, weather), all
comma-separated UTF-8 with a mandatory header row.  Malformed rows are
rejected and reported, never repaired or silently dropped; a file whose
data rows are mostly malformed is refused outright.

Timestamps are ISO-8601 and normalized to UTC epoch seconds at parse time.
All time windows in this package are half-open intervals ``[start, end)``.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from datetime import datetime, timezone
from typing import Iterable

import numpy as np

from .errors import CorruptInputError, FormatError, InvalidInputError
from .geo import GeoPoint

# ---------------------------------------------------------------------------
# schemas
# ---------------------------------------------------------------------------

HEADERS = {
    "taxi": ["taxi_id", "timestamp", "lat", "lon", "speed_kmh", "direction_deg", "occupied"],
    "bus": ["bus_id", "timestamp", "lat", "lon", "speed_kmh", "last_position", "current_stop", "route_name"],
    "ic": ["route_id", "bus_id", "timestamp", "card_id"],
    "poi": ["poi_id", "name", "category", "lat", "lon"],
    "weather": ["date", "temp_high_c", "temp_low_c", "condition"],
}

N_POI_CATEGORIES = 12

#: The 20 nominal weather-condition categories used in the weather files.
WEATHER_CONDITIONS = (
    "sunny", "cloudy", "shower", "thunder shower", "light rain",
    "moderate rain", "heavy rain", "torrential rain", "foggy", "haze",
    "light rain to moderate rain", "moderate rain to heavy rain",
    "heavy rain to torrential rain", "hot", "rain to sunny",
    "sunny to rain", "cloudy to sunny", "cloudy to rain",
    "sunny to cloudy", "rain to cloudy",
)
N_WEATHER_CONDITIONS = len(WEATHER_CONDITIONS)

#: Condition codes (1-based) that involve precipitation; used by the
#: synthetic-city generator to suppress leisure trips on wet days.
RAINY_CONDITIONS = frozenset({3, 4, 5, 6, 7, 8, 11, 12, 13, 15, 16, 18, 20})


# ---------------------------------------------------------------------------
# time helpers
# ---------------------------------------------------------------------------

def iso_to_epoch(text: str) -> int:
    """Parse an ISO-8601 timestamp as UTC epoch seconds."""
    t = text.strip()
    if t.endswith("Z"):
        t = t[:-1]
    dt = datetime.fromisoformat(t)
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    return int(dt.timestamp())


def epoch_to_iso(t: float) -> str:
    """Format UTC epoch seconds as ``YYYY-MM-DDTHH:MM:SS``."""
    return datetime.fromtimestamp(int(t), tz=timezone.utc).strftime("%Y-%m-%dT%H:%M:%S")


def epoch_day(t: float) -> str:
    """Calendar day ``YYYY-MM-DD`` of a UTC epoch timestamp."""
    return datetime.fromtimestamp(int(t), tz=timezone.utc).strftime("%Y-%m-%d")


def day_to_epoch(day: str) -> int:
    """Epoch seconds of midnight UTC on ``YYYY-MM-DD``."""
    dt = datetime.strptime(day, "%Y-%m-%d").replace(tzinfo=timezone.utc)
    return int(dt.timestamp())


# ---------------------------------------------------------------------------
# record types
# ---------------------------------------------------------------------------

@dataclass(frozen=True, slots=True)
class TaxiRecord:
    taxi_id: str
    t: int
    lat: float
    lon: float
    speed_kmh: float
    direction_deg: float
    occupied: bool

    @property
    def loc(self) -> GeoPoint:
        return GeoPoint(self.lat, self.lon)


@dataclass(frozen=True, slots=True)
class BusRecord:
    bus_id: str
    t: int
    lat: float
    lon: float
    speed_kmh: float
    last_position: str
    current_stop: str
    route_name: str

    @property
    def loc(self) -> GeoPoint:
        return GeoPoint(self.lat, self.lon)


@dataclass(frozen=True, slots=True)
class IcCardRecord:
    route_id: str
    bus_id: str
    t: int
    card_id: str


@dataclass(frozen=True, slots=True)
class PoiRecord:
    poi_id: str
    name: str
    category: int
    lat: float
    lon: float

    @property
    def loc(self) -> GeoPoint:
        return GeoPoint(self.lat, self.lon)


@dataclass(frozen=True, slots=True)
class WeatherRecord:
    date: str
    temp_high_c: float
    temp_low_c: float
    condition: int


@dataclass(frozen=True, slots=True)
class TripOD:
    """One passenger trip: origin and destination samples, ``o_t < d_t``."""

    o_lat: float
    o_lon: float
    o_t: int
    d_lat: float
    d_lon: float
    d_t: int


# ---------------------------------------------------------------------------
# parsing
# ---------------------------------------------------------------------------

@dataclass
class ParseResult:
    """Parsed records plus a rejection report (line number, reason)."""

    kind: str
    records: list
    rejected: list[tuple[int, str]]
    n_rows: int

    @property
    def n_rejected(self) -> int:
        return len(self.rejected)


def _check_lat(v: float) -> float:
    if not (-90.0 <= v <= 90.0):
        raise ValueError(f"lat out of range: {v}")
    return v


def _check_lon(v: float) -> float:
    if not (-180.0 <= v <= 180.0):
        raise ValueError(f"lon out of range: {v}")
    return v


def _check_finite(v: float, name: str) -> float:
    if not np.isfinite(v):
        raise ValueError(f"{name} not finite")
    return v


def _parse_taxi(row: list[str]) -> TaxiRecord:
    speed = _check_finite(float(row[4]), "speed")
    if speed < 0:
        raise ValueError(f"negative speed: {speed}")
    direction = float(row[5])
    if not (0.0 <= direction < 360.0):
        raise ValueError(f"direction out of range: {direction}")
    occ = row[6].strip()
    if occ not in ("0", "1"):
        raise ValueError(f"occupied must be 0 or 1, got {occ!r}")
    return TaxiRecord(
        taxi_id=row[0],
        t=iso_to_epoch(row[1]),
        lat=_check_lat(float(row[2])),
        lon=_check_lon(float(row[3])),
        speed_kmh=speed,
        direction_deg=direction,
        occupied=occ == "1",
    )


def _parse_bus(row: list[str]) -> BusRecord:
    speed = _check_finite(float(row[4]), "speed")
    if speed < 0:
        raise ValueError(f"negative speed: {speed}")
    return BusRecord(
        bus_id=row[0],
        t=iso_to_epoch(row[1]),
        lat=_check_lat(float(row[2])),
        lon=_check_lon(float(row[3])),
        speed_kmh=speed,
        last_position=row[5],
        current_stop=row[6],
        route_name=row[7],
    )


def _parse_ic(row: list[str]) -> IcCardRecord:
    return IcCardRecord(
        route_id=row[0], bus_id=row[1], t=iso_to_epoch(row[2]), card_id=row[3]
    )


def _parse_poi(row: list[str]) -> PoiRecord:
    cat = int(row[2])
    if not (1 <= cat <= N_POI_CATEGORIES):
        raise ValueError(f"category out of range: {cat}")
    return PoiRecord(
        poi_id=row[0],
        name=row[1],
        category=cat,
        lat=_check_lat(float(row[3])),
        lon=_check_lon(float(row[4])),
    )


def _parse_weather(row: list[str]) -> WeatherRecord:
    datetime.strptime(row[0], "%Y-%m-%d")
    hi = _check_finite(float(row[1]), "temp_high")
    lo = _check_finite(float(row[2]), "temp_low")
    if lo > hi:
        raise ValueError(f"temp_low {lo} exceeds temp_high {hi}")
    cond = int(row[3])
    if not (1 <= cond <= N_WEATHER_CONDITIONS):
        raise ValueError(f"condition out of range: {cond}")
    return WeatherRecord(date=row[0], temp_high_c=hi, temp_low_c=lo, condition=cond)


_ROW_PARSERS = {
    "taxi": _parse_taxi,
    "bus": _parse_bus,
    "ic": _parse_ic,
    "poi": _parse_poi,
    "weather": _parse_weather,
}

_SORT_KEYS = {
    "taxi": lambda r: (r.taxi_id, r.t),
    "bus": lambda r: (r.bus_id, r.t),
    "ic": lambda r: (r.route_id, r.t, r.card_id),
    "poi": lambda r: r.poi_id,
    "weather": lambda r: r.date,
}


def parse_dataset(kind: str, source) -> ParseResult:
    """Parse one dataset file into validated records.

    Args:
        kind: One of ``taxi``, ``bus``, ``ic``, ``poi``, ``weather``.
        source: File path, text stream, or bytes.

    Returns:
        A :class:`ParseResult`; records are sorted per vehicle by time.

    Raises:
        FormatError: Unknown kind or unreadable/mismatched header.
        CorruptInputError: More than 50% of data rows rejected.
    """
    if kind not in HEADERS:
        raise FormatError(f"unknown dataset kind {kind!r}")
    if isinstance(source, bytes):
        stream = io.StringIO(source.decode("utf-8"))
        close = False
    elif hasattr(source, "read"):
        stream = source
        close = False
    else:
        stream = open(source, "r", encoding="utf-8", newline="")
        close = True
    try:
        reader = csv.reader(stream)
        try:
            header = next(reader)
        except StopIteration:
            raise FormatError(f"{kind}: empty file, header row required")
        expected = HEADERS[kind]
        if [h.strip() for h in header] != expected:
            raise FormatError(
                f"{kind}: bad header {header!r}, expected {expected!r}"
            )
        parse_row = _ROW_PARSERS[kind]
        n_fields = len(expected)
        records: list = []
        rejected: list[tuple[int, str]] = []
        n_rows = 0
        for line_no, row in enumerate(reader, start=2):
            if not row:
                continue
            n_rows += 1
            if len(row) != n_fields:
                rejected.append((line_no, f"expected {n_fields} fields, got {len(row)}"))
                continue
            try:
                records.append(parse_row(row))
            except (ValueError, InvalidInputError) as exc:
                rejected.append((line_no, str(exc)))
    finally:
        if close:
            stream.close()
    if n_rows > 0 and len(rejected) > n_rows / 2:
        raise CorruptInputError(
            f"{kind}: {len(rejected)} of {n_rows} rows rejected"
        )
    records.sort(key=_SORT_KEYS[kind])
    return ParseResult(kind=kind, records=records, rejected=rejected, n_rows=n_rows)


# ---------------------------------------------------------------------------
# writing (the exact inverse of parsing, used by the generator and tests)
# ---------------------------------------------------------------------------

def _format_row(kind: str, r) -> list:
    if kind == "taxi":
        return [r.taxi_id, epoch_to_iso(r.t), f"{r.lat:.6f}", f"{r.lon:.6f}",
                f"{r.speed_kmh:.1f}", f"{r.direction_deg:.1f}", int(r.occupied)]
    if kind == "bus":
        return [r.bus_id, epoch_to_iso(r.t), f"{r.lat:.6f}", f"{r.lon:.6f}",
                f"{r.speed_kmh:.1f}", r.last_position, r.current_stop, r.route_name]
    if kind == "ic":
        return [r.route_id, r.bus_id, epoch_to_iso(r.t), r.card_id]
    if kind == "poi":
        return [r.poi_id, r.name, r.category, f"{r.lat:.6f}", f"{r.lon:.6f}"]
    if kind == "weather":
        return [r.date, f"{r.temp_high_c:.1f}", f"{r.temp_low_c:.1f}", r.condition]
    raise FormatError(f"unknown dataset kind {kind!r}")


def write_dataset(kind: str, records: Iterable, target) -> None:
    """Write records in the canonical CSV schema (header + ``\\n`` endings)."""
    if kind not in HEADERS:
        raise FormatError(f"unknown dataset kind {kind!r}")
    if hasattr(target, "write"):
        _write_rows(kind, records, target)
    else:
        with open(target, "w", encoding="utf-8", newline="") as fh:
            _write_rows(kind, records, fh)


def _write_rows(kind: str, records: Iterable, fh) -> None:
    writer = csv.writer(fh, lineterminator="\n")
    writer.writerow(HEADERS[kind])
    for r in records:
        writer.writerow(_format_row(kind, r))


# ---------------------------------------------------------------------------
# trips and trajectories
# ---------------------------------------------------------------------------

def extract_trips(records: list[TaxiRecord]) -> list[TripOD]:
    """Derive passenger trips from one taxi's occupancy transitions.

    Each maximal run of ``occupied`` records becomes one trip whose origin
    is the run's first record and destination its last.  Runs of a single
    record carry no displacement and are discarded.

    Args:
        records: Time-sorted records of a single vehicle.
    """
    trips: list[TripOD] = []
    run_start = None
    prev = None
    for rec in records:
        if rec.occupied:
            if run_start is None:
                run_start = rec
            prev = rec
        else:
            if run_start is not None and prev is not None and prev is not run_start:
                trips.append(_trip(run_start, prev))
            run_start = None
            prev = None
    if run_start is not None and prev is not None and prev is not run_start:
        trips.append(_trip(run_start, prev))
    return trips


def _trip(o: TaxiRecord, d: TaxiRecord) -> TripOD:
    return TripOD(o_lat=o.lat, o_lon=o.lon, o_t=o.t, d_lat=d.lat, d_lon=d.lon, d_t=d.t)


def extract_all_trips(taxi_records: list[TaxiRecord]) -> list[TripOD]:
    """Trips of every vehicle in a parsed (per-taxi time-sorted) collection."""
    trips: list[TripOD] = []
    for traj in group_trajectories(taxi_records):
        trips.extend(extract_trips(traj))
    return trips


def group_trajectories(taxi_records: list[TaxiRecord]) -> list[list[TaxiRecord]]:
    """Split a per-taxi sorted record list into one list per vehicle."""
    out: list[list[TaxiRecord]] = []
    current: list[TaxiRecord] = []
    for rec in taxi_records:
        if current and rec.taxi_id != current[-1].taxi_id:
            out.append(current)
            current = []
        current.append(rec)
    if current:
        out.append(current)
    return out


@dataclass(frozen=True)
class Trajectory:
    """Columnar view of one vehicle's time-ordered samples."""

    vehicle_id: str
    t: np.ndarray
    lat: np.ndarray
    lon: np.ndarray
    speed_kmh: np.ndarray

    def __len__(self) -> int:
        return len(self.t)


def to_trajectories(taxi_records: list[TaxiRecord]) -> list[Trajectory]:
    """Columnar trajectories from parsed taxi records."""
    out = []
    for group in group_trajectories(taxi_records):
        out.append(
            Trajectory(
                vehicle_id=group[0].taxi_id,
                t=np.array([r.t for r in group], dtype=np.float64),
                lat=np.array([r.lat for r in group], dtype=np.float64),
                lon=np.array([r.lon for r in group], dtype=np.float64),
                speed_kmh=np.array([r.speed_kmh for r in group], dtype=np.float64),
            )
        )
    return out


@dataclass(frozen=True)
class TripTable:
    """Columnar view of a trip collection."""

    o_lat: np.ndarray
    o_lon: np.ndarray
    o_t: np.ndarray
    d_lat: np.ndarray
    d_lon: np.ndarray
    d_t: np.ndarray

    def __len__(self) -> int:
        return len(self.o_t)


def to_trip_table(trips: list[TripOD]) -> TripTable:
    return TripTable(
        o_lat=np.array([tr.o_lat for tr in trips], dtype=np.float64),
        o_lon=np.array([tr.o_lon for tr in trips], dtype=np.float64),
        o_t=np.array([tr.o_t for tr in trips], dtype=np.float64),
        d_lat=np.array([tr.d_lat for tr in trips], dtype=np.float64),
        d_lon=np.array([tr.d_lon for tr in trips], dtype=np.float64),
        d_t=np.array([tr.d_t for tr in trips], dtype=np.float64),
    )
