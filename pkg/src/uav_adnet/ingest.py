"""Annotation and flight-telemetry ingestion.

File formats
------------
Annotations are JSON lines, one frame per line::

    {"frame_id": "f0001", "time_ms": 1200,
     "boxes": [{"x1": 10, "y1": 20, "x2": 40, "y2": 60, "category": "car"}]}

Flight logs are CSV with the header ``date,t,lat,lon,alt_mm,roll,pitch,yaw,vx,vy,vz``
where ``date`` is ``MMDDYYYY-HHMMSS``, ``t`` is milliseconds and ``alt_mm`` is
millimetres.
"""
from __future__ import annotations

import csv
import json
import math
from bisect import bisect_left
from dataclasses import dataclass
from datetime import datetime
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .errors import ConfigError, JoinError, MissingFileError, OrderingError, ParseError, ValidationError
from .grid import Box, GridSpec, GridVector, ObjectCategory, read_grids, write_grids

FLIGHT_COLUMNS = ("date", "t", "lat", "lon", "alt_mm", "roll", "pitch", "yaw", "vx", "vy", "vz")
DATE_FORMAT = "%m%d%Y-%H%M%S"
DEFAULT_MAX_GAP_MS = 500.0
DEFAULT_RATIOS = (0.6, 0.1, 0.3)

# (field, lower, upper); None means unbounded. Bounds are inclusive.
SENSOR_RANGES = (
    ("t", 0.0, None),
    ("lat", -90.0, 90.0),
    ("lon", -180.0, 180.0),
    ("altitude", 0.0, None),
    ("roll", -math.pi, math.pi),
    ("pitch", -math.pi, math.pi),
    ("yaw", -math.pi, math.pi),
    ("vx", 0.0, None),
    ("vy", 0.0, None),
    ("vz", 0.0, None),
)


@dataclass(frozen=True)
class FlightRecord:
    date_time: str
    t: float
    lat: float
    lon: float
    altitude: float
    roll: float
    pitch: float
    yaw: float
    vx: float
    vy: float
    vz: float


@dataclass(frozen=True)
class FrameAnnotation:
    frame_id: str
    boxes: tuple[Box, ...]
    time_ms: float | None = None


@dataclass(frozen=True, eq=False)
class Sample:
    grid: GridVector
    gps: np.ndarray
    source_frame: str = ""

    def __post_init__(self):
        gps = np.asarray(self.gps, dtype=np.float64).reshape(-1)
        if not np.isfinite(gps).all():
            raise ValidationError("gps feature must be finite", field="gps")
        gps.setflags(write=False)
        object.__setattr__(self, "gps", gps)


@dataclass(frozen=True)
class GpsBounds:
    lat: tuple[float, float]
    lon: tuple[float, float]
    alt: tuple[float, float]

    def __post_init__(self):
        for name in ("lat", "lon", "alt"):
            lo, hi = getattr(self, name)
            if not lo < hi:
                raise ConfigError(f"degenerate gps bounds on {name}: min {lo} must be < max {hi}")

    @classmethod
    def from_records(cls, records: Sequence[FlightRecord]) -> "GpsBounds":
        if not records:
            raise ConfigError("cannot derive gps bounds from zero records")
        lat = [r.lat for r in records]
        lon = [r.lon for r in records]
        alt = [r.altitude for r in records]
        return cls((min(lat), max(lat)), (min(lon), max(lon)), (min(alt), max(alt)))

    def to_dict(self):
        return {"lat": list(self.lat), "lon": list(self.lon), "alt": list(self.alt)}

    @classmethod
    def from_dict(cls, data) -> "GpsBounds":
        return cls(tuple(data["lat"]), tuple(data["lon"]), tuple(data["alt"]))


def _require(path) -> Path:
    path = Path(path)
    if not path.is_file():
        raise MissingFileError(path)
    return path


# -- annotations -------------------------------------------------------------

def _parse_box(obj, line_no) -> Box:
    try:
        x1, y1, x2, y2 = (float(obj[k]) for k in ("x1", "y1", "x2", "y2"))
        category = ObjectCategory.parse(obj["category"])
    except KeyError as exc:
        raise ParseError(f"box missing key {exc.args[0]!r}", line=line_no) from None
    except (TypeError, ValueError) as exc:
        raise ParseError(str(exc), line=line_no) from None
    if not (x1 < x2 and y1 < y2):
        raise ParseError(f"degenerate box ({x1}, {y1}, {x2}, {y2}): need x1 < x2 and y1 < y2", line=line_no)
    return Box(x1, y1, x2, y2, category)


def _parse_annotation_line(text, line_no) -> FrameAnnotation:
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"invalid JSON: {exc.msg}", line=line_no) from None
    if not isinstance(obj, dict) or "frame_id" not in obj or "boxes" not in obj:
        raise ParseError("record needs 'frame_id' and 'boxes'", line=line_no)
    if not isinstance(obj["boxes"], list):
        raise ParseError("'boxes' must be an array", line=line_no)
    time_ms = obj.get("time_ms")
    if time_ms is not None:
        try:
            time_ms = float(time_ms)
        except (TypeError, ValueError):
            raise ParseError("'time_ms' must be numeric", line=line_no) from None
    boxes = tuple(_parse_box(b, line_no) for b in obj["boxes"])
    return FrameAnnotation(str(obj["frame_id"]), boxes, time_ms)


def parse_annotations(path, errors: list | None = None) -> list[FrameAnnotation]:
    """Parse a JSON-lines annotation file.

    With ``errors=None`` the first malformed record raises :class:`ParseError`.
    Passing a list switches to report mode: every malformed record is appended
    to it as a ``ParseError`` and parsing continues.
    """
    path = _require(path)
    frames = []
    with open(path, encoding="utf-8") as fh:
        for line_no, text in enumerate(fh, start=1):
            if not text.strip():
                continue
            try:
                frames.append(_parse_annotation_line(text, line_no))
            except ParseError as exc:
                exc.path = str(path)
                if errors is None:
                    raise
                errors.append(exc)
    return frames


def write_annotations(path, frames: Sequence[FrameAnnotation]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for frame in frames:
            rec = {"frame_id": frame.frame_id}
            if frame.time_ms is not None:
                rec["time_ms"] = frame.time_ms
            rec["boxes"] = [
                {"x1": b.x_min, "y1": b.y_min, "x2": b.x_max, "y2": b.y_max, "category": b.category.label}
                for b in frame.boxes
            ]
            fh.write(json.dumps(rec) + "\n")


# -- flight log ----------------------------------------------------------------

def validate_flight_record(record: FlightRecord) -> FlightRecord:
    try:
        datetime.strptime(record.date_time, DATE_FORMAT)
    except (TypeError, ValueError):
        raise ValidationError(
            f"date {record.date_time!r} does not match MMDDYYYY-HHMMSS", field="date"
        ) from None
    for name, lo, hi in SENSOR_RANGES:
        value = getattr(record, name)
        if not math.isfinite(value):
            raise ValidationError(f"{name} is not finite ({value})", field=name)
        if (lo is not None and value < lo) or (hi is not None and value > hi):
            span = f"[{lo}, {'inf' if hi is None else hi}]"
            raise ValidationError(f"{name}={value} outside {span}", field=name)
    return record


def parse_flight_log(path) -> list[FlightRecord]:
    path = _require(path)
    records = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            return []
        header = [h.strip() for h in header]
        if tuple(header) != FLIGHT_COLUMNS:
            raise ParseError(f"expected header {','.join(FLIGHT_COLUMNS)}", line=1, path=path)
        for line_no, row in enumerate(reader, start=2):
            if not row or not "".join(row).strip():
                continue
            if len(row) != len(FLIGHT_COLUMNS):
                raise ParseError(f"expected {len(FLIGHT_COLUMNS)} columns, got {len(row)}", line=line_no, path=path)
            try:
                values = [float(v) for v in row[1:]]
            except ValueError as exc:
                raise ParseError(str(exc), line=line_no, path=path) from None
            record = FlightRecord(row[0].strip(), *values)
            try:
                validate_flight_record(record)
            except ValidationError as exc:
                raise ValidationError(f"line {line_no}: {exc}", field=exc.field) from None
            if records and record.t < records[-1].t:
                raise OrderingError(
                    f"line {line_no}: timestamp {record.t} precedes previous {records[-1].t}"
                )
            records.append(record)
    return records


def write_flight_log(path, records: Sequence[FlightRecord]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(FLIGHT_COLUMNS)
        for r in records:
            writer.writerow([r.date_time, repr(r.t), repr(r.lat), repr(r.lon), repr(r.altitude),
                             repr(r.roll), repr(r.pitch), repr(r.yaw), repr(r.vx), repr(r.vy), repr(r.vz)])


# -- joining -------------------------------------------------------------------

def join_by_time(
    annotations: Sequence[FrameAnnotation],
    flight: Sequence[FlightRecord],
    frame_times: Mapping[str, float] | None = None,
    max_gap_ms: float = DEFAULT_MAX_GAP_MS,
) -> list[tuple[FrameAnnotation, FlightRecord]]:
    """Pair each frame with the flight record nearest in time.

    Ties go to the earlier record. Frame times come from ``frame_times`` when
    given, otherwise from each annotation's ``time_ms``.
    """
    times = [r.t for r in flight]
    if any(b < a for a, b in zip(times, times[1:])):
        raise OrderingError("flight records must be sorted by t")
    pairs, missing = [], []
    for frame in annotations:
        t = frame_times.get(frame.frame_id) if frame_times is not None else frame.time_ms
        if t is None or not times:
            missing.append(frame.frame_id)
            continue
        k = bisect_left(times, t)
        candidates = [j for j in (k - 1, k) if 0 <= j < len(times)]
        # earlier index first so min() keeps it on ties
        best = min(candidates, key=lambda j: abs(times[j] - t))
        if abs(times[best] - t) > max_gap_ms:
            missing.append(frame.frame_id)
            continue
        pairs.append((frame, flight[best]))
    if missing:
        raise JoinError(
            f"no flight record within {max_gap_ms} ms for frame(s): {', '.join(missing)}", missing
        )
    return pairs


def normalize_gps(record: FlightRecord, bounds: GpsBounds) -> np.ndarray:
    values = []
    for value, (lo, hi) in ((record.lat, bounds.lat), (record.lon, bounds.lon), (record.altitude, bounds.alt)):
        if not lo < hi:
            raise ConfigError("degenerate gps bounds")
        values.append(min(max((value - lo) / (hi - lo), 0.0), 1.0))
    return np.array(values)


# -- splitting -----------------------------------------------------------------

def split_sizes(n: int, ratios: Sequence[float]) -> tuple[int, ...]:
    """Largest-remainder apportionment of ``n`` items."""
    raw = [n * r for r in ratios]
    sizes = [int(math.floor(x)) for x in raw]
    order = sorted(range(len(raw)), key=lambda i: (-(raw[i] - sizes[i]), i))
    for i in order[: n - sum(sizes)]:
        sizes[i] += 1
    return tuple(sizes)


def split(samples: Sequence, ratios=DEFAULT_RATIOS, seed: int = 0):
    ratios = tuple(float(r) for r in ratios)
    if len(ratios) != 3 or any(r <= 0 for r in ratios):
        raise ConfigError("split ratios must be three positive numbers")
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise ConfigError(f"split ratios sum to {sum(ratios)}, expected 1")
    n_train, n_val, _ = split_sizes(len(samples), ratios)
    order = np.random.default_rng(seed).permutation(len(samples))
    parts = (order[:n_train], order[n_train:n_train + n_val], order[n_train + n_val:])
    return tuple([samples[int(i)] for i in part] for part in parts)


def build_samples(
    annotations: Sequence[FrameAnnotation],
    flight: Sequence[FlightRecord],
    spec: GridSpec,
    bounds: GpsBounds | None = None,
    max_gap_ms: float = DEFAULT_MAX_GAP_MS,
):
    """Join, rasterize and normalize. Returns ``(samples, records, bounds)``."""
    from .grid import rasterize

    pairs = join_by_time(annotations, flight, max_gap_ms=max_gap_ms)
    records = [rec for _, rec in pairs]
    if bounds is None:
        bounds = GpsBounds.from_records(records)
    samples = [
        Sample(rasterize(frame.boxes, spec), normalize_gps(rec, bounds), frame.frame_id)
        for frame, rec in pairs
    ]
    return samples, records, bounds


# -- dataset container -----------------------------------------------------------

def dataset_paths(stem) -> tuple[Path, Path]:
    stem = Path(stem)
    return stem.with_name(stem.name + ".grids"), stem.with_name(stem.name + ".gps.csv")


def save_dataset(stem, samples: Sequence[Sample], spec: GridSpec) -> None:
    grid_path, gps_path = dataset_paths(stem)
    grid_path.parent.mkdir(parents=True, exist_ok=True)
    with open(grid_path, "wb") as fh:
        write_grids(fh, [s.grid for s in samples], spec)
    with open(gps_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["index", "lat", "lon", "alt", "source_frame"])
        for i, s in enumerate(samples):
            lat, lon, alt = (repr(float(v)) for v in s.gps)
            writer.writerow([i, lat, lon, alt, s.source_frame])


def load_dataset(stem, spec: GridSpec | None = None) -> tuple[GridSpec, list[Sample]]:
    grid_path, gps_path = dataset_paths(stem)
    _require(grid_path)
    _require(gps_path)
    kwargs = {}
    if spec is not None:
        kwargs = {"frame_width_px": spec.frame_width_px, "frame_height_px": spec.frame_height_px}
    with open(grid_path, "rb") as fh:
        file_spec, grids = read_grids(fh, **kwargs)
    if spec is not None and not spec.same_layout(file_spec):
        raise ConfigError(f"dataset grid {file_spec.shape} does not match expected {spec.shape}")
    with open(gps_path, newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    if len(rows) != len(grids):
        raise ParseError(f"{gps_path} has {len(rows)} rows but container holds {len(grids)} grids", path=gps_path)
    samples = [
        Sample(g, [float(r["lat"]), float(r["lon"]), float(r["alt"])], r["source_frame"])
        for g, r in zip(grids, rows)
    ]
    return file_spec, samples
