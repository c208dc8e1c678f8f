"""Grid-wise scene representation.

A bird-view frame is cut into ``rows x cols`` spatial cells, each carrying one
binary channel per object category. The flattened tensor is a *grid vector*,
laid out row-major with the category as the fastest-varying axis::

    index = (row * cols + col) * categories + category
"""
from __future__ import annotations

import logging
import struct
from dataclasses import dataclass, field
from enum import IntEnum
from typing import BinaryIO, Iterable, NamedTuple, Sequence

import numpy as np

from .errors import BoundsError, ConfigError, ParseError, ShapeError

logger = logging.getLogger(__name__)


class ObjectCategory(IntEnum):
    PERSON = 0
    CAR = 1
    VAN = 2
    TRUCK = 3
    MOTORBIKE = 4
    BIKE = 5
    BUS = 6
    TRAILER = 7

    @property
    def label(self) -> str:
        return self.name.lower()

    @classmethod
    def parse(cls, value) -> "ObjectCategory":
        if isinstance(value, ObjectCategory):
            return value
        if isinstance(value, (int, np.integer)) and not isinstance(value, bool):
            return cls(int(value))
        try:
            return cls[str(value).strip().upper()]
        except KeyError:
            raise ValueError(f"unknown object category {value!r}") from None


N_CATEGORIES = len(ObjectCategory)


@dataclass(frozen=True)
class GridSpec:
    rows: int = 8
    cols: int = 8
    categories: int = N_CATEGORIES
    frame_width_px: int = 1920
    frame_height_px: int = 1080

    def __post_init__(self):
        for name in ("rows", "cols", "frame_width_px", "frame_height_px"):
            value = getattr(self, name)
            if not isinstance(value, (int, np.integer)) or value < 1:
                raise ConfigError(f"GridSpec.{name} must be a positive integer, got {value!r}")
        if self.categories != N_CATEGORIES:
            raise ConfigError(f"GridSpec.categories is fixed at {N_CATEGORIES}")

    @property
    def length(self) -> int:
        return self.rows * self.cols * self.categories

    @property
    def shape(self) -> tuple[int, int, int]:
        return (self.rows, self.cols, self.categories)

    def same_layout(self, other: "GridSpec") -> bool:
        return self.shape == other.shape


class GridCell(NamedTuple):
    row: int
    col: int
    category: ObjectCategory

    @classmethod
    def of(cls, row, col, category) -> "GridCell":
        return cls(int(row), int(col), ObjectCategory.parse(category))


class Box(NamedTuple):
    """Pixel-space bounding box with its category."""

    x_min: float
    y_min: float
    x_max: float
    y_max: float
    category: ObjectCategory


@dataclass(frozen=True, eq=False)
class GridVector:
    spec: GridSpec
    bits: np.ndarray = field(repr=False)

    def __post_init__(self):
        bits = np.asarray(self.bits)
        if bits.ndim != 1 or bits.shape[0] != self.spec.length:
            raise ShapeError(
                f"grid vector has shape {bits.shape}, expected ({self.spec.length},)"
            )
        if bits.size and not np.isin(bits, (0, 1)).all():
            raise ShapeError("grid vector elements must be 0 or 1")
        bits = bits.astype(np.uint8, copy=True)
        bits.setflags(write=False)
        object.__setattr__(self, "bits", bits)

    @classmethod
    def zeros(cls, spec: GridSpec) -> "GridVector":
        return cls(spec, np.zeros(spec.length, dtype=np.uint8))

    def __eq__(self, other):
        if not isinstance(other, GridVector):
            return NotImplemented
        return self.spec.same_layout(other.spec) and np.array_equal(self.bits, other.bits)

    def __hash__(self):
        return hash((self.spec.shape, self.bits.tobytes()))

    def __len__(self):
        return self.spec.length

    @property
    def popcount(self) -> int:
        return int(self.bits.sum())

    def cells(self) -> list[GridCell]:
        return [decode_index(int(i), self.spec) for i in np.flatnonzero(self.bits)]

    def as_tensor(self) -> np.ndarray:
        return self.bits.reshape(self.spec.shape)

    def to_text(self) -> str:
        return format_grid_text(self)


def _check_cell(cell: GridCell, spec: GridSpec) -> None:
    row, col, category = cell
    if not (0 <= row < spec.rows and 0 <= col < spec.cols):
        raise BoundsError(f"cell ({row}, {col}) outside {spec.rows}x{spec.cols} grid")
    if not 0 <= int(category) < spec.categories:
        raise BoundsError(f"category {category!r} outside 0..{spec.categories - 1}")


def linear_index(cell: GridCell, spec: GridSpec) -> int:
    _check_cell(cell, spec)
    row, col, category = cell
    return (row * spec.cols + col) * spec.categories + int(category)


def decode_index(index: int, spec: GridSpec) -> GridCell:
    if not 0 <= index < spec.length:
        raise BoundsError(f"index {index} outside 0..{spec.length - 1}")
    spatial, category = divmod(index, spec.categories)
    row, col = divmod(spatial, spec.cols)
    return GridCell(row, col, ObjectCategory(category))


def _as_box(item) -> Box:
    if isinstance(item, Box):
        return item
    coords, category = item
    x1, y1, x2, y2 = coords
    return Box(x1, y1, x2, y2, ObjectCategory.parse(category))


def center_cell(box: Box, spec: GridSpec) -> GridCell | None:
    """Cell holding the centre of ``box`` after clamping it to the frame.

    Returns ``None`` when the box has no overlap with the frame.
    """
    w, h = spec.frame_width_px, spec.frame_height_px
    x1, x2 = max(box.x_min, 0.0), min(box.x_max, w)
    y1, y2 = max(box.y_min, 0.0), min(box.y_max, h)
    if x1 >= x2 or y1 >= y2:
        return None
    cx, cy = (x1 + x2) / 2.0, (y1 + y2) / 2.0
    col = min(int(cx * spec.cols // w), spec.cols - 1)
    row = min(int(cy * spec.rows // h), spec.rows - 1)
    return GridCell(row, col, box.category)


def rasterize_frame(annotations: Iterable, spec: GridSpec) -> tuple[GridVector, int]:
    """Rasterize boxes and also return how many were skipped as out-of-frame."""
    bits = np.zeros(spec.length, dtype=np.uint8)
    skipped = 0
    for item in annotations:
        cell = center_cell(_as_box(item), spec)
        if cell is None:
            skipped += 1
            continue
        bits[linear_index(cell, spec)] = 1
    if skipped:
        logger.warning("skipped %d box(es) lying fully outside the frame", skipped)
    return GridVector(spec, bits), skipped


def rasterize(annotations: Iterable, spec: GridSpec) -> GridVector:
    if spec is None:
        raise ConfigError("rasterize needs a GridSpec")
    return rasterize_frame(annotations, spec)[0]


def set_cell(grid: GridVector, cell: GridCell) -> GridVector:
    index = linear_index(cell, grid.spec)
    bits = grid.bits.copy()
    bits[index] = 1
    return GridVector(grid.spec, bits)


def diff_cells(a: GridVector, b: GridVector) -> list[GridCell]:
    if not a.spec.same_layout(b.spec):
        raise ShapeError(f"grid specs differ: {a.spec.shape} vs {b.spec.shape}")
    return [decode_index(int(i), a.spec) for i in np.flatnonzero(a.bits != b.bits)]


def cell_to_box(cell: GridCell, spec: GridSpec, size: float = 0.5) -> Box:
    """Pixel box centred in ``cell``; the inverse of :func:`center_cell`."""
    cw = spec.frame_width_px / spec.cols
    ch = spec.frame_height_px / spec.rows
    cx, cy = (cell.col + 0.5) * cw, (cell.row + 0.5) * ch
    hw, hh = size * cw / 2.0, size * ch / 2.0
    return Box(cx - hw, cy - hh, cx + hw, cy + hh, cell.category)


# -- text format -----------------------------------------------------------

def format_grid_text(grid: GridVector) -> str:
    spec = grid.spec
    body = "".join("1" if b else "0" for b in grid.bits)
    return f"{spec.rows} {spec.cols} {spec.categories}\n{body}\n"


def parse_grid_text(text: str, frame_width_px: int = 1920, frame_height_px: int = 1080) -> GridVector:
    lines = [ln.strip() for ln in text.strip().splitlines() if ln.strip()]
    if not lines:
        raise ParseError("empty grid text")
    try:
        rows, cols, cats = (int(v) for v in lines[0].split())
    except ValueError:
        raise ParseError(f"bad header {lines[0]!r}", line=1) from None
    spec = GridSpec(rows, cols, cats, frame_width_px, frame_height_px)
    body = "".join(lines[1:])
    if len(body) != spec.length or set(body) - {"0", "1"}:
        raise ParseError(f"expected {spec.length} characters of 0/1", line=2)
    return GridVector(spec, np.frombuffer(body.encode("ascii"), dtype=np.uint8) - ord("0"))


# -- binary container --------------------------------------------------------
# magic | u32 rows | u32 cols | u32 categories | u32 count |
# count x (u32 n_bits | packed bits, little bit order)

_MAGIC = b"GRDV\x01"
_HEADER = struct.Struct("<IIII")
_LEN = struct.Struct("<I")


def write_grids(fh: BinaryIO, grids: Sequence[GridVector], spec: GridSpec) -> None:
    fh.write(_MAGIC)
    fh.write(_HEADER.pack(spec.rows, spec.cols, spec.categories, len(grids)))
    for grid in grids:
        if not grid.spec.same_layout(spec):
            raise ShapeError("all grids in a container must share one spec")
        fh.write(_LEN.pack(spec.length))
        fh.write(np.packbits(grid.bits, bitorder="little").tobytes())


def read_grids(fh: BinaryIO, frame_width_px: int = 1920, frame_height_px: int = 1080) -> tuple[GridSpec, list[GridVector]]:
    if fh.read(len(_MAGIC)) != _MAGIC:
        raise ParseError("not a grid container (bad magic)")
    raw = fh.read(_HEADER.size)
    if len(raw) != _HEADER.size:
        raise ParseError("truncated grid container header")
    rows, cols, cats, count = _HEADER.unpack(raw)
    spec = GridSpec(rows, cols, cats, frame_width_px, frame_height_px)
    nbytes = (spec.length + 7) // 8
    grids = []
    for k in range(count):
        raw = fh.read(_LEN.size)
        if len(raw) != _LEN.size:
            raise ParseError(f"truncated container at record {k}")
        (n_bits,) = _LEN.unpack(raw)
        if n_bits != spec.length:
            raise ParseError(f"record {k} has {n_bits} bits, expected {spec.length}")
        payload = fh.read(nbytes)
        if len(payload) != nbytes:
            raise ParseError(f"truncated container at record {k}")
        bits = np.unpackbits(np.frombuffer(payload, dtype=np.uint8), count=n_bits, bitorder="little")
        grids.append(GridVector(spec, bits))
    return spec, grids


def stack_bits(grids: Sequence[GridVector]) -> np.ndarray:
    """Stack grid vectors into an ``(n, length)`` float array."""
    if not grids:
        return np.zeros((0, 0))
    return np.stack([g.bits for g in grids]).astype(np.float64)
