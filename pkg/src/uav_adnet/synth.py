"""Synthetic anomaly injection and a rule-consistent toy world.

Rule files are JSON arrays of ``{"category": str, "kind": str, "mask": [[0/1, ...], ...]}``
entries. ``kind`` is one of ``private_forbidden`` (scenario 1),
``public_forbidden`` (scenario 2) or ``rare`` (scenario 3).
"""
from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import ConfigError, MissingFileError, ParseError, SaturationError
from .grid import GridCell, GridSpec, GridVector, ObjectCategory, decode_index, linear_index
from .ingest import Sample, load_dataset, save_dataset

logger = logging.getLogger(__name__)

RULE_KINDS = ("private_forbidden", "public_forbidden", "rare")
SCENARIO_KIND = {1: "private_forbidden", 2: "public_forbidden", 3: "rare"}
MANIFEST_COLUMNS = ("sample_index", "source_index", "scenario", "row", "col", "category")


@dataclass(frozen=True, eq=False)
class ZoneRule:
    category: ObjectCategory
    mask: np.ndarray
    kind: str

    def __post_init__(self):
        mask = np.asarray(self.mask)
        if mask.ndim != 2 or (mask.size and not np.isin(mask, (0, 1)).all()):
            raise ConfigError("rule mask must be a 2-D 0/1 matrix")
        if not mask.any():
            raise ConfigError(f"rule mask for {self.category.label}/{self.kind} has no set cell")
        if self.kind not in RULE_KINDS:
            raise ConfigError(f"unknown rule kind {self.kind!r}")
        mask = mask.astype(bool)
        mask.setflags(write=False)
        object.__setattr__(self, "mask", mask)

    def __eq__(self, other):
        if not isinstance(other, ZoneRule):
            return NotImplemented
        return (self.category, self.kind) == (other.category, other.kind) and np.array_equal(self.mask, other.mask)

    def cells(self) -> list[GridCell]:
        return [GridCell(int(r), int(c), self.category) for r, c in zip(*np.nonzero(self.mask))]

    def to_dict(self):
        return {"category": self.category.label, "kind": self.kind, "mask": self.mask.astype(int).tolist()}


def check_scenario(scenario) -> int:
    try:
        value = int(scenario)
    except (TypeError, ValueError):
        value = None
    if value not in SCENARIO_KIND or isinstance(scenario, bool):
        raise ConfigError(f"scenario must be 1, 2 or 3, got {scenario!r}")
    return value


@dataclass(frozen=True, eq=False)
class InjectionResult:
    grid: GridVector
    injected: tuple[GridCell, ...]
    scenario: int
    source_sample: int

    def source_grid(self) -> GridVector:
        bits = self.grid.bits.copy()
        for cell in self.injected:
            bits[linear_index(cell, self.grid.spec)] = 0
        return GridVector(self.grid.spec, bits)


def merge_rules(rules: Sequence[ZoneRule]) -> list[ZoneRule]:
    merged: dict[tuple[str, ObjectCategory], np.ndarray] = {}
    for rule in rules:
        key = (rule.kind, rule.category)
        if key in merged:
            if merged[key].shape != rule.mask.shape:
                raise ConfigError("rules for the same category and kind have different mask shapes")
            merged[key] = merged[key] | rule.mask
        else:
            merged[key] = rule.mask.copy()
    order = sorted(merged, key=lambda k: (RULE_KINDS.index(k[0]), int(k[1])))
    return [ZoneRule(cat, merged[(kind, cat)], kind) for kind, cat in order]


def _mask_array(raw) -> np.ndarray:
    """Masks are either nested 0/1 lists or one ``"0110..."`` string per row."""
    if isinstance(raw, list) and raw and all(isinstance(r, str) for r in raw):
        if any(set(r) - {"0", "1"} for r in raw) or len({len(r) for r in raw}) != 1:
            raise ValueError("mask rows must be equal-length strings of 0 and 1")
        return np.array([[int(ch) for ch in r] for r in raw])
    return np.asarray(raw)


def parse_rules(entries, spec: GridSpec | None = None) -> list[ZoneRule]:
    if isinstance(entries, dict):
        entries = entries.get("rules", [])
    if not isinstance(entries, list):
        raise ParseError("rule file must hold a JSON array of rules")
    rules = []
    for i, entry in enumerate(entries):
        try:
            category = ObjectCategory.parse(entry["category"])
            kind = str(entry["kind"])
            mask = _mask_array(entry["mask"])
        except KeyError as exc:
            raise ParseError(f"rule {i} missing key {exc.args[0]!r}") from None
        except ValueError as exc:
            raise ParseError(f"rule {i}: {exc}") from None
        if kind not in RULE_KINDS:
            raise ParseError(f"rule {i}: unknown kind {kind!r}")
        if spec is not None and mask.shape != (spec.rows, spec.cols):
            raise ConfigError(f"rule {i}: mask shape {mask.shape} does not match grid {spec.rows}x{spec.cols}")
        rules.append(ZoneRule(category, mask, kind))
    if not rules:
        logger.warning("rule file contains no rules")
    return merge_rules(rules)


def load_rules(path, spec: GridSpec | None = None) -> list[ZoneRule]:
    path = Path(path)
    if not path.is_file():
        raise MissingFileError(path)
    try:
        entries = json.loads(path.read_text(encoding="utf-8") or "[]")
    except json.JSONDecodeError as exc:
        raise ParseError(f"invalid JSON: {exc.msg}", line=exc.lineno, path=path) from None
    return parse_rules(entries, spec)


def save_rules(path, rules: Sequence[ZoneRule]) -> None:
    lines = [json.dumps(r.to_dict()) for r in rules]
    Path(path).write_text("[\n " + ",\n ".join(lines) + "\n]\n", encoding="utf-8")


def eligible_indices(source: GridVector, scenario: int, rules: Sequence[ZoneRule]) -> np.ndarray:
    spec = source.spec
    kind = SCENARIO_KIND[check_scenario(scenario)]
    matching = [r for r in rules if r.kind == kind]
    if not matching:
        raise ConfigError(f"no rule of kind {kind!r} for scenario {scenario}")
    found = set()
    for rule in matching:
        if rule.mask.shape != (spec.rows, spec.cols):
            raise ConfigError(f"rule mask {rule.mask.shape} does not match grid {spec.rows}x{spec.cols}")
        for cell in rule.cells():
            index = linear_index(cell, spec)
            if not source.bits[index]:
                found.add(index)
    return np.array(sorted(found), dtype=np.int64)


def inject(source: GridVector, scenario, rules: Sequence[ZoneRule], count: int = 1, rng_seed=0) -> InjectionResult:
    if count < 1:
        raise ConfigError("count must be at least 1")
    scenario = check_scenario(scenario)
    pool = eligible_indices(source, scenario, rules)
    if len(pool) < count:
        raise SaturationError(f"only {len(pool)} eligible empty cell(s) for {count} injection(s)")
    rng = np.random.default_rng(rng_seed)
    chosen = np.sort(rng.choice(pool, size=count, replace=False))
    bits = source.bits.copy()
    bits[chosen] = 1
    cells = tuple(decode_index(int(i), source.spec) for i in chosen)
    return InjectionResult(GridVector(source.spec, bits), cells, scenario, -1)


def generate_test_set(
    sources: Sequence[Sample],
    scenario,
    per_source: int,
    rules: Sequence[ZoneRule],
    seed: int = 0,
    count: int = 1,
) -> list[tuple[Sample, InjectionResult]]:
    if not sources:
        raise ConfigError("generate_test_set needs at least one source sample")
    scenario = check_scenario(scenario)
    out = []
    for j, src in enumerate(sources):
        for k in range(per_source):
            try:
                res = inject(src.grid, scenario, rules, count, rng_seed=(seed ^ j, k))
            except SaturationError as exc:
                raise SaturationError(f"source {j}: {exc}", source_index=j) from None
            res = InjectionResult(res.grid, res.injected, scenario, j)
            out.append((Sample(res.grid, src.gps, src.source_frame), res))
    return out


def save_synthetic(stem, pairs: Sequence[tuple[Sample, InjectionResult]], spec: GridSpec) -> None:
    stem = Path(stem)
    save_dataset(stem, [s for s, _ in pairs], spec)
    with open(stem.with_name(stem.name + ".manifest.csv"), "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(MANIFEST_COLUMNS)
        for i, (_, res) in enumerate(pairs):
            for cell in res.injected:
                writer.writerow([i, res.source_sample, res.scenario, cell.row, cell.col, cell.category.label])


def load_synthetic(stem, spec: GridSpec | None = None) -> list[tuple[Sample, InjectionResult]]:
    stem = Path(stem)
    _, samples = load_dataset(stem, spec)
    manifest = stem.with_name(stem.name + ".manifest.csv")
    if not manifest.is_file():
        raise MissingFileError(manifest)
    injected: dict[int, list] = {}
    meta: dict[int, tuple[int, int]] = {}
    with open(manifest, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            i = int(row["sample_index"])
            injected.setdefault(i, []).append(GridCell.of(row["row"], row["col"], row["category"]))
            meta[i] = (int(row["source_index"]), int(row["scenario"]))
    pairs = []
    for i, s in enumerate(samples):
        if i not in injected:
            raise ParseError(f"manifest has no injected cell for sample {i}", path=manifest)
        cells = tuple(sorted(injected[i], key=lambda c: linear_index(c, s.grid.spec)))
        source_index, scenario = meta[i]
        pairs.append((s, InjectionResult(s.grid, cells, scenario, source_index)))
    return pairs


# -- toy world -------------------------------------------------------------------
# Zones are fractional rectangles (row0, row1, col0, col1) so any grid size works.

ZONES = {
    "back_zone": (0.0, 0.25, 0.0, 0.5),
    "plaza": (0.25, 0.375, 0.0, 0.5),
    "car_park": (0.0, 0.375, 0.5, 1.0),
    "sidewalk": (0.375, 0.5, 0.0, 1.0),
    "road": (0.5, 0.75, 0.0, 1.0),
    "bus_stop": (0.5, 0.625, 0.0, 0.25),
    "loading_bay": (0.5, 0.625, 0.75, 1.0),
    "bike_road": (0.75, 0.875, 0.0, 1.0),
    "bike_park": (0.875, 1.0, 0.0, 0.5),
    "green": (0.875, 1.0, 0.5, 1.0),
}

# Sparse objects: category -> (zones it normally occupies, expected count per scene).
# Every (category, cell) pair listed here turns up in roughly a fifth of the
# scenes or more; a pair seen far less often would be "rare", which is what
# scenario 3 tests, so it cannot also count as normal ground truth.
DEFAULT_HABITS = {
    ObjectCategory.PERSON: (("plaza", "sidewalk"), 3.0),
    ObjectCategory.TRUCK: (("loading_bay",), 0.6),
    ObjectCategory.TRAILER: (("loading_bay",), 0.4),
    ObjectCategory.BUS: (("bus_stop",), 0.5),
    ObjectCategory.MOTORBIKE: (("bike_park",), 1.0),
    ObjectCategory.BIKE: (("bike_park",), 0.8),
}

DEFAULT_RULES = (
    (ObjectCategory.PERSON, "private_forbidden", ("back_zone",)),
    (ObjectCategory.BIKE, "public_forbidden", ("road",)),
    (ObjectCategory.CAR, "public_forbidden", ("bike_road",)),
    (ObjectCategory.TRUCK, "rare", ("car_park",)),
    (ObjectCategory.BIKE, "rare", ("car_park",)),
)


def zone_mask(name: str, rows: int, cols: int) -> np.ndarray:
    r0, r1, c0, c1 = ZONES[name]
    mask = np.zeros((rows, cols), dtype=bool)
    mask[int(round(r0 * rows)):int(round(r1 * rows)), int(round(c0 * cols)):int(round(c1 * cols))] = True
    return mask


def default_rules(spec: GridSpec | None = None) -> list[ZoneRule]:
    spec = spec or GridSpec()
    rules = []
    for category, kind, zones in DEFAULT_RULES:
        mask = np.zeros((spec.rows, spec.cols), dtype=bool)
        for z in zones:
            mask |= zone_mask(z, spec.rows, spec.cols)
        rules.append(ZoneRule(category, mask, kind))
    return merge_rules(rules)


def default_rules_path() -> Path:
    return Path(str(resources.files("uav_adnet") / "data" / "default_rules.json"))


class SyntheticWorld:
    """Scene generator that only places objects where they normally belong.

    Each scene has a few structured parts driven by low-dimensional factors
    and a sparse random part:

    * the car park is at least half full and fills in row-major order up to a
      uniform level; spots in its first row hold a van with probability
      ``van_share``, every other spot holds a car;
    * every road row carries one platoon of cars of uniform length 0..4 at a
      uniform offset;
    * the bike road carries one run of bikes of length 0..3;
    * sparse objects from ``habits`` are Poisson-counted and placed uniformly
      without replacement over their allowed cells.

    GPS features are uniform in the unit cube (a single surveyed site).
    """

    def __init__(self, spec: GridSpec | None = None, habits=None, van_share: float = 0.5,
                 max_platoon: int = 4, max_bike_run: int = 3):
        self.spec = spec or GridSpec()
        self.habits = dict(DEFAULT_HABITS if habits is None else habits)
        self.van_share = van_share
        self.max_platoon = max_platoon
        self.max_bike_run = max_bike_run
        rows, cols = self.spec.rows, self.spec.cols
        self.car_park = [(int(r), int(c)) for r, c in zip(*np.nonzero(zone_mask("car_park", rows, cols)))]
        self.road_rows = sorted({int(r) for r in np.nonzero(zone_mask("road", rows, cols))[0]})
        self.bike_rows = sorted({int(r) for r in np.nonzero(zone_mask("bike_road", rows, cols))[0]})
        self.sparse_pool = {}
        for category, (zones, _) in self.habits.items():
            mask = np.zeros((rows, cols), dtype=bool)
            for z in zones:
                mask |= zone_mask(z, rows, cols)
            self.sparse_pool[category] = np.array(
                [linear_index(GridCell(int(r), int(c), category), self.spec) for r, c in zip(*np.nonzero(mask))],
                dtype=np.int64,
            )

    def _run(self, bits, row, length, category, rng):
        cols = self.spec.cols
        if length <= 0:
            return
        start = int(rng.integers(0, cols - length + 1))
        for c in range(start, start + length):
            bits[linear_index(GridCell(row, c, category), self.spec)] = 1

    def scene(self, rng: np.random.Generator) -> GridVector:
        bits = np.zeros(self.spec.length, dtype=np.uint8)
        n_spots = len(self.car_park)
        fill = int(rng.integers(n_spots // 2, n_spots + 1))
        vans = rng.random(n_spots) < self.van_share
        van_row = self.car_park[0][0] if n_spots else -1
        for k in range(fill):
            van = vans[k] and self.car_park[k][0] == van_row
            category = ObjectCategory.VAN if van else ObjectCategory.CAR
            bits[linear_index(GridCell(*self.car_park[k], category), self.spec)] = 1
        for row in self.road_rows:
            self._run(bits, row, int(rng.integers(0, min(self.max_platoon, self.spec.cols) + 1)), ObjectCategory.CAR, rng)
        for row in self.bike_rows:
            self._run(bits, row, int(rng.integers(0, min(self.max_bike_run, self.spec.cols) + 1)), ObjectCategory.BIKE, rng)
        for category in sorted(self.habits):
            pool = self.sparse_pool[category]
            n = min(int(rng.poisson(self.habits[category][1])), len(pool))
            if n:
                bits[rng.choice(pool, size=n, replace=False)] = 1
        return GridVector(self.spec, bits)

    def samples(self, n: int, seed, prefix: str = "scene") -> list[Sample]:
        rng = np.random.default_rng(seed)
        out = []
        for i in range(n):
            grid = self.scene(rng)
            out.append(Sample(grid, rng.uniform(0.0, 1.0, size=3), f"{prefix}{i:05d}"))
        return out

    def allowed_mask(self) -> np.ndarray:
        """Boolean mask over grid-vector indices that normal scenes may occupy."""
        allowed = np.zeros(self.spec.length, dtype=bool)
        for pool in self.sparse_pool.values():
            allowed[pool] = True
        for r, c in self.car_park:
            allowed[linear_index(GridCell(r, c, ObjectCategory.CAR), self.spec)] = True
            if r == self.car_park[0][0]:
                allowed[linear_index(GridCell(r, c, ObjectCategory.VAN), self.spec)] = True
        for rows, cat in ((self.road_rows, ObjectCategory.CAR), (self.bike_rows, ObjectCategory.BIKE)):
            for r in rows:
                for c in range(self.spec.cols):
                    allowed[linear_index(GridCell(r, c, cat), self.spec)] = True
        return allowed

    def is_consistent(self, grid: GridVector) -> bool:
        return not (grid.bits.astype(bool) & ~self.allowed_mask()).any()
