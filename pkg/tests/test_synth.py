import json
import logging

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from uav_adnet.errors import ConfigError, ParseError, SaturationError
from uav_adnet.grid import GridCell, GridSpec, GridVector, ObjectCategory, diff_cells, linear_index
from uav_adnet.ingest import Sample
from uav_adnet.synth import (SyntheticWorld, ZoneRule, default_rules, default_rules_path, eligible_indices,
                             generate_test_set, inject, load_rules, load_synthetic, parse_rules, save_rules,
                             save_synthetic)

from conftest import random_samples

PERSON, CAR, BIKE = ObjectCategory.PERSON, ObjectCategory.CAR, ObjectCategory.BIKE


def one_cell_mask(spec, row, col):
    m = np.zeros((spec.rows, spec.cols), dtype=int)
    m[row, col] = 1
    return m


def test_rule_invariants(small_spec):
    with pytest.raises(ConfigError):
        ZoneRule(PERSON, np.zeros((4, 4)), "private_forbidden")
    with pytest.raises(ConfigError):
        ZoneRule(PERSON, one_cell_mask(small_spec, 0, 0), "odd")


def test_load_rules_empty_warns(tmp_path, caplog):
    (tmp_path / "r.json").write_text("[]")
    with caplog.at_level(logging.WARNING):
        assert load_rules(tmp_path / "r.json") == []
    assert "no rules" in caplog.text


def test_load_rules_merges_duplicates(tmp_path, small_spec):
    entries = [
        {"category": "person", "kind": "private_forbidden", "mask": one_cell_mask(small_spec, 0, 0).tolist()},
        {"category": "person", "kind": "private_forbidden", "mask": one_cell_mask(small_spec, 1, 1).tolist()},
    ]
    (tmp_path / "r.json").write_text(json.dumps(entries))
    (rule,) = load_rules(tmp_path / "r.json", small_spec)
    assert rule.mask.sum() == 2 and rule.mask[0, 0] and rule.mask[1, 1]


def test_load_rules_errors(tmp_path, small_spec):
    (tmp_path / "r.json").write_text(json.dumps([{"category": "tank", "kind": "rare", "mask": [[1]]}]))
    with pytest.raises(ParseError):
        load_rules(tmp_path / "r.json")
    (tmp_path / "r.json").write_text(json.dumps([{"category": "car", "kind": "rare", "mask": [[1]]}]))
    with pytest.raises(ConfigError):
        load_rules(tmp_path / "r.json", small_spec)


def test_row_string_masks():
    (rule,) = parse_rules([{"category": "car", "kind": "rare", "mask": ["010", "000"]}])
    assert rule.mask.tolist() == [[False, True, False], [False, False, False]]


def test_bundled_rules_match_builtin(spec, tmp_path):
    assert load_rules(default_rules_path(), spec) == default_rules(spec)
    save_rules(tmp_path / "r.json", default_rules(spec))
    assert load_rules(tmp_path / "r.json", spec) == default_rules(spec)
    kinds = {r.kind for r in default_rules(spec)}
    assert kinds == {"private_forbidden", "public_forbidden", "rare"}


def test_inject_unique_choice(small_spec):
    rule = ZoneRule(PERSON, one_cell_mask(small_spec, 2, 3), "private_forbidden")
    res = inject(GridVector.zeros(small_spec), 1, [rule], rng_seed=9)
    assert res.injected == (GridCell(2, 3, PERSON),)
    assert res.grid.popcount == 1


def test_inject_deterministic_and_saturation(spec):
    rules = default_rules(spec)
    src = GridVector.zeros(spec)
    a, b = inject(src, 2, rules, count=3, rng_seed=4), inject(src, 2, rules, count=3, rng_seed=4)
    assert a.grid == b.grid and a.injected == b.injected
    with pytest.raises(SaturationError):
        inject(src, 1, rules, count=9)
    with pytest.raises(ConfigError):
        inject(src, 4, rules)


def test_inject_needs_matching_rule(small_spec):
    rule = ZoneRule(CAR, one_cell_mask(small_spec, 0, 0), "rare")
    with pytest.raises(ConfigError):
        inject(GridVector.zeros(small_spec), 1, [rule])


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**31), st.sampled_from([1, 2, 3]), st.integers(1, 3))
def test_injection_properties(seed, scenario, count):
    spec = GridSpec()
    rules = default_rules(spec)
    src = SyntheticWorld(spec).scene(np.random.default_rng(seed))
    res = inject(src, scenario, rules, count=count, rng_seed=seed)
    assert diff_cells(src, res.grid) == list(res.injected)
    assert res.source_grid() == src
    kind = {1: "private_forbidden", 2: "public_forbidden", 3: "rare"}[scenario]
    allowed = {linear_index(c, spec) for r in rules if r.kind == kind for c in r.cells()}
    assert all(linear_index(c, spec) in allowed for c in res.injected)
    assert set(eligible_indices(src, scenario, rules)) <= allowed


def test_generate_test_set(spec, tmp_path):
    sources = random_samples(spec, 2, seed=1, density=0.01)
    pairs = generate_test_set(sources, 3, 3, default_rules(spec), seed=5)
    assert len(pairs) == 6
    for sample, res in pairs:
        src = sources[res.source_sample]
        assert len(diff_cells(src.grid, sample.grid)) == 1
        np.testing.assert_array_equal(sample.gps, src.gps)
    save_synthetic(tmp_path / "a", pairs, spec)
    save_synthetic(tmp_path / "b", generate_test_set(sources, 3, 3, default_rules(spec), seed=5), spec)
    for suffix in (".grids", ".gps.csv", ".manifest.csv"):
        assert (tmp_path / f"a{suffix}").read_bytes() == (tmp_path / f"b{suffix}").read_bytes()
    manifest = (tmp_path / "a.manifest.csv").read_text().splitlines()
    assert len(manifest) - 1 == sum(len(r.injected) for _, r in pairs)
    back = load_synthetic(tmp_path / "a", spec)
    assert [r.injected for _, r in back] == [r.injected for _, r in pairs]
    assert [r.source_grid() for _, r in back] == [r.source_grid() for _, r in pairs]


def test_generate_test_set_saturation_names_source(small_spec):
    rule = ZoneRule(PERSON, one_cell_mask(small_spec, 0, 0), "private_forbidden")
    full = GridVector(small_spec, np.eye(1, small_spec.length, 0, dtype=np.uint8)[0])
    sources = [Sample(GridVector.zeros(small_spec), np.zeros(3), "a"), Sample(full, np.zeros(3), "b")]
    with pytest.raises(SaturationError) as info:
        generate_test_set(sources, 1, 1, [rule])
    assert info.value.source_index == 1
    with pytest.raises(ConfigError):
        generate_test_set([], 1, 1, [rule])


def test_world_respects_rules(spec):
    world = SyntheticWorld(spec)
    samples = world.samples(300, seed=0)
    rules = default_rules(spec)
    X = np.stack([s.grid.bits for s in samples]).astype(bool)
    for rule in rules:
        idx = [linear_index(c, spec) for c in rule.cells()]
        assert not X[:, idx].any(), (rule.category, rule.kind)
    assert all(world.is_consistent(s.grid) for s in samples)
    # every normal (category, cell) pair shows up regularly
    freq = X.mean(axis=0)[world.allowed_mask()]
    assert freq.min() > 0.05


def test_world_is_seeded(spec):
    world = SyntheticWorld(spec)
    a, b = world.samples(5, seed=3), world.samples(5, seed=3)
    assert [s.grid for s in a] == [s.grid for s in b]
    assert all(((0 <= s.gps) & (s.gps <= 1)).all() for s in a)
