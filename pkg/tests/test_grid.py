import io

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from uav_adnet.errors import BoundsError, ConfigError, ParseError, ShapeError
from uav_adnet.grid import (Box, GridCell, GridSpec, GridVector, ObjectCategory, cell_to_box, center_cell,
                            decode_index, diff_cells, format_grid_text, linear_index, parse_grid_text, rasterize,
                            rasterize_frame, read_grids, set_cell, write_grids)

from conftest import random_grid

CAR = ObjectCategory.CAR


def test_category_bijection():
    names = ["person", "car", "van", "truck", "motorbike", "bike", "bus", "trailer"]
    assert [c.label for c in ObjectCategory] == names
    for i, name in enumerate(names):
        assert ObjectCategory.parse(name) is ObjectCategory(i)
        assert ObjectCategory.parse(i) is ObjectCategory(i)
    with pytest.raises(ValueError):
        ObjectCategory.parse("tank")


def test_spec_validation():
    with pytest.raises(ConfigError):
        GridSpec(rows=0)
    with pytest.raises(ConfigError):
        GridSpec(categories=5)
    assert GridSpec().length == 512


@pytest.mark.parametrize("cell, expected", [((0, 0, 0), 0), ((0, 1, 0), 8), ((3, 3, 7), 127)])
def test_linear_index_examples(small_spec, cell, expected):
    assert linear_index(GridCell.of(*cell), small_spec) == expected


def test_linear_index_out_of_bounds(small_spec):
    with pytest.raises(BoundsError):
        linear_index(GridCell(4, 0, CAR), small_spec)
    with pytest.raises(BoundsError):
        decode_index(128, small_spec)


@given(st.integers(1, 6), st.integers(1, 6), st.data())
def test_index_roundtrip(rows, cols, data):
    spec = GridSpec(rows, cols)
    i = data.draw(st.integers(0, spec.length - 1))
    assert linear_index(decode_index(i, spec), spec) == i


def test_rasterize_empty(small_spec):
    assert rasterize([], small_spec).popcount == 0


def test_rasterize_frame_centre(small_spec):
    grid = rasterize([Box(900, 500, 1020, 580, CAR)], small_spec)
    assert grid.cells() == [GridCell(2, 2, CAR)]


def test_rasterize_duplicate_is_binary(small_spec):
    boxes = [Box(10, 10, 50, 50, CAR), Box(20, 20, 60, 60, CAR)]
    assert rasterize(boxes, small_spec).popcount == 1


def test_rasterize_clamps_and_skips(small_spec):
    # centre after clamping is (40, 40): top-left cell
    grid, skipped = rasterize_frame([Box(-200, -200, 80, 80, CAR), Box(2000, 0, 2100, 50, CAR)], small_spec)
    assert grid.cells() == [GridCell(0, 0, CAR)]
    assert skipped == 1


def test_rasterize_accepts_pairs(small_spec):
    assert rasterize([((0, 0, 10, 10), "bus")], small_spec).cells() == [GridCell(0, 0, ObjectCategory.BUS)]


boxes_strategy = st.lists(
    st.tuples(st.floats(0, 1900), st.floats(0, 1060), st.floats(1, 400), st.floats(1, 400), st.integers(0, 7)),
    max_size=20,
)


@given(boxes_strategy, st.randoms())
def test_rasterize_properties(raw, rnd):
    spec = GridSpec()
    boxes = [Box(x, y, x + w, y + h, ObjectCategory(c)) for x, y, w, h, c in raw]
    grid = rasterize(boxes, spec)
    assert grid.popcount <= len(boxes)
    shuffled = list(boxes)
    rnd.shuffle(shuffled)
    assert rasterize(shuffled, spec) == grid


def test_cell_to_box_inverts_centre(spec):
    for i in range(0, spec.length, 37):
        cell = decode_index(i, spec)
        assert center_cell(cell_to_box(cell, spec), spec) == cell


def test_grid_vector_checks(small_spec):
    with pytest.raises(ShapeError):
        GridVector(small_spec, np.zeros(10))
    with pytest.raises(ShapeError):
        GridVector(small_spec, np.full(128, 2))
    g = GridVector.zeros(small_spec)
    with pytest.raises(ValueError):
        g.bits[0] = 1


def test_set_cell(small_spec):
    zero = GridVector.zeros(small_spec)
    cell = GridCell(1, 2, CAR)
    once = set_cell(zero, cell)
    assert once.popcount == 1
    assert set_cell(once, cell) == once
    assert diff_cells(zero, once) == [cell]
    with pytest.raises(BoundsError):
        set_cell(zero, GridCell(9, 0, CAR))


def test_diff_cells_spec_mismatch(small_spec, spec):
    with pytest.raises(ShapeError):
        diff_cells(GridVector.zeros(small_spec), GridVector.zeros(spec))


@given(st.integers(0, 2**32 - 1))
def test_diff_cells_bruteforce(seed):
    spec = GridSpec(3, 5)
    rng = np.random.default_rng(seed)
    a, b = random_grid(spec, rng, 0.3), random_grid(spec, rng, 0.3)
    brute = [decode_index(i, spec) for i in range(spec.length) if a.bits[i] != b.bits[i]]
    assert diff_cells(a, b) == brute
    assert (diff_cells(a, b) == []) == (a == b)


def test_text_roundtrip(small_spec):
    g = random_grid(small_spec, np.random.default_rng(1), 0.2)
    text = format_grid_text(g)
    assert text.splitlines()[0] == "4 4 8"
    assert parse_grid_text(text) == g


@pytest.mark.parametrize("text", ["", "4 4\n0", "4 4 8\n0101", "4 4 8\n" + "2" * 128])
def test_text_parse_errors(text):
    with pytest.raises((ParseError, ConfigError)):
        parse_grid_text(text)


@given(st.integers(0, 2**32 - 1), st.integers(0, 5))
def test_binary_container_roundtrip(seed, n):
    spec = GridSpec(3, 3)
    rng = np.random.default_rng(seed)
    grids = [random_grid(spec, rng, 0.3) for _ in range(n)]
    buf = io.BytesIO()
    write_grids(buf, grids, spec)
    buf.seek(0)
    spec2, back = read_grids(buf)
    assert spec2.same_layout(spec)
    assert back == grids


def test_binary_container_rejects_garbage(small_spec):
    with pytest.raises(ParseError):
        read_grids(io.BytesIO(b"nope"))
    buf = io.BytesIO()
    write_grids(buf, [GridVector.zeros(small_spec)], small_spec)
    with pytest.raises(ParseError):
        read_grids(io.BytesIO(buf.getvalue()[:-3]))
