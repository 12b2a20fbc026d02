import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cdsp import kernels
from cdsp.distmap import (
    EmptySourceError,
    boundary_extract,
    brute_force_squared_edt,
    load_distance_map,
    pseudo_boundary_distance_map,
    save_distance_map,
    scribble_distance_map,
    squared_edt,
)

IGN = 255


@st.composite
def masks(draw, max_side=40):
    h = draw(st.integers(1, max_side))
    w = draw(st.integers(1, max_side))
    density = draw(st.sampled_from([0.002, 0.02, 0.2, 0.9]))
    seed = draw(st.integers(0, 2**32 - 1))
    m = np.random.default_rng(seed).random((h, w)) < density
    if not m.any():
        m[draw(st.integers(0, h - 1)), draw(st.integers(0, w - 1))] = True
    return m


def test_edt_trivial_cases():
    m = np.zeros((5, 6), dtype=bool)
    m[2, 3] = True
    d = squared_edt(m, 5, 6)
    assert d[2, 3] == 0 and d[0, 0] == 13 and d.dtype == np.int64
    assert not squared_edt(np.ones((4, 4), dtype=bool), 4, 4).any()
    assert np.array_equal(squared_edt([(2, 3)], 5, 6), d)


def test_edt_empty_sources():
    with pytest.raises(EmptySourceError):
        squared_edt(np.zeros((3, 3), dtype=bool), 3, 3)
    with pytest.raises(EmptySourceError):
        squared_edt([], 3, 3)


def test_edt_matches_brute_force_on_100_random_64x64():
    rng = np.random.default_rng(0)
    for i in range(100):
        m = rng.random((64, 64)) < [0.001, 0.01, 0.05, 0.3][i % 4]
        m[rng.integers(64), rng.integers(64)] = True
        assert np.array_equal(squared_edt(m, 64, 64), brute_force_squared_edt(m, 64, 64))


@given(masks())
def test_edt_matches_brute_force_property(m):
    assert np.array_equal(squared_edt(m, *m.shape), brute_force_squared_edt(m, *m.shape))


@settings(max_examples=5)
@given(st.integers(0, 2**32 - 1))
def test_edt_matches_brute_force_128(seed):
    m = np.random.default_rng(seed).random((128, 128)) < 0.003
    m[0, 127] = True
    ref = brute_force_squared_edt(m, 128, 128)
    assert np.array_equal(squared_edt(m, 128, 128, kernels.dt1d_lines_np), ref)
    assert np.array_equal(squared_edt(m, 128, 128), ref)


def test_boundary_examples():
    assert not boundary_extract(np.zeros((6, 6), np.uint8)).any()
    one = np.zeros((5, 5), np.uint8)
    one[2, 2] = 3
    assert np.argwhere(boundary_extract(one)).tolist() == [[2, 2]]
    sq = np.zeros((9, 9), np.uint8)
    sq[2:7, 2:7] = 1
    b = boundary_extract(sq)
    assert b.sum() == 16
    assert not b[3:6, 3:6].any()


def test_boundary_includes_image_edge_and_class_changes():
    v = np.ones((6, 6), np.uint8)
    v[:, 3:] = 2
    b = boundary_extract(v)
    assert b[0].all() and b[:, 0].all() and b[:, 2].all() and b[:, 3].all()
    assert not b[1:5, 1].any() and not b[1:5, 4].any()


def test_scribble_map_examples():
    v = np.full((9, 9), IGN, np.uint8)
    v[4, 4] = 2
    v[0, 0] = 0  # background scribble is not a source
    d = scribble_distance_map(v, 0.0)
    assert d.values[4, 4] == 1.0
    assert d.values[4, 5] == pytest.approx(0.996078, abs=1e-6)
    assert d.values[0, 0] == pytest.approx(1 - math.floor(math.sqrt(32)) / 255)
    far = scribble_distance_map(v, 10.0)
    assert far.values[4, 6] == 0.0  # e^10 * 4 > 255^2
    assert ((0 <= d.values) & (d.values <= 1)).all()


def test_pseudo_map_examples():
    v = np.zeros((12, 12), np.uint8)
    v[2:11, 2:11] = 1
    d = pseudo_boundary_distance_map(v, 0.0)
    assert d.values[2, 5] == 0.0
    assert d.values[4, 6] == pytest.approx(2 / 255, abs=1e-6)  # squared distance 4 to the top edge
    assert pseudo_boundary_distance_map(v, 12.0).values[0, 0] == 1.0
    assert ((0 <= d.values) & (d.values <= 1)).all()


def test_degenerate_maps():
    ds = scribble_distance_map(np.full((4, 4), IGN, np.uint8), 1.0)
    assert ds.degenerate and not ds.values.any()
    dc = pseudo_boundary_distance_map(np.zeros((4, 4), np.uint8), 6.0)
    assert dc.degenerate and not dc.values.any()


@given(masks(max_side=24), st.floats(-2, 8), st.floats(0, 3))
def test_maps_monotone_in_lambda(m, lam, extra):
    v = np.where(m, 1, 0).astype(np.uint8)
    lo_s, hi_s = scribble_distance_map(np.where(m, 1, IGN), lam), scribble_distance_map(np.where(m, 1, IGN), lam + extra)
    assert (hi_s.values <= lo_s.values).all()
    if boundary_extract(v).any():
        lo_c, hi_c = pseudo_boundary_distance_map(v, lam), pseudo_boundary_distance_map(v, lam + extra)
        assert (hi_c.values >= lo_c.values).all()


@given(masks(max_side=24), st.floats(-2, 8))
def test_maps_monotone_in_distance(m, lam):
    sq = squared_edt(m, *m.shape).ravel()
    order = np.argsort(sq, kind="stable")
    ds = scribble_distance_map(np.where(m, 1, IGN), lam).values.ravel()[order]
    assert (np.diff(ds) <= 0).all()


@given(masks(max_side=20), st.integers(0, 1000))
def test_edt_source_order_invariant(m, seed):
    pts = [tuple(p) for p in np.argwhere(m)]
    shuffled = [pts[i] for i in np.random.default_rng(seed).permutation(len(pts))]
    assert np.array_equal(squared_edt(pts, *m.shape), squared_edt(shuffled, *m.shape))


@pytest.mark.parametrize("suffix", [".pgm", ".cdspt"])
def test_distance_map_persistence(tmp_path, suffix):
    v = np.zeros((16, 16), np.uint8)
    v[3:12, 4:14] = 2
    for dmap in (pseudo_boundary_distance_map(v, 6.0), scribble_distance_map(np.where(v == 2, 2, IGN), 1.0)):
        path = tmp_path / f"{dmap.kind}{suffix}"
        save_distance_map(path, dmap)
        back = load_distance_map(path, kind=None if suffix == ".pgm" else dmap.kind)
        assert back.kind == dmap.kind
        assert np.array_equal(back.raw, dmap.raw)
        assert np.allclose(back.values, dmap.values, atol=1e-7)
        if suffix == ".pgm":
            assert back.lam == dmap.lam


def test_degenerate_flag_survives_pgm(tmp_path):
    dmap = scribble_distance_map(np.full((3, 3), IGN, np.uint8), 1.0)
    save_distance_map(tmp_path / "d.pgm", dmap)
    back = load_distance_map(tmp_path / "d.pgm")
    assert back.degenerate and not back.values.any()
