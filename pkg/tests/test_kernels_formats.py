import os
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from cdsp import kernels, pnm
from cdsp.engine.serialize import MAGIC, TensorFormatError, load_array, load_tensor, save_tensor, tensor_from_bytes, tensor_to_bytes

needs_numba = pytest.mark.skipif(kernels.dt1d_lines_nb is None, reason="numba unavailable")


def brute_dt1d(f):
    n = f.shape[1]
    idx = np.arange(n)
    return np.min(f[:, None, :] + (idx[:, None] - idx[None, :]) ** 2, axis=2)


@given(st.integers(1, 20), st.integers(1, 6), st.integers(0, 2**32 - 1))
def test_dt1d_numpy_matches_brute(n, rows, seed):
    rng = np.random.default_rng(seed)
    f = np.where(rng.random((rows, n)) < 0.3, rng.integers(0, 30, (rows, n)).astype(float), np.inf)
    assert np.array_equal(kernels.dt1d_lines_np(f), brute_dt1d(f))


@needs_numba
@given(st.integers(1, 20), st.integers(1, 6), st.integers(0, 2**32 - 1))
def test_dt1d_twins_agree(n, rows, seed):
    rng = np.random.default_rng(seed)
    f = np.where(rng.random((rows, n)) < 0.3, rng.integers(0, 30, (rows, n)).astype(float), np.inf)
    assert np.array_equal(kernels.dt1d_lines_nb(f), kernels.dt1d_lines_np(f))


@needs_numba
@pytest.mark.parametrize("k,stride", [(1, 1), (3, 1), (3, 2), (2, 2)])
def test_im2col_col2im_twins_bitwise(k, stride):
    rng = np.random.default_rng(k * 10 + stride)
    xp = rng.normal(size=(2, 3, 9, 8)).astype(np.float32)
    cols = kernels.im2col_np(xp, k, k, stride)
    assert np.array_equal(kernels.im2col_nb(xp, k, k, stride), cols)
    assert np.array_equal(kernels.col2im_nb(cols, 2, 3, 9, 8, k, k, stride), kernels.col2im_np(cols, 2, 3, 9, 8, k, k, stride))


def test_col2im_is_adjoint_of_im2col():
    rng = np.random.default_rng(1)
    xp = rng.normal(size=(1, 2, 7, 7))
    cols = kernels.im2col_np(xp, 3, 3, 2)
    g = rng.normal(size=cols.shape)
    lhs = (cols * g).sum()
    rhs = (xp * kernels.col2im_np(g, 1, 2, 7, 7, 3, 3, 2)).sum()
    assert lhs == pytest.approx(rhs, rel=1e-12)


@needs_numba
def test_matmul_ordered_twins_bitwise():
    rng = np.random.default_rng(2)
    a, b = rng.normal(size=(5, 7)), rng.normal(size=(7, 4))
    assert np.array_equal(kernels.matmul_ordered_nb(a, b), kernels.matmul_ordered_np(a, b))


def test_numpy_backend_flag_in_subprocess():
    env = dict(os.environ, CDSP_DISABLE_NUMBA="1")
    code = "import cdsp, cdsp.kernels as k; print(cdsp.backend(), k.dt1d_lines_nb is None)"
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True).stdout.split()
    assert out == ["numpy", "True"]


# -- binary tensor format ----------------------------------------------------------


@given(
    arrays(
        st.sampled_from([np.float32, np.float64]),
        st.lists(st.integers(0, 5), min_size=0, max_size=4).map(tuple),
        elements=st.floats(-1e6, 1e6, width=32),
    )
)
def test_tensor_bytes_round_trip(arr):
    back = tensor_from_bytes(tensor_to_bytes(arr))
    assert back.dtype == arr.dtype and back.shape == arr.shape
    assert back.tobytes() == arr.tobytes()


def test_tensor_header_layout(tmp_path):
    arr = np.arange(6, dtype=np.float64).reshape(2, 3)
    buf = tensor_to_bytes(arr)
    assert buf[:7] == MAGIC and buf[7] == 1 and buf[8] == 2
    assert buf[9:17] == (2).to_bytes(4, "little") + (3).to_bytes(4, "little")
    assert buf[17:25] == np.float64(0).tobytes()
    save_tensor(tmp_path / "a.cdspt", arr)
    assert np.array_equal(load_array(tmp_path / "a.cdspt"), arr)
    assert load_tensor(tmp_path / "a.cdspt", requires_grad=True).requires_grad


@pytest.mark.parametrize("buf", [b"nope", MAGIC + bytes([7, 0]), MAGIC + bytes([0, 1]), MAGIC + bytes([0, 1]) + (3).to_bytes(4, "little") + b"\0" * 4])
def test_tensor_format_errors(buf):
    with pytest.raises(TensorFormatError):
        tensor_from_bytes(buf)


def test_tensor_rejects_int_dtype():
    with pytest.raises(TensorFormatError):
        tensor_to_bytes(np.arange(3))


# -- PNM ------------------------------------------------------------------------


@given(arrays(np.uint8, st.tuples(st.integers(1, 12), st.integers(1, 12))), st.one_of(st.none(), st.text("abc =.", max_size=20)))
def test_pgm_round_trip(values, comment):
    back, comments = pnm.decode_pgm(pnm.encode_pgm(values, comment))
    assert np.array_equal(back, values)
    if comment:
        assert comments == [comment.strip()]


def test_pgm_hand_fixture():
    buf = b"P5\n# written by hand\n3 2\n255\n" + bytes([0, 1, 255, 2, 0, 1])
    arr, comments = pnm.decode_pgm(buf)
    assert arr.tolist() == [[0, 1, 255], [2, 0, 1]]
    assert comments == ["written by hand"]


@pytest.mark.parametrize("buf", [b"P6\n1 1\n255\n\0\0\0", b"P5\n2 2\n255\n\0", b"P5\n1 1\n65535\n\0\0", b"P5\n1"])
def test_pgm_errors(buf):
    with pytest.raises(pnm.PnmFormatError):
        pnm.decode_pgm(buf)


def test_ppm_round_trip(tmp_path):
    rgb = np.random.default_rng(0).integers(0, 256, (4, 5, 3), dtype=np.uint8)
    pnm.write_ppm(tmp_path / "x.ppm", rgb)
    assert np.array_equal(pnm.read_ppm(tmp_path / "x.ppm"), rgb)
