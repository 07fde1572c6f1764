import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hsfusion import ShapeError, SpectralCube, as_matrix, from_matrix, slice_band
from hsfusion.cube import check_finite
from hsfusion.errors import NumericalError


def test_single_voxel_matrix():
    m = as_matrix(SpectralCube(np.full((1, 1, 1), 7.0)))
    assert m.shape == (1, 1) and m[0, 0] == 7.0


def test_row_major_order():
    a, b, c, d = 1.0, 2.0, 3.0, 4.0
    m = as_matrix(SpectralCube(np.array([[a, b], [c, d]])[:, :, None]))
    assert m[:, 0].tolist() == [a, b, c, d]


def test_element_mapping():
    rng = np.random.default_rng(1)
    cube = SpectralCube(rng.random((3, 4, 5)))
    m = as_matrix(cube)
    for i in range(12):
        for k in range(5):
            assert m[i, k] == cube.data[i // 4, i % 4, k]


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 16), st.integers(1, 16), st.integers(1, 16), st.integers(0, 2**32 - 1))
def test_round_trip_bit_identical(rows, cols, bands, seed):
    data = np.random.default_rng(seed).standard_normal((rows, cols, bands))
    cube = SpectralCube(data)
    back = from_matrix(as_matrix(cube), rows, cols)
    assert np.array_equal(back.data, data)
    m = as_matrix(cube)
    assert np.array_equal(as_matrix(from_matrix(m, rows, cols)), m)


def test_from_matrix_mismatch():
    with pytest.raises(ShapeError):
        from_matrix(np.zeros((6, 3)), 2, 4)


def test_from_matrix_large_dims():
    cube = from_matrix(np.zeros((128 * 64, 93)), 128, 64)
    assert cube.shape == (128, 64, 93)


def test_slice_band():
    rng = np.random.default_rng(2)
    one = SpectralCube(rng.random((5, 6)))
    assert np.array_equal(slice_band(one, 0), one.data[:, :, 0])
    cube = SpectralCube(rng.random((8, 4, 93)))
    assert np.array_equal(slice_band(cube, 92), cube.data[:, :, 92])
    with pytest.raises(IndexError):
        slice_band(cube, 93)


def test_invariants_enforced():
    with pytest.raises(ValueError):
        SpectralCube(np.array([[[np.nan]]]))
    with pytest.raises(ValueError):
        SpectralCube(np.zeros((2, 2, 3)), band_centers=[1.0, 3.0, 2.0])
    with pytest.raises(ShapeError):
        SpectralCube(np.zeros((2, 2, 3)), band_centers=[1.0, 2.0])
    desc = SpectralCube(np.zeros((2, 2, 3)), band_centers=[3.0, 2.0, 1.0])
    assert desc.band_centers.tolist() == [3.0, 2.0, 1.0]


def test_immutable_and_widened():
    src = np.ones((2, 2, 2), dtype=np.float32)
    cube = SpectralCube(src)
    assert cube.data.dtype == np.float64
    src[0, 0, 0] = 5
    assert cube.data[0, 0, 0] == 1.0
    with pytest.raises(ValueError):
        cube.data[0, 0, 0] = 2.0


def test_check_finite():
    check_finite(np.zeros(3), "stage")
    with pytest.raises(NumericalError, match="stage-x"):
        check_finite(np.array([0.0, np.inf]), "stage-x")
