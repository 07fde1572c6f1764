import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from oracles import dense_operator, direct_blur_decimate, loop_blur_decimate

from hsfusion import (BandSelector, ConfigError, NoiseSpec, ShapeError, SpatialOperator, SpectralCube,
                      add_noise, apply_bands, apply_spatial, apply_spatial_adjoint, gaussian_kernel,
                      simulate_pair)
from hsfusion.degrade import snr_db, substream, variances_from_snr


# gaussian_kernel ---------------------------------------------------------------


def test_kernel_size_one():
    assert gaussian_kernel(1, 0.7).tolist() == [[1.0]]


def test_kernel_flat_limit():
    np.testing.assert_allclose(gaussian_kernel(3, np.inf), np.full((3, 3), 1 / 9), rtol=0, atol=1e-15)
    np.testing.assert_allclose(gaussian_kernel(3, 1e8), np.full((3, 3), 1 / 9), rtol=0, atol=1e-12)


def test_kernel_closed_form_39():
    sigma = 39 / 6
    k = gaussian_kernel(39, sigma)
    ref = np.empty((39, 39))
    for i in range(39):
        for j in range(39):
            ref[i, j] = np.exp(-((i - 19) ** 2 + (j - 19) ** 2) / (2 * sigma**2))
    ref /= ref.sum()
    np.testing.assert_allclose(k, ref, rtol=0, atol=1e-12)
    assert abs(k.sum() - 1) < 1e-12
    assert np.unravel_index(np.argmax(k), k.shape) == (19, 19)
    np.testing.assert_allclose(k, k.T, atol=1e-18)
    np.testing.assert_allclose(k, k[::-1, :], atol=1e-18)


@pytest.mark.parametrize("size", [0, 2, 4, -3])
def test_kernel_bad_size(size):
    with pytest.raises(ConfigError):
        gaussian_kernel(size)


def test_kernel_default_sigma():
    np.testing.assert_allclose(gaussian_kernel(9), gaussian_kernel(9, 1.5))


# SpatialOperator ---------------------------------------------------------------


def test_operator_validation():
    with pytest.raises(ConfigError):
        SpatialOperator(np.full((3, 3), 0.1), 2, (8, 8))
    with pytest.raises(ConfigError):
        SpatialOperator(np.array([[0.5, 0.5]]), 1, (4, 4))
    with pytest.raises(ShapeError):
        SpatialOperator.gaussian((9, 8), 3, 2)


def test_identity_operator():
    rng = np.random.default_rng(0)
    cube = SpectralCube(rng.random((6, 5, 3)))
    op = SpatialOperator(np.ones((1, 1)), 1, (6, 5))
    np.testing.assert_allclose(apply_spatial(op, cube).data, cube.data, atol=1e-15)
    np.testing.assert_allclose(apply_spatial_adjoint(op, cube).data, cube.data, atol=1e-15)


def test_constant_preserved():
    cube = SpectralCube(np.full((12, 12, 2), 3.25))
    for size, d in [(3, 1), (5, 2), (7, 3), (11, 4)]:
        op = SpatialOperator.gaussian((12, 12), size, d)
        np.testing.assert_allclose(apply_spatial(op, cube).data, 3.25, rtol=1e-13)


def test_matches_dense_matrix_8x8():
    rng = np.random.default_rng(3)
    x = rng.random((8, 8))
    op = SpatialOperator.gaussian((8, 8), 3, 2, 0.8)
    dense = dense_operator(op.kernel, 2, 8, 8)
    got = apply_spatial(op, SpectralCube(x)).data[:, :, 0]
    np.testing.assert_allclose(got.ravel(), dense @ x.ravel(), rtol=0, atol=1e-12)
    np.testing.assert_allclose(op.dense(), dense, rtol=0, atol=1e-12)


@pytest.mark.parametrize("rows,cols,size,d", [(8, 8, 3, 2), (16, 12, 5, 4), (32, 32, 7, 2), (9, 9, 9, 3), (4, 8, 7, 1)])
def test_fft_equals_direct_convolution(rows, cols, size, d):
    rng = np.random.default_rng(rows * cols + size)
    x = rng.standard_normal((rows, cols, 2))
    op = SpatialOperator.gaussian((rows, cols), size, d)
    got = op.forward(x)
    for b in range(2):
        np.testing.assert_allclose(got[:, :, b], direct_blur_decimate(x[:, :, b], op.kernel, d), rtol=0, atol=1e-9)
    np.testing.assert_allclose(got[:, :, 0], loop_blur_decimate(x[:, :, 0], op.kernel, d), rtol=0, atol=1e-9)


def test_asymmetric_kernel_orientation():
    rng = np.random.default_rng(4)
    k = rng.random((3, 3))
    k /= k.sum()
    x = rng.standard_normal((6, 6))
    op = SpatialOperator(k, 1, (6, 6))
    np.testing.assert_allclose(op.forward(x)[:, :, 0], loop_blur_decimate(x, k, 1), atol=1e-12)


@settings(max_examples=40, deadline=None)
@given(st.sampled_from([(8, 8, 2), (16, 8, 4), (12, 18, 3), (32, 32, 2), (10, 10, 1)]),
       st.sampled_from([1, 3, 5]), st.integers(0, 2**32 - 1))
def test_linearity_and_adjoint(dims, size, seed):
    rows, cols, d = dims
    rng = np.random.default_rng(seed)
    op = SpatialOperator.gaussian((rows, cols), size, d, rng.uniform(0.5, 2.0))
    x, y = rng.standard_normal((2, rows, cols, 1))
    a, b = rng.standard_normal(2)
    np.testing.assert_allclose(op.forward(a * x + b * y), a * op.forward(x) + b * op.forward(y), atol=1e-10)
    z = rng.standard_normal((rows // d, cols // d, 1))
    lhs = np.sum(op.forward(x) * z)
    rhs = np.sum(x * op.adjoint(z))
    assert abs(lhs - rhs) <= 1e-10 * max(1.0, abs(lhs))


def test_adjoint_of_adjoint():
    rng = np.random.default_rng(5)
    op = SpatialOperator.gaussian((8, 8), 3, 2)
    dense_t = np.stack([op.adjoint(e.reshape(4, 4, 1)).ravel() for e in np.eye(16)], axis=1)
    np.testing.assert_allclose(dense_t.T, op.dense(), atol=1e-12)
    x = rng.random((8, 8))
    np.testing.assert_allclose(dense_t.T @ x.ravel(), op.forward(x).ravel(), atol=1e-12)


def test_dimension_mismatch():
    op = SpatialOperator.gaussian((8, 8), 3, 2)
    with pytest.raises(ShapeError):
        apply_spatial(op, SpectralCube(np.zeros((4, 8, 1))))
    with pytest.raises(ShapeError):
        apply_spatial_adjoint(op, SpectralCube(np.zeros((8, 8, 1))))


@pytest.mark.parametrize("alpha,beta", [(1.0, 2.0), (0.3, 1e-3), (np.array([1.0, 5.0, 0.0]), np.array([2.0, 0.5, 1.0]))])
def test_solve_normal_matches_dense(alpha, beta):
    rng = np.random.default_rng(6)
    op = SpatialOperator.gaussian((8, 12), 5, 2)
    L = op.dense()
    b = rng.standard_normal((96, 3))
    x = op.solve_normal(b, alpha, beta)
    al = np.broadcast_to(alpha, (3,))
    be = np.broadcast_to(beta, (3,))
    for j in range(3):
        ref = np.linalg.solve(al[j] * L.T @ L + be[j] * np.eye(96), b[:, j])
        np.testing.assert_allclose(x[:, j], ref, rtol=1e-9, atol=1e-9)


# BandSelector ------------------------------------------------------------------


def test_selector_identity_and_matrix():
    rng = np.random.default_rng(7)
    cube = SpectralCube(rng.random((3, 3, 5)), band_centers=np.arange(5.0))
    sel = BandSelector(tuple(range(5)), 5)
    assert np.array_equal(apply_bands(sel, cube).data, cube.data)
    b = BandSelector.random(5, 3, rng).matrix()
    assert np.all((b != 0).sum(axis=0) == 1)
    np.testing.assert_allclose(b.sum(axis=0), 1.0)


def test_selector_paper_planes():
    rng = np.random.default_rng(8)
    cube = SpectralCube(rng.random((4, 4, 93)))
    out = apply_bands(BandSelector((0, 30, 60, 90), 93), cube)
    assert out.bands == 4
    for k, b in enumerate((0, 30, 60, 90)):
        assert np.array_equal(out.data[:, :, k], cube.data[:, :, b])


def test_selector_dense_oracle_with_response():
    rng = np.random.default_rng(9)
    cube = SpectralCube(rng.random((4, 5, 6)))
    sel = BandSelector.random(6, 3, rng)
    np.testing.assert_allclose(apply_bands(sel, cube).data, cube.data @ sel.matrix(), atol=1e-15)
    resp = rng.random((6, 2))
    wsel = BandSelector((1, 4), 6, response=resp)
    np.testing.assert_allclose(wsel.matrix().sum(axis=0), 1.0)
    np.testing.assert_allclose(apply_bands(wsel, cube).data, cube.data @ wsel.matrix(), atol=1e-15)


def test_selector_validation():
    with pytest.raises((ConfigError, ValueError)):
        BandSelector((0, 7), 6)
    with pytest.raises((ConfigError, ValueError)):
        BandSelector((2, 2), 6)
    with pytest.raises(ConfigError):
        BandSelector.evenly_spaced(10, 11)


def test_random_selector_limit():
    sel = BandSelector.random(93, 4, substream(3, "band-pick"))
    assert all(0 <= i < 70 for i in sel.selected)
    assert list(sel.selected) == sorted(set(sel.selected))


# noise -------------------------------------------------------------------------


def test_noise_infinite_snr():
    cube = SpectralCube(np.random.default_rng(0).random((4, 4, 3)))
    out, var = add_noise(cube, NoiseSpec("gaussian", np.inf, 1))
    assert np.array_equal(out.data, cube.data) and np.all(var == 0)


@pytest.mark.parametrize("dist", ["gaussian", "poisson"])
@pytest.mark.parametrize("target", [5.0, 10.0, 30.0])
def test_realized_snr(dist, target):
    rng = np.random.default_rng(11)
    data = rng.random((64, 64, 8)) + 0.2
    data /= np.sqrt(np.mean(data**2))  # unit power
    cube = SpectralCube(data)
    out, var = add_noise(cube, NoiseSpec(dist, target, 42, "noise-h"))
    assert abs(snr_db(cube.data, out.data) - target) <= 0.2
    assert var.shape == (8,) and np.all(var > 0)


def test_gaussian_variance_formula():
    rng = np.random.default_rng(12)
    cube = SpectralCube(rng.random((8, 8, 4)))
    _, var = add_noise(cube, NoiseSpec("gaussian", 10.0, 0))
    np.testing.assert_allclose(var, np.mean(cube.data**2) / 10.0, rtol=1e-14)


def test_poisson_variance_matches_empirical():
    rng = np.random.default_rng(13)
    cube = SpectralCube(rng.random((96, 96, 3)) + 0.5)
    out, var = add_noise(cube, NoiseSpec("poisson", 10.0, 5))
    emp = np.mean((out.data - cube.data) ** 2, axis=(0, 1))
    np.testing.assert_allclose(emp, var, rtol=0.05)


def test_noise_determinism_and_streams():
    cube = SpectralCube(np.random.default_rng(1).random((16, 16, 2)))
    a, _ = add_noise(cube, NoiseSpec("gaussian", 10, 7, "noise-h"))
    b, _ = add_noise(cube, NoiseSpec("gaussian", 10, 7, "noise-h"))
    c, _ = add_noise(cube, NoiseSpec("gaussian", 10, 7, "noise-m"))
    d, _ = add_noise(cube, NoiseSpec("gaussian", 10, 8, "noise-h"))
    assert np.array_equal(a.data, b.data)
    assert not np.array_equal(a.data, c.data)
    assert not np.array_equal(a.data, d.data)


def test_poisson_negative_rejected():
    with pytest.raises(ValueError):
        add_noise(SpectralCube(-np.ones((2, 2, 1))), NoiseSpec("poisson", 10, 0))


def test_noise_spec_validation():
    with pytest.raises(ConfigError):
        NoiseSpec("uniform", 10)


def test_per_band_snr():
    rng = np.random.default_rng(14)
    cube = SpectralCube(rng.random((64, 64, 3)) * np.array([1.0, 2.0, 3.0]))
    levels = [5.0, 20.0, 40.0]
    out, var = add_noise(cube, NoiseSpec("gaussian", levels, 3))
    np.testing.assert_allclose(var, variances_from_snr(cube, levels))
    for b, lv in enumerate(levels):
        assert abs(snr_db(cube.data[:, :, b], out.data[:, :, b]) - lv) < 0.2


# simulate_pair -----------------------------------------------------------------


def test_simulate_trivial():
    rng = np.random.default_rng(15)
    truth = SpectralCube(rng.random((6, 6, 4)))
    op = SpatialOperator(np.ones((1, 1)), 1, (6, 6))
    sel = BandSelector(tuple(range(4)), 4)
    h, m, lh, lm = simulate_pair(truth, op, sel, NoiseSpec(), NoiseSpec())
    np.testing.assert_allclose(h.data, truth.data, atol=1e-15)
    assert np.array_equal(m.data, truth.data)
    assert np.all(lh == 0) and np.all(lm == 0)


def test_simulate_paper_dims():
    truth = SpectralCube(np.random.default_rng(16).random((512, 256, 93)))
    op = SpatialOperator.gaussian((512, 256), 39, 4)
    sel = BandSelector.random(93, 4, substream(0, "band-pick"))
    h, m, lh, lm = simulate_pair(truth, op, sel, NoiseSpec("gaussian", 10, 0, "noise-h"),
                                 NoiseSpec("gaussian", 50, 0, "noise-m"))
    assert h.shape == (128, 64, 93) and m.shape == (512, 256, 4)
    assert lh.shape == (93,) and lm.shape == (4,)


def test_simulate_dense_oracle():
    rng = np.random.default_rng(17)
    truth = SpectralCube(rng.random((16, 16, 8)))
    op = SpatialOperator.gaussian((16, 16), 3, 2)
    sel = BandSelector((1, 5), 8)
    h, m, _, _ = simulate_pair(truth, op, sel, NoiseSpec(), NoiseSpec())
    L = dense_operator(op.kernel, 2, 16, 16)
    X = truth.data.reshape(256, 8)
    np.testing.assert_allclose(h.data.reshape(64, 8), L @ X, atol=1e-12)
    np.testing.assert_allclose(m.data.reshape(256, 2), X @ sel.matrix(), atol=1e-15)


def test_simulate_mismatch():
    truth = SpectralCube(np.zeros((8, 8, 4)))
    with pytest.raises(ShapeError):
        simulate_pair(truth, SpatialOperator.gaussian((16, 16), 3, 2), BandSelector((0,), 4), NoiseSpec(), NoiseSpec())
    with pytest.raises(ShapeError):
        simulate_pair(truth, SpatialOperator.gaussian((8, 8), 3, 2), BandSelector((0,), 5), NoiseSpec(), NoiseSpec())


@pytest.mark.parametrize("d", [1, 2, 4])
def test_solve_normal_asymmetric_kernel(d):
    rng = np.random.default_rng(20 + d)
    k = rng.random((5, 5))
    k /= k.sum()
    op = SpatialOperator(k, d, (8, 8))
    L = op.dense()
    b = rng.standard_normal((64, 2))
    x = op.solve_normal(b, 1.0, 0.25)
    np.testing.assert_allclose(x, np.linalg.solve(L.T @ L + 0.25 * np.eye(64), b), atol=1e-12)


def test_solve_normal_tiny_beta_without_decimation():
    """With an invertible blur and no decimation a vanishing beta is harmless."""
    rng = np.random.default_rng(30)
    k = np.zeros((3, 3))
    k[1, 1], k[0, 1] = 0.8, 0.2
    op = SpatialOperator(k, 1, (8, 8))
    L = op.dense()
    b = rng.standard_normal((64, 1))
    x = op.solve_normal(b, 1.0, 1e-14)
    np.testing.assert_allclose(x, np.linalg.solve(L.T @ L, b), rtol=1e-10, atol=1e-12)
