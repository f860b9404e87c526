import numpy as np
import pytest

from cassirecon import optics
from cassirecon.errors import ShapeError
from cassirecon.optics import (
    CodedAperture,
    DispersionRule,
    NoiseConfig,
    adjoint_project,
    build_shifted_mask,
    forward_project,
    initialize_estimate,
    phi_phi_t_diag,
)

from _oracles import dense_sensing_matrix


def random_operator(rng, H, W, B, step=1, binary=False):
    mask = (rng.random((H, W)) > 0.5).astype(float) if binary else rng.random((H, W))
    return build_shifted_mask(mask, B, DispersionRule(step))


class TestBuildShiftedMask:
    def test_tiny_instance_layout(self):
        phi = build_shifted_mask(np.array([[1.0, 0.5]]), 2)
        np.testing.assert_array_equal(phi.weights[0, :, 0], [1.0, 0.5, 0.0])
        np.testing.assert_array_equal(phi.weights[0, :, 1], [0.0, 1.0, 0.5])

    def test_single_band_equals_mask(self):
        mask = np.random.default_rng(0).random((4, 5))
        phi = build_shifted_mask(mask, 1)
        assert phi.shifted_width == 5
        np.testing.assert_array_equal(phi.weights[:, :, 0], mask)

    def test_28_band_measurement_width(self):
        phi = build_shifted_mask(np.ones((4, 256)), 28, DispersionRule(1))
        assert phi.shifted_width == 283
        assert phi.measurement_shape == (4, 283)

    def test_band_support_columns(self):
        rng = np.random.default_rng(1)
        phi = random_operator(rng, 3, 4, 3, step=2)
        for b in range(3):
            band = phi.weights[:, :, b]
            assert np.all(band[:, : 2 * b] == 0.0)
            assert np.all(band[:, 2 * b + 4:] == 0.0)

    def test_matches_dense_layout(self):
        rng = np.random.default_rng(2)
        mask = rng.random((3, 4))
        phi = build_shifted_mask(mask, 3, DispersionRule(1))
        A = dense_sensing_matrix(mask, 3, 1)
        H, W, B = phi.cube_shape
        for h in range(H):
            for w in range(W):
                for b in range(B):
                    row = h * phi.shifted_width + (w + b)
                    col = (h * W + w) * B + b
                    assert phi.weights[h, w + b, b] == A[row, col]

    def test_mask_weight_validation(self):
        with pytest.raises(ValueError):
            CodedAperture(np.array([[1.5, 0.0]]))
        with pytest.raises(ValueError):
            build_shifted_mask(np.ones((2, 2)), 0)
        with pytest.raises(ValueError):
            DispersionRule(0)


class TestForwardProject:
    def test_tiny_instance_values(self):
        phi = build_shifted_mask(np.array([[1.0, 0.5]]), 2)
        x = np.zeros((1, 2, 2))
        x[0, :, 0] = [1.0, 2.0]
        x[0, :, 1] = [3.0, 4.0]
        np.testing.assert_allclose(forward_project(x, phi), [[1.0, 4.0, 2.0]], atol=0)

    def test_single_band_identity(self):
        rng = np.random.default_rng(3)
        phi = build_shifted_mask(np.ones((4, 5)), 1)
        x = rng.random((4, 5, 1))
        np.testing.assert_array_equal(forward_project(x, phi), x[:, :, 0])

    def test_zero_cube(self):
        rng = np.random.default_rng(4)
        phi = random_operator(rng, 3, 4, 3)
        np.testing.assert_array_equal(forward_project(np.zeros(phi.cube_shape), phi), 0.0)

    def test_matches_dense_multiply(self):
        rng = np.random.default_rng(5)
        for step in (1, 2):
            mask = rng.random((4, 5))
            phi = build_shifted_mask(mask, 3, DispersionRule(step))
            A = dense_sensing_matrix(mask, 3, step)
            x = rng.standard_normal(phi.cube_shape)
            got = forward_project(x, phi)
            np.testing.assert_allclose(got.ravel(), A @ x.ravel(), rtol=1e-13, atol=1e-13)

    def test_linearity(self):
        rng = np.random.default_rng(6)
        phi = random_operator(rng, 5, 6, 4)
        x1 = rng.standard_normal(phi.cube_shape)
        x2 = rng.standard_normal(phi.cube_shape)
        a, b = 0.37, -1.2
        lhs = forward_project(a * x1 + b * x2, phi)
        rhs = a * forward_project(x1, phi) + b * forward_project(x2, phi)
        np.testing.assert_allclose(lhs, rhs, rtol=1e-12)

    def test_nonnegative_without_noise(self):
        rng = np.random.default_rng(7)
        phi = random_operator(rng, 4, 4, 3, binary=True)
        y = forward_project(rng.random(phi.cube_shape), phi)
        assert y.min() >= 0.0

    def test_shape_mismatch_names_shapes(self):
        rng = np.random.default_rng(8)
        phi = random_operator(rng, 3, 4, 2)
        with pytest.raises(ShapeError, match=r"\(3, 3, 2\).*\(3, 4, 2\)"):
            forward_project(np.zeros((3, 3, 2)), phi)


class TestNoise:
    def test_sigma_zero_is_noiseless(self):
        rng = np.random.default_rng(9)
        phi = random_operator(rng, 4, 4, 3)
        x = rng.random(phi.cube_shape)
        clean = forward_project(x, phi)
        gauss0 = forward_project(x, phi, NoiseConfig("gaussian", 0.0, 123))
        np.testing.assert_array_equal(clean, gauss0)

    def test_seeded_noise_reproducible(self):
        rng = np.random.default_rng(10)
        phi = random_operator(rng, 4, 4, 3)
        x = rng.random(phi.cube_shape)
        n1 = forward_project(x, phi, NoiseConfig("gaussian", 0.1, 7))
        n2 = forward_project(x, phi, NoiseConfig("gaussian", 0.1, 7))
        n3 = forward_project(x, phi, NoiseConfig("gaussian", 0.1, 8))
        np.testing.assert_array_equal(n1, n2)
        assert np.abs(n1 - n3).max() > 0

    def test_bad_noise_config(self):
        with pytest.raises(ValueError):
            NoiseConfig("poisson", 0.1, 0)
        with pytest.raises(ValueError):
            NoiseConfig("gaussian", -1.0, 0)


class TestAdjointProject:
    def test_inner_product_identity(self):
        rng = np.random.default_rng(11)
        for _ in range(20):
            H = int(rng.integers(1, 8))
            W = int(rng.integers(1, 8))
            B = int(rng.integers(1, 5))
            step = int(rng.integers(1, 3))
            phi = random_operator(rng, H, W, B, step)
            x = rng.standard_normal(phi.cube_shape)
            y = rng.standard_normal(phi.measurement_shape)
            lhs = np.vdot(forward_project(x, phi), y)
            rhs = np.vdot(x, adjoint_project(y, phi))
            assert abs(lhs - rhs) / (abs(lhs) + 1e-300) < 1e-12

    def test_zero_measurement(self):
        rng = np.random.default_rng(12)
        phi = random_operator(rng, 3, 5, 2)
        np.testing.assert_array_equal(adjoint_project(np.zeros(phi.measurement_shape), phi), 0.0)

    def test_single_band_all_ones(self):
        rng = np.random.default_rng(13)
        phi = build_shifted_mask(np.ones((4, 5)), 1)
        y = rng.standard_normal((4, 5))
        np.testing.assert_array_equal(adjoint_project(y, phi)[:, :, 0], y)

    def test_matches_dense_transpose(self):
        rng = np.random.default_rng(14)
        mask = rng.random((4, 5))
        phi = build_shifted_mask(mask, 3, DispersionRule(2))
        A = dense_sensing_matrix(mask, 3, 2)
        y = rng.standard_normal(phi.measurement_shape)
        got = adjoint_project(y, phi)
        np.testing.assert_allclose(got.ravel(), A.T @ y.ravel(), rtol=1e-13, atol=1e-13)

    def test_one_hot_touches_expected_voxels(self):
        rng = np.random.default_rng(15)
        H, W, B, step = 3, 6, 4, 1
        mask = rng.uniform(0.1, 1.0, (H, W))
        phi = build_shifted_mask(mask, B, DispersionRule(step))
        for wp in range(phi.shifted_width):
            y = np.zeros(phi.measurement_shape)
            y[1, wp] = 1.0
            touched = np.count_nonzero(adjoint_project(y, phi))
            valid = sum(1 for b in range(B) if 0 <= wp - step * b < W)
            assert touched == min(B, valid)

    def test_shape_mismatch(self):
        rng = np.random.default_rng(16)
        phi = random_operator(rng, 3, 4, 2)
        with pytest.raises(ShapeError):
            adjoint_project(np.zeros((3, 4)), phi)


class TestGramDiagonal:
    def test_tiny_instance_values(self):
        phi = build_shifted_mask(np.array([[1.0, 0.5]]), 2)
        np.testing.assert_allclose(phi_phi_t_diag(phi), [[1.0, 1.25, 0.25]], atol=0)

    def test_binary_mask_counts_overlaps(self):
        rng = np.random.default_rng(17)
        phi = random_operator(rng, 4, 5, 3, binary=True)
        d = phi_phi_t_diag(phi)
        counts = (phi.weights != 0).sum(axis=2)
        np.testing.assert_array_equal(d, counts.astype(float))

    def test_dense_gram_is_diagonal(self):
        rng = np.random.default_rng(18)
        for _ in range(5):
            mask = rng.random((4, 4))
            phi = build_shifted_mask(mask, 3, DispersionRule(1))
            A = dense_sensing_matrix(mask, 3, 1)
            gram = A @ A.T
            diag = np.diag(gram).copy()
            np.fill_diagonal(gram, 0.0)
            assert np.abs(gram).max() < 1e-14
            np.testing.assert_allclose(diag.reshape(phi.measurement_shape),
                                       phi_phi_t_diag(phi), rtol=1e-13, atol=1e-15)


class TestInitializeEstimate:
    def test_recovers_constant_cube_single_band(self):
        phi = build_shifted_mask(np.ones((4, 5)), 1)
        x = np.full((4, 5, 1), 0.7)
        y = forward_project(x, phi)
        z0 = initialize_estimate(y, phi)
        # the eps guard biases the division by ~1e-6 relative
        np.testing.assert_allclose(z0, x, rtol=1e-5)

    def test_zero_measurement_gives_zero(self):
        rng = np.random.default_rng(19)
        phi = random_operator(rng, 3, 4, 2)
        np.testing.assert_array_equal(initialize_estimate(np.zeros(phi.measurement_shape), phi), 0.0)

    def test_finite_with_masked_zeros(self):
        rng = np.random.default_rng(20)
        mask = (rng.random((6, 6)) > 0.5).astype(float)
        mask[0, :] = 0.0
        phi = build_shifted_mask(mask, 3)
        y = rng.standard_normal(phi.measurement_shape)
        z0 = initialize_estimate(y, phi)
        assert np.all(np.isfinite(z0))
        assert np.all(z0[0, :, :] == 0.0)


def test_unshift_mask_recovers_shared_aperture():
    rng = np.random.default_rng(21)
    mask = rng.random((4, 5))
    phi = build_shifted_mask(mask, 3, DispersionRule(2))
    un = optics.unshift_mask(phi)
    for b in range(3):
        np.testing.assert_array_equal(un[:, :, b], mask)
