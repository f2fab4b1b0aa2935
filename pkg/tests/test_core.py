"""Core operations against brute-force references and statistical checks."""

import math

import numpy as np
import pytest

from pldeblur.core import (
    Boundary,
    ConvPlan,
    NoiseParams,
    convolve,
    convolve_adjoint,
    correlate,
    delta_kernel,
    estimate_photon_level,
    gradients_adjoint,
    kernel_center,
    kernel_ncc,
    poisson_forward,
    psnr,
    snr_db,
    spatial_gradients,
    ssim,
    validate_kernel,
)


def mirror_index(i, n):
    """Half-sample symmetric extension: -1 -> 0, -2 -> 1, n -> n-1."""
    while i < 0 or i >= n:
        if i < 0:
            i = -1 - i
        if i >= n:
            i = 2 * n - 1 - i
    return i


def conv_reference(x, h, boundary):
    """Direct nested-loop convolution with explicit boundary indexing."""
    rows, cols = x.shape
    m = h.shape[0]
    cy, cx = kernel_center(m)
    out = np.zeros_like(x)
    for i in range(rows):
        for j in range(cols):
            acc = 0.0
            for u in range(m):
                for v in range(m):
                    ii, jj = i - u + cy, j - v + cx
                    if boundary is Boundary.CIRCULAR:
                        acc += h[u, v] * x[ii % rows, jj % cols]
                    else:
                        acc += h[u, v] * x[mirror_index(ii, rows), mirror_index(jj, cols)]
            out[i, j] = acc
    return out


def correlate_reference(r, g, size, boundary):
    """Direct nested-loop kernel-side adjoint."""
    rows, cols = r.shape
    cy, cx = kernel_center(size)
    out = np.zeros((size, size))
    for u in range(size):
        for v in range(size):
            acc = 0.0
            for i in range(rows):
                for j in range(cols):
                    ii, jj = i + cy - u, j + cx - v
                    if boundary is Boundary.CIRCULAR:
                        acc += r[i, j] * g[ii % rows, jj % cols]
                    else:
                        acc += r[i, j] * g[mirror_index(ii, rows), mirror_index(jj, cols)]
            out[u, v] = acc
    return out


def random_kernel(rng, size):
    h = rng.uniform(0.0, 1.0, (size, size))
    return h / h.sum()


class TestConvolve:
    def test_delta_identity(self):
        rng = np.random.default_rng(0)
        x = rng.uniform(0, 1, (12, 10))
        for size in (3, 5, 8):
            for boundary in Boundary:
                out = convolve(x, delta_kernel(size), boundary)
                np.testing.assert_allclose(out, x, atol=1e-12)

    def test_ramp_uniform_kernel_matches_reference(self):
        x = np.arange(16, dtype=float).reshape(4, 4)
        h = np.full((3, 3), 1.0 / 9.0)
        got = convolve(x, h, Boundary.SYMMETRIC)
        np.testing.assert_allclose(got, conv_reference(x, h, Boundary.SYMMETRIC), atol=1e-12)

    @pytest.mark.parametrize("boundary", list(Boundary))
    def test_constant_image_preserved(self, boundary):
        rng = np.random.default_rng(1)
        x = np.full((9, 7), 0.37)
        h = random_kernel(rng, 4)
        np.testing.assert_allclose(convolve(x, h, boundary), x, atol=1e-12)

    @pytest.mark.parametrize("boundary", list(Boundary))
    def test_matches_reference_random(self, boundary):
        rng = np.random.default_rng(2)
        for _ in range(5):
            x = rng.uniform(0, 1, (7, 9))
            h = random_kernel(rng, rng.integers(2, 5))
            got = convolve(x, h, boundary)
            np.testing.assert_allclose(got, conv_reference(x, h, boundary), atol=1e-12)

    def test_linearity(self):
        rng = np.random.default_rng(3)
        x1 = rng.uniform(0, 1, (16, 16))
        x2 = rng.uniform(0, 1, (16, 16))
        h = random_kernel(rng, 5)
        a, c = 1.7, -0.4
        for boundary in Boundary:
            lhs = convolve(a * x1 + c * x2, h, boundary)
            rhs = a * convolve(x1, h, boundary) + c * convolve(x2, h, boundary)
            np.testing.assert_allclose(lhs, rhs, rtol=1e-10, atol=1e-12)

    def test_flux_conservation_circular(self):
        rng = np.random.default_rng(4)
        x = rng.uniform(0, 1, (13, 11))
        h = random_kernel(rng, 6)
        out = convolve(x, h, Boundary.CIRCULAR)
        assert abs(out.sum() - x.sum()) < 1e-9 * x.sum()

    def test_kernel_larger_than_image_rejected(self):
        with pytest.raises(ValueError):
            convolve(np.ones((4, 4)), np.full((5, 5), 1.0 / 25.0))

    def test_invalid_kernel_rejected(self):
        x = np.ones((6, 6))
        with pytest.raises(ValueError):
            convolve(x, np.full((3, 3), 0.2))  # sums to 1.8
        bad = np.full((3, 3), 1.0 / 9.0)
        bad[0, 0] = -bad[0, 0]
        with pytest.raises(ValueError):
            convolve(x, bad / bad.sum())


class TestCorrelate:
    def test_adjoint_identity_circular(self):
        rng = np.random.default_rng(5)
        for _ in range(50):
            x = rng.uniform(0, 1, (10, 12))
            r = rng.normal(size=(10, 12))
            h = random_kernel(rng, int(rng.integers(2, 7)))
            lhs = np.sum(convolve(x, h, Boundary.CIRCULAR) * r)
            rhs = np.sum(h * correlate(r, x, h.shape[0], Boundary.CIRCULAR))
            assert abs(lhs - rhs) <= 1e-9 * max(abs(lhs), 1e-30)

    def test_adjoint_identity_symmetric(self):
        # The padded image does not depend on the kernel, so the identity
        # holds for the symmetric boundary as well.
        rng = np.random.default_rng(6)
        for _ in range(20):
            x = rng.uniform(0, 1, (9, 8))
            r = rng.normal(size=(9, 8))
            h = random_kernel(rng, int(rng.integers(2, 6)))
            lhs = np.sum(convolve(x, h, Boundary.SYMMETRIC) * r)
            rhs = np.sum(h * correlate(r, x, h.shape[0], Boundary.SYMMETRIC))
            assert abs(lhs - rhs) <= 1e-9 * max(abs(lhs), 1e-30)

    def test_delta_image_gives_cropped_copy(self):
        rng = np.random.default_rng(7)
        r = rng.normal(size=(11, 11))
        x = np.zeros((11, 11))
        x[5, 5] = 1.0
        size = 5
        cy, cx = kernel_center(size)
        got = correlate(r, x, size, Boundary.CIRCULAR)
        expect = r[5 - cy : 5 - cy + size, 5 - cx : 5 - cx + size]
        np.testing.assert_allclose(got, expect, atol=1e-12)

    @pytest.mark.parametrize("boundary", list(Boundary))
    def test_matches_reference_random(self, boundary):
        rng = np.random.default_rng(8)
        r = rng.normal(size=(5, 5))
        g = rng.uniform(0, 1, (5, 5))
        got = correlate(r, g, 3, boundary)
        np.testing.assert_allclose(got, correlate_reference(r, g, 3, boundary), atol=1e-12)

    def test_shape_mismatch_rejected(self):
        with pytest.raises(ValueError):
            correlate(np.ones((4, 4)), np.ones((5, 5)), 3)


class TestConvolveAdjoint:
    def test_image_side_adjoint_circular(self):
        rng = np.random.default_rng(9)
        x = rng.uniform(0, 1, (12, 9))
        r = rng.normal(size=(12, 9))
        h = random_kernel(rng, 4)
        lhs = np.sum(convolve(x, h, Boundary.CIRCULAR) * r)
        rhs = np.sum(x * convolve_adjoint(r, h, Boundary.CIRCULAR))
        assert abs(lhs - rhs) <= 1e-10 * abs(lhs)

    def test_constant_preserved(self):
        rng = np.random.default_rng(10)
        h = random_kernel(rng, 5)
        ones = np.ones((8, 8))
        for boundary in Boundary:
            np.testing.assert_allclose(convolve_adjoint(ones, h, boundary), ones, atol=1e-12)

    def test_plan_matches_oneshots(self):
        rng = np.random.default_rng(11)
        x = rng.uniform(0, 1, (10, 14))
        h = random_kernel(rng, 5)
        for boundary in Boundary:
            plan = ConvPlan(h, x.shape, boundary)
            np.testing.assert_array_equal(plan.convolve(x), convolve(x, h, boundary))
            np.testing.assert_array_equal(plan.adjoint(x), convolve_adjoint(x, h, boundary))


class TestPoissonForward:
    def test_flat_field_mean(self):
        y = poisson_forward(np.ones((100, 100)), NoiseParams(1000.0), seed=0)
        assert abs(y.mean() - 1000.0) < 3.0 * math.sqrt(1000.0 / y.size)

    def test_zero_image_maps_to_zero(self):
        y = poisson_forward(np.zeros((20, 20)), NoiseParams(57.0), seed=1)
        assert np.all(y == 0)

    def test_seed_determinism(self):
        x = np.random.default_rng(2).uniform(0, 1, (16, 16))
        params = NoiseParams(40.0, sigma_read=1.6)
        np.testing.assert_array_equal(
            poisson_forward(x, params, seed=7), poisson_forward(x, params, seed=7)
        )

    def test_mean_and_variance_within_5_se(self):
        alpha = 40.0
        n = 100_000
        y = poisson_forward(np.ones((250, 400)), NoiseParams(alpha), seed=3)
        se_mean = math.sqrt(alpha / n)
        # Var of the sample variance for Poisson: (alpha + 2 alpha^2) / n.
        se_var = math.sqrt((alpha + 2 * alpha * alpha) / n)
        assert abs(y.mean() - alpha) < 5 * se_mean
        assert abs(y.var(ddof=1) - alpha) < 5 * se_var

    def test_read_noise_allows_negatives(self):
        y = poisson_forward(np.zeros((50, 50)), NoiseParams(5.0, sigma_read=2.0), seed=4)
        assert (y < 0).any()


class TestSnrDb:
    @pytest.mark.parametrize(
        "alpha,expected",
        [(1000.0, 29.98), (40.0, 15.75), (20.0, 12.48)],
    )
    def test_reference_values(self, alpha, expected):
        assert snr_db(alpha, 1.0, 1.6) == pytest.approx(expected, abs=0.01)

    def test_strictly_increasing_in_alpha(self):
        alphas = np.geomspace(1.0, 1e6, 200)
        values = [snr_db(a, 1.0, 1.6) for a in alphas]
        assert all(b > a for a, b in zip(values, values[1:]))

    def test_domain_error(self):
        with pytest.raises(ValueError):
            snr_db(10.0, 0.0, 0.0)


class TestSpatialGradients:
    def test_constant_image(self):
        gx, gy = spatial_gradients(np.full((6, 6), 3.3))
        assert not gx.any() and not gy.any()

    def test_horizontal_ramp(self):
        slope = 0.25
        x = np.tile(slope * np.arange(8.0), (6, 1))
        gx, gy = spatial_gradients(x)
        np.testing.assert_allclose(gx[:, :-1], slope)
        assert not gx[:, -1].any()
        assert not gy.any()

    def test_matches_reference_random(self):
        rng = np.random.default_rng(12)
        x = rng.normal(size=(5, 5))
        gx, gy = spatial_gradients(x)
        for i in range(5):
            for j in range(5):
                assert gx[i, j] == (x[i, j + 1] - x[i, j] if j < 4 else 0.0)
                assert gy[i, j] == (x[i + 1, j] - x[i, j] if i < 4 else 0.0)

    def test_rejects_degenerate(self):
        with pytest.raises(ValueError):
            spatial_gradients(np.ones((1, 5)))

    def test_adjoint_identity(self):
        rng = np.random.default_rng(13)
        u = rng.normal(size=(7, 6))
        gx = rng.normal(size=(7, 6))
        gy = rng.normal(size=(7, 6))
        du_x, du_y = spatial_gradients(u)
        lhs = np.sum(du_x * gx) + np.sum(du_y * gy)
        rhs = np.sum(u * gradients_adjoint(gx, gy))
        assert abs(lhs - rhs) < 1e-12 * max(1.0, abs(lhs))


class TestEstimatePhotonLevel:
    def test_scaled_scene(self):
        rng = np.random.default_rng(14)
        x = rng.uniform(0, 0.8, (50, 50))
        x[10:20, 30:40] = 1.0  # bright patch, 4% of pixels near max
        level = estimate_photon_level(20.0 * x)
        assert abs(level - 20.0) <= 2.0

    def test_constant_image(self):
        assert estimate_photon_level(np.full((10, 10), 7.5)) == pytest.approx(7.5)

    def test_poisson_flat_field(self):
        y = poisson_forward(np.ones((100, 100)), NoiseParams(40.0), seed=5)
        assert abs(estimate_photon_level(y) - 40.0) <= 0.15 * 40.0

    def test_zero_image_rejected(self):
        with pytest.raises(ValueError):
            estimate_photon_level(np.zeros((8, 8)))


class TestPsnr:
    def test_identical_images_capped(self):
        x = np.random.default_rng(15).uniform(0, 1, (12, 12))
        assert psnr(x, x) == 99.0

    def test_analytic_value(self):
        a = np.zeros((10, 10))
        b = np.full((10, 10), 0.1)  # MSE 0.01, peak 1 -> 20 dB
        assert psnr(a, b, 1.0) == pytest.approx(20.0, abs=1e-9)

    def test_matches_direct_sum(self):
        rng = np.random.default_rng(16)
        a = rng.uniform(0, 1, (9, 9))
        b = rng.uniform(0, 1, (9, 9))
        mse = sum((float(p) - float(q)) ** 2 for p, q in zip(a.ravel(), b.ravel())) / a.size
        assert psnr(a, b, 1.0) == pytest.approx(10 * math.log10(1.0 / mse), rel=1e-12)

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            psnr(np.ones((4, 4)), np.ones((4, 5)))


def ssim_reference(a, b):
    """Sliding-window SSIM with explicit loops over all full 11x11 windows."""
    win = 11
    sigma = 1.5
    ax = np.arange(win) - (win - 1) / 2.0
    g = np.exp(-(ax**2) / (2 * sigma**2))
    w = np.outer(g, g)
    w /= w.sum()
    c1, c2 = 0.01**2, 0.03**2
    values = []
    for i in range(a.shape[0] - win + 1):
        for j in range(a.shape[1] - win + 1):
            pa = a[i : i + win, j : j + win]
            pb = b[i : i + win, j : j + win]
            mu_a = (w * pa).sum()
            mu_b = (w * pb).sum()
            va = (w * pa * pa).sum() - mu_a**2
            vb = (w * pb * pb).sum() - mu_b**2
            cov = (w * pa * pb).sum() - mu_a * mu_b
            values.append(
                ((2 * mu_a * mu_b + c1) * (2 * cov + c2))
                / ((mu_a**2 + mu_b**2 + c1) * (va + vb + c2))
            )
    return float(np.mean(values))


class TestSsim:
    def test_identical_images(self):
        x = np.random.default_rng(17).uniform(0, 1, (16, 16))
        assert ssim(x, x) == pytest.approx(1.0, abs=1e-12)

    def test_binary_anticorrelation(self):
        rng = np.random.default_rng(18)
        a = (rng.uniform(size=(16, 16)) > 0.5).astype(float)
        assert ssim(a, 1.0 - a) < 0.0

    def test_matches_reference(self):
        rng = np.random.default_rng(19)
        a = rng.uniform(0, 1, (14, 15))
        b = np.clip(a + rng.normal(0, 0.1, a.shape), 0, 1)
        assert ssim(a, b) == pytest.approx(ssim_reference(a, b), abs=1e-6)

    def test_too_small_rejected(self):
        with pytest.raises(ValueError):
            ssim(np.ones((10, 10)), np.ones((10, 10)))


def ncc_reference(h1, h2):
    """Exhaustive-shift Pearson correlation, plain loops."""
    rows, cols = h1.shape
    a = h1 - h1.mean()
    na = math.sqrt((a * a).sum())
    best = -1.0
    for dy in range(-(rows - 1), rows):
        for dx in range(-(cols - 1), cols):
            shifted = np.zeros_like(h2)
            for i in range(rows):
                for j in range(cols):
                    si, sj = i - dy, j - dx
                    if 0 <= si < rows and 0 <= sj < cols:
                        shifted[i, j] = h2[si, sj]
            bs = shifted - shifted.mean()
            nb = math.sqrt((bs * bs).sum())
            if nb > 0:
                best = max(best, float((a * bs).sum()) / (na * nb))
    return best


class TestKernelNcc:
    def test_self_is_one(self):
        rng = np.random.default_rng(20)
        h = rng.uniform(0, 1, (8, 8))
        h /= h.sum()
        assert kernel_ncc(h, h) == pytest.approx(1.0, abs=1e-12)

    def test_shift_inside_support_is_one(self):
        h = np.zeros((9, 9))
        h[3:6, 3:6] = 1.0 / 9.0
        shifted = np.roll(np.roll(h, 2, axis=0), -1, axis=1)
        assert kernel_ncc(h, shifted) == pytest.approx(1.0, abs=1e-12)

    def test_disjoint_deltas_match_reference(self):
        h1 = np.zeros((7, 7))
        h2 = np.zeros((7, 7))
        h1[1, 1] = 1.0
        h2[5, 4] = 1.0
        assert kernel_ncc(h1, h2) == pytest.approx(ncc_reference(h1, h2), abs=1e-12)

    def test_matches_reference_random(self):
        rng = np.random.default_rng(21)
        h1 = rng.uniform(0, 1, (5, 5))
        h2 = rng.uniform(0, 1, (5, 5))
        assert kernel_ncc(h1, h2) == pytest.approx(ncc_reference(h1, h2), abs=1e-12)

    def test_common_translation_invariance(self):
        rng = np.random.default_rng(22)
        h = np.zeros((9, 9))
        h[3:6, 2:5] = rng.uniform(0.1, 1.0, (3, 3))
        h /= h.sum()
        g = np.roll(h, (1, -1), axis=(0, 1))
        moved_h = np.roll(h, (2, 1), axis=(0, 1))
        moved_g = np.roll(g, (2, 1), axis=(0, 1))
        assert kernel_ncc(moved_h, moved_g) == pytest.approx(kernel_ncc(h, g), abs=1e-12)

    def test_zero_variance_rejected(self):
        with pytest.raises(ValueError):
            kernel_ncc(np.full((4, 4), 0.0625), np.full((4, 4), 0.0625))


class TestValidateKernel:
    def test_accepts_valid(self):
        h = delta_kernel(4)
        validate_kernel(h, image_shape=(10, 10))

    def test_rejects_bad_sum(self):
        with pytest.raises(ValueError):
            validate_kernel(np.full((3, 3), 0.2))

    def test_rejects_nonsquare(self):
        with pytest.raises(ValueError):
            validate_kernel(np.full((2, 3), 1.0 / 6.0))
