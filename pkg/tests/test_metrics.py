import math

import numpy as np
import pytest

from playwm import metrics as M
from playwm.curation import Embedder
from playwm.rng import Rng


def rand_frame(rng, n=64):
    return rng.uniform_array((n, n))


class TestMsePsnr:
    def test_identical(self):
        f = rand_frame(Rng(1))
        assert M.mse(f, f) == 0.0
        assert M.psnr(f, f) == 100.0

    def test_zero_vs_one(self):
        z = np.zeros((16, 16))
        o = np.ones((16, 16))
        assert M.mse(z, o) == 1.0
        assert M.psnr(z, o) == 0.0

    def test_half_pixels_differ(self):
        x = np.zeros((8, 8))
        y = np.zeros((8, 8))
        y[:4, :] = 0.1
        assert M.mse(x, y) == pytest.approx(0.005)
        assert M.psnr(x, y) == pytest.approx(10 * math.log10(200), abs=1e-9)

    def test_shape_mismatch(self):
        with pytest.raises(M.MetricError):
            M.mse(np.zeros((4, 4)), np.zeros((5, 5)))


def ssim_oracle(x, y):
    """Direct per-window SSIM formula, coded independently of the main path."""
    size, sigma = 7, 1.5
    ax = np.arange(size) - 3.0
    g = np.exp(-(ax ** 2) / (2 * sigma ** 2))
    k = np.outer(g, g)
    k /= k.sum()
    c1, c2 = 0.01 ** 2, 0.03 ** 2
    h, w = x.shape
    vals = []
    for i in range(h - size + 1):
        for j in range(w - size + 1):
            wx = x[i:i + size, j:j + size]
            wy = y[i:i + size, j:j + size]
            mx = (k * wx).sum()
            my = (k * wy).sum()
            vxx = (k * wx * wx).sum() - mx * mx
            vyy = (k * wy * wy).sum() - my * my
            vxy = (k * wx * wy).sum() - mx * my
            vals.append(((2 * mx * my + c1) * (2 * vxy + c2))
                        / ((mx * mx + my * my + c1) * (vxx + vyy + c2)))
    return float(np.mean(vals))


class TestSsim:
    def test_self_similarity(self):
        f = rand_frame(Rng(2), 16)
        assert M.ssim(f, f) == pytest.approx(1.0, abs=1e-12)

    def test_symmetry(self):
        a, b = rand_frame(Rng(3), 16), rand_frame(Rng(4), 16)
        assert M.ssim(a, b) == pytest.approx(M.ssim(b, a), abs=1e-15)

    def test_constant_zero_vs_one(self):
        z = np.zeros((16, 16))
        o = np.ones((16, 16))
        expect = M.SSIM_C1 / (1 + M.SSIM_C1)
        assert M.ssim(z, o) == pytest.approx(expect, rel=1e-9)

    def test_against_direct_oracle(self):
        rng = Rng(5)
        for _ in range(20):
            a, b = rand_frame(rng, 12), rand_frame(rng, 12)
            assert M.ssim(a, b) == pytest.approx(ssim_oracle(a, b), abs=1e-9)

    def test_too_small(self):
        with pytest.raises(M.MetricError):
            M.ssim(np.zeros((5, 5)), np.zeros((5, 5)))


class TestLpipsProxy:
    def test_identity_and_symmetry(self):
        emb = Embedder.create(0)
        a, b = rand_frame(Rng(6)), rand_frame(Rng(7))
        assert M.lpips_proxy(emb, a, a) == 0.0
        assert M.lpips_proxy(emb, a, b) == pytest.approx(M.lpips_proxy(emb, b, a))

    def test_triangle_inequality(self):
        emb = Embedder.create(0)
        rng = Rng(8)
        a, b, c = (rand_frame(rng) for _ in range(3))
        assert M.lpips_proxy(emb, a, c) <= M.lpips_proxy(emb, a, b) + M.lpips_proxy(emb, b, c) + 1e-12

    def test_single_pixel_delta(self):
        emb = Embedder.create(0)
        a = np.zeros((64, 64))
        b = a.copy()
        delta = 0.37
        b[10, 20] = delta
        d = M.lpips_proxy(emb, a, b)
        assert d == pytest.approx(delta / math.sqrt(emb.projection.out_dim), rel=1e-12)


class TestPearson:
    def test_perfect_positive(self):
        xs = [1.0, 2.0, 3.0]
        assert M.pearson(xs, [2 * v for v in xs]) == pytest.approx(1.0)

    def test_perfect_negative(self):
        xs = [1.0, 2.0, 3.0]
        assert M.pearson(xs, [-v for v in xs]) == pytest.approx(-1.0)

    def test_hand_value(self):
        assert M.pearson([1, 2, 3, 4], [1, 3, 2, 4]) == pytest.approx(0.8)

    def test_affine_invariance(self):
        rng = Rng(9)
        xs = rng.normal(20)
        ys = rng.normal(20)
        base = M.pearson(xs, ys)
        assert M.pearson(3.0 * xs + 1.5, ys) == pytest.approx(base, abs=1e-12)

    def test_zero_variance(self):
        with pytest.raises(M.MetricError):
            M.pearson([1.0, 1.0, 1.0], [1.0, 2.0, 3.0])


class TestTv:
    def test_equal(self):
        assert M.tv_distance([0.5, 0.5], [0.5, 0.5]) == 0.0

    def test_disjoint(self):
        assert M.tv_distance([1.0, 0.0], [0.0, 1.0]) == 1.0

    def test_hand_value(self):
        assert M.tv_distance([0.5, 0.5], [0.75, 0.25]) == pytest.approx(0.25)

    def test_metric_properties(self):
        rng = Rng(10)
        for _ in range(10):
            p = rng.uniform_array(4)
            q = rng.uniform_array(4)
            r = rng.uniform_array(4)
            p, q, r = p / p.sum(), q / q.sum(), r / r.sum()
            assert M.tv_distance(p, q) == pytest.approx(M.tv_distance(q, p))
            assert M.tv_distance(p, r) <= M.tv_distance(p, q) + M.tv_distance(q, r) + 1e-12

    def test_not_normalized(self):
        with pytest.raises(M.MetricError):
            M.tv_distance([0.5, 0.6], [0.5, 0.5])


class TestNormalize:
    def test_endpoints(self):
        assert M.normalize_score(0.072) == 0.0
        assert M.normalize_score(0.10) == pytest.approx(-1.0)

    def test_midpoint(self):
        assert M.normalize_score(0.086) == pytest.approx(-0.5)

    def test_order_reversal(self):
        assert M.normalize_score(0.08) > M.normalize_score(0.09)

    def test_degenerate(self):
        with pytest.raises(M.MetricError):
            M.normalize_score(0.5, 1.0, 1.0)
