import numpy as np
import pytest

from playwm import diffusion as df
from playwm import nets
from playwm.optim import Adam, clip_grad_norm
from playwm import autodiff as ad
from playwm.rng import Rng


def zero_denoiser(target_dim=2, cond_dim=3):
    net = df.DenoiserNet.create(target_dim, cond_dim, Rng(0), hidden=8, depth=1)
    for p in net.net.params.values():
        p[:] = 0.0
    return net


class SeqRng(Rng):
    """Returns queued arrays for normal(); zeros once the queue is empty."""

    def __init__(self, queue):
        super().__init__(0)
        self.queue = list(queue)

    def normal(self, shape):
        if self.queue:
            return np.broadcast_to(np.asarray(self.queue.pop(0), dtype=np.float64), _shape(shape)).copy()
        return np.zeros(_shape(shape))


def _shape(shape):
    return (shape,) if isinstance(shape, int) else tuple(shape)


class TestSchedule:
    def test_linear_schedule_invariants(self):
        s = df.NoiseSchedule.linear(50)
        assert s.alpha_bars[0] == 1.0
        assert np.all(np.diff(s.betas) > 0)
        assert np.all((s.betas > 0) & (s.betas < 1))
        assert np.all(np.diff(s.alpha_bars) < 0)


class TestQSample:
    def test_t_zero_is_identity(self):
        s = df.NoiseSchedule.linear(10)
        x0 = np.array([[0.3, -0.7]])
        eps = np.ones_like(x0)
        assert np.array_equal(df.q_sample(s, x0, 0, eps), x0)

    def test_alpha_bar_quarter(self):
        # craft a schedule point with abar = 0.25
        s = df.NoiseSchedule(T=1, betas=np.array([0.75]), alphas=np.array([0.25]),
                             alpha_bars=np.array([1.0, 0.25]))
        out = df.q_sample(s, np.array([1.0]), 1, np.array([0.0]))
        assert out[0] == pytest.approx(0.5)

    def test_full_noise_limit(self):
        s = df.NoiseSchedule(T=1, betas=np.array([1 - 1e-12]), alphas=np.array([1e-12]),
                             alpha_bars=np.array([1.0, 1e-12]))
        eps = np.array([2.0])
        out = df.q_sample(s, np.array([5.0]), 1, eps)
        assert out[0] == pytest.approx(2.0, abs=1e-5)

    def test_out_of_range_t(self):
        s = df.NoiseSchedule.linear(10)
        with pytest.raises(ValueError):
            df.q_sample(s, np.zeros(2), 11, np.zeros(2))

    def test_marginal_statistics(self):
        s = df.NoiseSchedule.linear(50)
        rng = Rng(4)
        x0 = np.full((20_000, 1), 0.8)
        eps = rng.normal(x0.shape)
        t = 30
        xt = df.q_sample(s, x0, t, eps)
        abar = s.alpha_bars[t]
        n = x0.shape[0]
        # 3-sigma statistical bounds
        assert abs(xt.mean() - np.sqrt(abar) * 0.8) < 3 * np.sqrt((1 - abar) / n)
        assert abs(xt.var() - (1 - abar)) < 3 * (1 - abar) * np.sqrt(2.0 / n)


class TestLoss:
    def test_perfect_net_zero_loss(self):
        # an x0-head net whose clean-signal output is exactly x0 hits loss 0
        s = df.NoiseSchedule.linear(10)
        net = zero_denoiser(target_dim=2, cond_dim=3)
        net.x0_head = True
        rng = Rng(1)
        x0 = np.zeros((4, 2))  # zero net output == the true clean signal here
        loss = df.diffusion_loss(net, s, x0, np.zeros((4, 3)), rng)
        assert loss == 0.0

    def test_zero_net_loss_near_one(self):
        s = df.NoiseSchedule.linear(10)
        net = zero_denoiser(target_dim=4, cond_dim=2)
        rng = Rng(2)
        losses = [df.diffusion_loss(net, s, np.zeros((64, 4)), np.zeros((64, 2)), rng)
                  for _ in range(30)]
        assert np.mean(losses) == pytest.approx(1.0, abs=0.05)

    def test_loss_nonnegative_and_differentiable(self):
        s = df.NoiseSchedule.linear(10)
        net = df.DenoiserNet.create(3, 2, Rng(5), hidden=8, depth=1)
        pvars = nets.wrap_params(net.net)
        loss = df.diffusion_loss(net, s, np.ones((8, 3)), np.zeros((8, 2)), Rng(3), pvars)
        assert loss.value >= 0.0
        ad.backward(loss)
        assert any(np.any(v.grad != 0) for v in pvars.values() if v.grad is not None)


class TestDdpm:
    def test_zero_stub_closed_form(self):
        s = df.NoiseSchedule.linear(20)
        net = zero_denoiser(target_dim=2, cond_dim=1)
        x_T = np.array([[0.5, -1.0]])
        rng = SeqRng([x_T])
        out = df.ddpm_sample(net, s, np.zeros((1, 1)), rng)
        expect = x_T / np.sqrt(s.alpha_bars[s.T])
        assert np.allclose(out, expect, atol=1e-12)

    def test_seeded_reproducibility(self):
        s = df.NoiseSchedule.linear(20)
        net = df.DenoiserNet.create(2, 1, Rng(7), hidden=8, depth=1)
        a = df.ddpm_sample(net, s, np.zeros((3, 1)), Rng(99))
        b = df.ddpm_sample(net, s, np.zeros((3, 1)), Rng(99))
        assert np.array_equal(a, b)

    def test_point_mass_recovery(self):
        # train on a 1-dim point mass and check samples concentrate there
        target = 0.7
        s = df.NoiseSchedule.linear(50)
        rng = Rng(13)
        net = df.DenoiserNet.create(1, 1, rng, hidden=32, depth=2)
        opt = Adam(lr=3e-3)
        x0 = np.full((128, 1), target)
        cond = np.zeros((128, 1))
        for _ in range(800):
            pvars = nets.wrap_params(net.net)
            loss = df.diffusion_loss(net, s, x0, cond, rng, pvars)
            ad.backward(loss)
            grads = nets.grads_from(pvars)
            clip_grad_norm(grads, 1.0)
            opt.step(net.net.params, grads)
        samples = df.ddpm_sample(net, s, np.zeros((256, 1)), Rng(5))
        assert abs(samples.mean() - target) < 0.05


class TestDdim:
    def test_deterministic_given_w0(self):
        s = df.NoiseSchedule.linear(30)
        net = df.DenoiserNet.create(2, 1, Rng(3), hidden=8, depth=1)
        w0 = Rng(8).normal((2, 2))
        a = df.ddim_sample(net, s, np.zeros((2, 1)), 5, w0)
        b = df.ddim_sample(net, s, np.zeros((2, 1)), 5, w0)
        assert np.array_equal(a, b)

    def test_zero_stub_closed_form(self):
        s = df.NoiseSchedule.linear(30)
        net = zero_denoiser(2, 1)
        w0 = np.array([[1.0, -2.0]])
        out = df.ddim_sample(net, s, np.zeros((1, 1)), 5, w0)
        assert np.allclose(out, w0 / np.sqrt(s.alpha_bars[s.T]), atol=1e-12)

    def test_full_steps_allowed(self):
        s = df.NoiseSchedule.linear(10)
        net = zero_denoiser(1, 1)
        out = df.ddim_sample(net, s, np.zeros((1, 1)), 10, np.array([[2.0]]))
        assert np.allclose(out, 2.0 / np.sqrt(s.alpha_bars[10]))

    def test_continuity_in_w0(self):
        s = df.NoiseSchedule.linear(30)
        rng = Rng(21)
        net = df.DenoiserNet.create(2, 1, rng, hidden=16, depth=2)
        w0 = rng.normal((1, 2))
        base = df.ddim_sample(net, s, np.zeros((1, 1)), 5, w0)
        for scale in (1e-3, 1e-2, 0.1):
            delta = rng.normal((1, 2)) * scale
            moved = df.ddim_sample(net, s, np.zeros((1, 1)), 5, w0 + delta)
            assert np.linalg.norm(moved - base) < 50.0 * np.linalg.norm(delta)

    def test_bad_steps_rejected(self):
        s = df.NoiseSchedule.linear(10)
        net = zero_denoiser(1, 1)
        with pytest.raises(ValueError):
            df.ddim_sample(net, s, np.zeros((1, 1)), 0, np.zeros((1, 1)))


def test_gaussian_mixture_recovery_small():
    """Mini version of the mixture-recovery check (full one lives in acceptance)."""
    means = (-2.0, 2.0)
    s = df.NoiseSchedule.linear(200)
    rng = Rng(17)
    net = df.DenoiserNet.create(1, 1, rng, hidden=64, depth=2)
    opt = Adam(lr=2e-3)
    n = 256
    for _ in range(1200):
        comp = rng.uniform_array(n) < 0.5
        x0 = np.where(comp, means[0], means[1])[:, None] + rng.normal((n, 1)) * 0.2
        pvars = nets.wrap_params(net.net)
        loss = df.diffusion_loss(net, s, x0, np.zeros((n, 1)), rng, pvars)
        ad.backward(loss)
        grads = nets.grads_from(pvars)
        clip_grad_norm(grads, 1.0)
        opt.step(net.net.params, grads)
    samples = df.ddpm_sample(net, s, np.zeros((512, 1)), Rng(30)).ravel()
    lo = samples[samples < 0].mean()
    hi = samples[samples >= 0].mean()
    assert abs(lo - means[0]) < 0.3
    assert abs(hi - means[1]) < 0.3
