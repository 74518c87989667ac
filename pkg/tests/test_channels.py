"""Channel simulators and constraint projection."""

import numpy as np
import pytest

from capbench.autodiff import Tensor, backward
from capbench import autodiff as ad
from capbench.channels import (
    ChannelSpec,
    ConstraintError,
    ConstraintSpec,
    awgn_forward,
    check_feasible,
    db_to_linear,
    mac_forward,
    poisson_forward,
    project_constraints,
    project_constraints_array,
)
from capbench.rng import RngStream, sample_poisson


class TestAwgnForward:
    def test_zero_sigma_is_identity(self):
        x = Tensor(np.arange(10.0).reshape(10, 1))
        y = awgn_forward(x, 0.0, RngStream(0))
        np.testing.assert_array_equal(y.data, x.data)

    def test_negative_sigma_rejected(self):
        with pytest.raises(ValueError, match="sigma"):
            awgn_forward(Tensor(np.zeros((4, 1))), -1.0, RngStream(0))

    def test_noise_variance_near_one(self):
        y = awgn_forward(Tensor(np.zeros((10**6, 1))), 1.0, RngStream(1))
        assert 0.99 < y.data.var() < 1.01

    def test_monte_carlo_second_moment_of_noise(self):
        x = Tensor(np.linspace(-2, 2, 10**6).reshape(-1, 1))
        sigma = 0.7
        y = awgn_forward(x, sigma, RngStream(2))
        mse = np.mean((y.data - x.data) ** 2)
        assert abs(mse - sigma**2) / sigma**2 < 0.01

    def test_gradient_passes_through(self):
        x = Tensor(np.zeros((8, 1)))
        y = awgn_forward(x, 0.5, RngStream(3))
        backward(ad.tsum(y))
        np.testing.assert_array_equal(x.grad, np.ones((8, 1)))

    def test_replay_is_bit_exact(self):
        x = Tensor(np.ones((64, 1)))
        y1 = awgn_forward(x, 2.0, RngStream(9))
        y2 = awgn_forward(x, 2.0, RngStream(9))
        np.testing.assert_array_equal(y1.data, y2.data)


class TestPoissonForward:
    def test_mean_without_dark_current(self):
        x = Tensor(np.full((10**6, 1), 3.0))
        y = poisson_forward(x, 0.0, RngStream(4))
        assert abs(y.data.mean() - 3.0) < 3.0 * np.sqrt(3.0 / 10**6)

    def test_dark_current_adds_to_mean(self):
        x = Tensor(np.full((10**6, 1), 3.0))
        y = poisson_forward(x, 10.0, RngStream(5))
        assert abs(y.data.mean() - 13.0) < 3.0 * np.sqrt(13.0 / 10**6)

    def test_zero_input_zero_dark_is_identically_zero(self):
        y = poisson_forward(Tensor(np.zeros((1000, 1))), 0.0, RngStream(6))
        np.testing.assert_array_equal(y.data, np.zeros((1000, 1)))

    def test_negative_input_rejected(self):
        with pytest.raises(ValueError, match="nonnegative"):
            poisson_forward(Tensor(np.array([[-0.1]])), 0.0, RngStream(0))

    def test_zero_input_with_dark_matches_direct_sampler(self):
        """Two-sample TV between channel draws at x=0 and sample_poisson."""
        n = 10**6
        lam = 2.5
        a = poisson_forward(Tensor(np.zeros((n, 1))), lam, RngStream(7)).data.astype(int)
        b = sample_poisson(RngStream(8), lam, n).data.astype(int)
        kmax = max(a.max(), b.max())
        pa = np.bincount(a.ravel(), minlength=kmax + 1) / n
        pb = np.bincount(b.ravel(), minlength=kmax + 1) / n
        assert 0.5 * np.abs(pa - pb).sum() < 0.005


class TestMacForward:
    def test_noiseless_sum(self):
        y = mac_forward(Tensor([[1.0]]), Tensor([[2.0]]), 0.0, RngStream(0))
        np.testing.assert_array_equal(y.data, [[3.0]])

    def test_noise_variance(self):
        z = np.zeros((10**6, 1))
        y = mac_forward(Tensor(z), Tensor(z), 1.0, RngStream(1))
        assert abs(y.data.var() - 1.0) < 0.01

    def test_shared_noise_linearity(self):
        a = np.full((128, 1), 0.7)
        b = np.linspace(0, 1, 128).reshape(-1, 1)
        y_ab = mac_forward(Tensor(a), Tensor(b), 1.0, RngStream(33))
        y_0b = mac_forward(Tensor(np.zeros_like(a)), Tensor(b), 1.0, RngStream(33))
        np.testing.assert_allclose(y_ab.data - y_0b.data, a, atol=1e-12)

    def test_shape_mismatch_rejected(self):
        with pytest.raises(ValueError, match="shape"):
            mac_forward(Tensor(np.zeros((3, 1))), Tensor(np.zeros((4, 1))), 1.0,
                        RngStream(0))


class TestConstraintSpec:
    def test_requires_some_constraint(self):
        with pytest.raises(ConstraintError, match="at least one"):
            ConstraintSpec()

    def test_contradictory_mean_above_peak(self):
        with pytest.raises(ConstraintError, match="ratio"):
            ConstraintSpec(nonneg=True, peak=3.0, mean_budget=5.0)

    def test_alpha_ratio(self):
        c = ConstraintSpec(nonneg=True, peak=10.0, mean_budget=2.0)
        assert c.alpha == pytest.approx(0.2)

    def test_mac_kind_needs_two_specs(self):
        with pytest.raises(ConstraintError, match="exactly 2"):
            ChannelSpec("awgn_mac", (ConstraintSpec(avg_power=1.0),))

    def test_poisson_requires_nonneg(self):
        with pytest.raises(ConstraintError, match="nonneg"):
            ChannelSpec("poisson", (ConstraintSpec(avg_power=1.0),))


class TestProjectConstraints:
    def test_feasible_batch_unchanged_under_power_budget(self):
        c = ConstraintSpec(avg_power=4.0)
        raw = Tensor(np.array([[1.0], [-1.0], [0.5]]))
        out = project_constraints(raw, c)
        np.testing.assert_array_equal(out.data, raw.data)

    def test_power_rescale_is_exact(self):
        c = ConstraintSpec(avg_power=1.0)
        raw = Tensor(np.full((64, 1), 2.0))  # mean square 4
        out = project_constraints(raw, c)
        np.testing.assert_allclose(out.data, np.full((64, 1), 1.0), rtol=1e-12)
        assert np.mean(out.data**2) == pytest.approx(1.0, rel=1e-12)

    def test_peak_nonneg_bounds_any_input(self):
        c = ConstraintSpec(nonneg=True, peak=5.0)
        raw = Tensor(np.array([[-100.0], [0.0], [100.0], [3.0]]))
        out = project_constraints(raw, c)
        assert np.all(out.data >= 0.0)
        assert np.all(out.data <= 5.0)

    def test_symmetric_peak_uses_tanh_range(self):
        c = ConstraintSpec(peak=2.0)
        raw = Tensor(np.array([[-50.0], [50.0]]))
        out = project_constraints(raw, c)
        assert np.all(np.abs(out.data) <= 2.0)

    def test_mean_budget_rescales(self):
        c = ConstraintSpec(nonneg=True, mean_budget=1.0)
        raw = Tensor(np.log(np.expm1(np.full((32, 1), 4.0))))  # softplus -> 4.0
        out = project_constraints(raw, c)
        assert out.data.mean() == pytest.approx(1.0, rel=1e-9)

    def test_feasibility_slack_invariant(self):
        rng = np.random.default_rng(0)
        specs = [
            ConstraintSpec(avg_power=2.0),
            ConstraintSpec(nonneg=True, peak=3.0, mean_budget=1.0),
            ConstraintSpec(peak=1.5, avg_power=1.0),
            ConstraintSpec(nonneg=True, mean_budget=0.5),
        ]
        for c in specs:
            raw = Tensor(rng.normal(scale=5.0, size=(256, 1)))
            out = project_constraints(raw, c)
            check_feasible(out.data, c)

    def test_array_twin_matches_tape_version(self):
        rng = np.random.default_rng(1)
        raw = rng.normal(scale=3.0, size=(128, 1))
        for c in (
            ConstraintSpec(avg_power=1.0),
            ConstraintSpec(nonneg=True, peak=4.0, mean_budget=1.0),
            ConstraintSpec(peak=2.0),
            ConstraintSpec(nonneg=True, mean_budget=2.0),
        ):
            tape = project_constraints(Tensor(raw), c).data
            plain = project_constraints_array(raw, c)
            np.testing.assert_array_equal(tape, plain)

    def test_projection_is_differentiable(self):
        c = ConstraintSpec(avg_power=1.0)
        raw = Tensor(np.full((16, 1), 2.0))
        out = project_constraints(raw, c)
        backward(ad.tsum(out))
        assert raw.grad is not None
        assert np.all(np.isfinite(raw.grad))


def test_db_conversion_round_trip():
    assert db_to_linear(2.0) == pytest.approx(1.5848931924611136)
    assert db_to_linear(20.0) == pytest.approx(100.0)
