import numpy as np
import pytest

from surge.core import RngStream, WeightCollapseError
from surge.guidance import GuidancePotential, exact_doob_guidance, zero_guidance
from surge.observation import make_arctan_partial_model, make_linear_model
from surge.propagation import PathStepRecord, em_step, propagate_window, uniform_grid
from surge.surrogate import ConstantSchedule, make_linear_gaussian_surrogate
from surge.weights import (
    WeightLedger,
    girsanov_log_weight,
    incremental_log_weight,
    incremental_log_weight_parts,
    whole_step_log_weight,
)


def random_guidance(seed, dim):
    rng = np.random.default_rng(seed)
    W, b = rng.normal(size=(dim, dim)), rng.normal(size=dim)
    return GuidancePotential(lambda x, s, y, xc=None: np.atleast_2d(x) @ W.T * (1 + s) + b, "rand")


def random_path(K, seed=0, n=200, guidance=None):
    rng = np.random.default_rng(seed)
    sur = make_linear_gaussian_surrogate(np.eye(2) + 0.1 * rng.normal(size=(2, 2)), np.diag([0.3, 0.1]))
    x0 = rng.normal(size=(n, 2))
    g = guidance or random_guidance(seed + 1, 2)
    path = propagate_window(sur, g, x0, x0, np.array([0.3]), uniform_grid(K), seed=seed)
    return sur, make_arctan_partial_model(0.2), np.array([0.3]), path


def accumulate(path, model, y, schedule):
    reward_sum = np.zeros(path[0].x_before.shape[0])
    total = np.zeros_like(reward_sum)
    prev = None
    for rec in path:
        reward, girsanov, prev = incremental_log_weight_parts(rec, model, y, schedule, reward_before=prev)
        reward_sum += reward
        total += reward + girsanov
    return reward_sum, total


class TestIncrement:
    def test_hand_arithmetic(self):
        # u = 1, ds = 0.25, xi = 0.5, rewards zero
        rec = PathStepRecord(
            x_before=np.zeros((1, 1)), x_after=np.zeros((1, 1)), noise=np.array([[0.5]]),
            s_k=0.0, s_next=0.25, grad_g=np.array([[1.0]]), drift=np.zeros((1, 1)),
        )
        assert girsanov_log_weight(rec, ConstantSchedule(np.eye(1)))[0] == pytest.approx(-0.375, abs=1e-15)

    def test_zero_guidance_is_reward_difference(self):
        sur, model, y, path = random_path(4, guidance=zero_guidance())
        rec = path[2]
        expected = rec.s_next * model.log_likelihood(y, rec.x_after) - rec.s_k * model.log_likelihood(y, rec.x_before)
        np.testing.assert_allclose(incremental_log_weight(rec, model, y, sur.schedule), expected, rtol=1e-14)

    def test_consumes_recorded_noise(self):
        sur, model, y, path = random_path(4)
        rec = path[1]
        altered = PathStepRecord(rec.x_before, rec.x_after, rec.noise + 1.0, rec.s_k, rec.s_next, rec.grad_g, rec.drift)
        assert not np.allclose(girsanov_log_weight(rec, sur.schedule), girsanov_log_weight(altered, sur.schedule))

    def test_zero_likelihood_propagates_minus_inf(self):
        model = make_linear_model([[1.0]], 1.0)
        object.__setattr__(model, "log_likelihood", lambda y, x: np.where(x[:, 0] > 0, -np.inf, 0.0))
        rec = PathStepRecord(np.zeros((2, 1)), np.array([[1.0], [-1.0]]), np.zeros((2, 1)), 0.0, 0.5,
                             np.zeros((2, 1)), np.zeros((2, 1)))
        inc = incremental_log_weight(rec, model, [0.0], ConstantSchedule(np.eye(1)))
        assert inc[0] == -np.inf and inc[1] == 0.0


class TestTelescoping:
    @pytest.mark.parametrize("K", [1, 2, 4, 7, 64])
    def test_rewards_sum_to_terminal_log_likelihood(self, K):
        sur, model, y, path = random_path(K, seed=K)
        reward_sum, _ = accumulate(path, model, y, sur.schedule)
        final = model.log_likelihood(y, path[-1].x_after)
        np.testing.assert_allclose(reward_sum, final, rtol=1e-12, atol=1e-12)

    def test_whole_step_equals_sum_of_increments(self):
        sur, model, y, path = random_path(16, seed=3)
        _, total = accumulate(path, model, y, sur.schedule)
        np.testing.assert_allclose(whole_step_log_weight(path, model, y, sur.schedule), total, rtol=1e-12, atol=1e-12)

    def test_whole_step_zero_guidance(self):
        sur, model, y, path = random_path(5, guidance=zero_guidance())
        np.testing.assert_allclose(
            whole_step_log_weight(path, model, y, sur.schedule), model.log_likelihood(y, path[-1].x_after)
        )

    def test_whole_step_needs_full_window(self):
        sur, model, y, path = random_path(4)
        with pytest.raises(ValueError):
            whole_step_log_weight(path[1:], model, y, sur.schedule)

    def test_likelihood_shift_leaves_normalized_weights(self):
        sur, model, y, path = random_path(8, seed=5)
        shifted = make_arctan_partial_model(0.2)
        base = model.log_likelihood
        object.__setattr__(shifted, "log_likelihood", lambda yy, x: base(yy, x) + 3.7)
        a = WeightLedger(np.zeros(200))
        b = WeightLedger(np.zeros(200))
        a.update(whole_step_log_weight(path, model, y, sur.schedule))
        b.update(whole_step_log_weight(path, shifted, y, sur.schedule))
        np.testing.assert_allclose(a.weights(), b.weights(), atol=1e-12)


@pytest.mark.xfail(strict=True, reason="time discretization leaves log-weight spread near 0.17 at K=256")
def test_doob_whole_step_weights_nearly_constant():
    A, Q, H, R = [[0.9]], [[0.04]], [[1.0]], [[0.0025]]
    sur = make_linear_gaussian_surrogate(A, Q)
    g = exact_doob_guidance(A, Q, H, R)
    x0 = np.full((64, 1), 0.1)
    y = np.array([0.2])
    path = propagate_window(sur, g, x0, x0, y, uniform_grid(256), seed=1)
    lw = whole_step_log_weight(path, make_linear_model(H, 0.05), y, sur.schedule)
    assert np.std(lw) < 0.05


class TestLedger:
    def test_update_returns_log_mean_increment(self):
        ledger = WeightLedger(np.zeros(4))
        inc = np.log([1.0, 2.0, 3.0, 4.0])
        assert ledger.update(inc) == pytest.approx(np.log(2.5))
        np.testing.assert_allclose(ledger.weights(), [0.1, 0.2, 0.3, 0.4])

    def test_collapse_reports_position(self):
        ledger = WeightLedger(np.zeros(3))
        with pytest.raises(WeightCollapseError) as err:
            ledger.update(np.full(3, -np.inf), t=5, k=7)
        assert (err.value.t, err.value.k) == (5, 7)

    def test_reset_and_ess(self):
        ledger = WeightLedger(np.array([0.0, -np.inf]))
        assert ledger.ess() == pytest.approx(1.0)
        ledger.reset_uniform()
        assert ledger.ess() == pytest.approx(2.0)

    def test_history(self):
        ledger = WeightLedger(np.zeros(2), keep_history=True)
        ledger.update(np.array([1.0, 2.0]))
        ledger.update(np.array([0.5, 0.0]))
        assert len(ledger.history) == 2

    def test_zero_guidance_window_sum(self):
        sur, model, y, path = random_path(6, guidance=zero_guidance())
        ledger = WeightLedger(np.zeros(200), keep_history=True)
        prev = None
        for rec in path:
            reward, girsanov, prev = incremental_log_weight_parts(rec, model, y, sur.schedule, reward_before=prev)
            ledger.update(reward + girsanov)
        np.testing.assert_allclose(np.sum(ledger.history, axis=0), model.log_likelihood(y, path[-1].x_after),
                                   rtol=1e-12, atol=1e-12)
