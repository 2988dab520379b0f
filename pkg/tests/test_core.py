import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from surge.core import (
    Ensemble,
    Purpose,
    RngStream,
    WeightCollapseError,
    gaussian_draw,
    normalize_log_weights,
    philox4x64,
    uniform_draw,
)

finite_logs = arrays(np.float64, st.integers(1, 30), elements=st.floats(-500, 500))


class TestNormalizeLogWeights:
    def test_uniform(self):
        w, log_z = normalize_log_weights([0.0, 0.0, 0.0])
        np.testing.assert_allclose(w, [1 / 3] * 3, atol=1e-15)
        assert log_z == pytest.approx(np.log(3), abs=1e-15)

    def test_two_to_one(self):
        w, log_z = normalize_log_weights([np.log(2), 0.0])
        np.testing.assert_allclose(w, [2 / 3, 1 / 3], atol=1e-15)
        assert log_z == pytest.approx(np.log(3), abs=1e-15)

    def test_large_offsets_do_not_overflow(self):
        # exact answer obtained at the shifted origin: exp(0) + exp(log 3) = 4
        w, log_z = normalize_log_weights([1000.0, 1000.0 + np.log(3)])
        np.testing.assert_allclose(w, [0.25, 0.75], atol=1e-15)
        assert log_z == pytest.approx(1000.0 + np.log(4), abs=1e-12)

    def test_minus_inf_entries_get_zero_weight(self):
        w, _ = normalize_log_weights([0.0, -np.inf, 0.0])
        np.testing.assert_array_equal(w, [0.5, 0.0, 0.5])

    def test_total_collapse(self):
        with pytest.raises(WeightCollapseError, match="total weight collapse"):
            normalize_log_weights([-np.inf, -np.inf])

    @pytest.mark.parametrize("bad", [[], [np.nan, 0.0], [np.inf, 0.0]])
    def test_invalid_input(self, bad):
        with pytest.raises(ValueError):
            normalize_log_weights(bad)

    @settings(max_examples=200, deadline=None)
    @given(finite_logs, st.floats(-1e3, 1e3))
    def test_shift_invariance(self, log_w, c):
        w1, _ = normalize_log_weights(log_w)
        w2, _ = normalize_log_weights(log_w + c)
        np.testing.assert_allclose(w1, w2, atol=1e-12)
        assert w1.sum() == pytest.approx(1.0, abs=1e-12)

    @settings(max_examples=100, deadline=None)
    @given(finite_logs)
    def test_idempotent(self, log_w):
        w, _ = normalize_log_weights(log_w)
        with np.errstate(divide="ignore"):
            w2, log_z = normalize_log_weights(np.log(w))
        np.testing.assert_allclose(w, w2, atol=1e-12)
        assert log_z == pytest.approx(0.0, abs=1e-12)


class TestEnsemble:
    def test_defaults_to_uniform(self):
        ens = Ensemble(np.zeros((4, 2)))
        np.testing.assert_allclose(ens.normalized_weights(), 0.25)
        assert ens.ess() == pytest.approx(4.0)
        assert ens.n_particles == 4 and ens.dim == 2

    def test_weighted_mean(self):
        ens = Ensemble(np.array([[0.0], [4.0]]), np.log([0.75, 0.25]))
        np.testing.assert_allclose(ens.mean(), [1.0])

    def test_rejects_non_finite_particles(self):
        with pytest.raises(ValueError):
            Ensemble(np.array([[0.0], [np.nan]]))

    def test_arrays_are_read_only(self):
        ens = Ensemble(np.zeros((2, 1)))
        with pytest.raises(ValueError):
            ens.particles[0, 0] = 1.0

    def test_normalized_is_idempotent(self):
        ens = Ensemble(np.arange(3.0)[:, None], np.array([0.3, -1.0, 2.0]))
        once = ens.normalized()
        np.testing.assert_allclose(once.normalized().log_weights, once.log_weights, atol=1e-15)


class TestPhilox:
    def test_matches_numpy_bit_generator(self):
        # numpy bumps the counter once before its first block
        ref = np.random.Philox(key=[7, 3], counter=[5, 3, 2, 0]).random_raw(4)
        out = philox4x64(np.array([[6, 3, 2, 0]], dtype=np.uint64), (7, 3))
        np.testing.assert_array_equal(out[0], ref)

    def test_many_counters_match_numpy(self):
        for c0 in (0, 1, 2**40, 2**62):
            ref = np.random.Philox(key=[11, 0], counter=[c0, 9, 1, 0]).random_raw(4)
            out = philox4x64(np.array([[c0 + 1, 9, 1, 0]], dtype=np.uint64), (11, 0))
            np.testing.assert_array_equal(out[0], ref)


class TestStreams:
    def test_repeatable(self):
        rng = RngStream(7, 0, 0, 0)
        np.testing.assert_array_equal(gaussian_draw(rng, 3), gaussian_draw(rng, 3))

    def test_batched_rows_equal_single_streams(self):
        batch = gaussian_draw(RngStream(7, np.arange(5), 2, 3), 3)
        for i in range(5):
            np.testing.assert_array_equal(batch[i], gaussian_draw(RngStream(7, i, 2, 3), 3))

    def test_purposes_are_distinct(self):
        a = gaussian_draw(RngStream(7, 0, 0, 0, Purpose.PROPAGATE), 4)
        b = gaussian_draw(RngStream(7, 0, 0, 0, Purpose.RESAMPLE), 4)
        assert not np.array_equal(a, b)

    def test_uniform_range(self):
        u = uniform_draw(RngStream(1, np.arange(1000)), 9)
        assert u.shape == (1000, 9)
        assert np.all((u > 0) & (u <= 1))

    def test_dim_must_be_positive(self):
        with pytest.raises(ValueError):
            gaussian_draw(RngStream(0), 0)

    def test_moments(self):
        # 10^6 draws: 4-sigma bounds on mean and variance
        z = gaussian_draw(RngStream(3, np.arange(250_000), 0, 0), 4).ravel()
        assert abs(z.mean()) < 4e-3
        assert abs(z.var() - 1.0) < 6e-3

    def test_distinct_streams_uncorrelated(self):
        a = gaussian_draw(RngStream(0, 0, 0, 0), 100_000)
        b = gaussian_draw(RngStream(0, 1, 0, 0), 100_000)
        assert abs(np.corrcoef(a, b)[0, 1]) < 0.013
