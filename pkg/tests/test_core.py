import math

import numpy as np
import pytest

from trafficprim.core import (
    GaussianEmission,
    HyperParams,
    ModelState,
    NiwPrior,
    TimeSeriesBag,
    default_niw_prior,
    gaussian_logpdf,
    joint_log_likelihood,
    runs_of,
    simulate,
    stick_breaking,
    sticky_row_concentration,
)
from trafficprim.errors import NumericError, ParameterError


def make_bag(data, rate=10.0):
    data = np.atleast_2d(np.asarray(data, dtype=float))
    channels = tuple(f"t.c{i}" for i in range(data.shape[0]))
    return TimeSeriesBag(bag_id="b", channels=channels, rate_hz=rate, start_time=0.0, data=data)


class TestTimeSeriesBag:
    def test_rejects_nan(self):
        with pytest.raises(ParameterError):
            make_bag([[1.0, np.nan]])

    def test_rejects_duplicate_channels(self):
        with pytest.raises(ParameterError):
            TimeSeriesBag("b", ("a.x", "a.x"), 1.0, 0.0, np.zeros((2, 3)))

    def test_rejects_shape_mismatch(self):
        with pytest.raises(ParameterError):
            TimeSeriesBag("b", ("a.x",), 1.0, 0.0, np.zeros((2, 3)))

    def test_data_is_immutable(self):
        bag = make_bag([[1.0, 2.0]])
        with pytest.raises(ValueError):
            bag.data[0, 0] = 5.0


class TestStickBreaking:
    def test_one_stick_plus_remainder(self):
        rng = np.random.default_rng(0)
        beta = stick_breaking(1.0, 1, rng)
        assert beta.shape == (2,)
        assert abs(beta.sum() - 1.0) < 1e-12
        assert np.all(beta >= 0)

    def test_mean_of_first_weight_matches_beta_mean(self):
        # first weight is Beta(1, gamma) with mean 1/(1+gamma)
        rng = np.random.default_rng(123)
        draws = np.array([stick_breaking(1.0, 3, rng)[0] for _ in range(100_000)])
        assert abs(draws.mean() - 0.5) < 0.01

    def test_larger_gamma_gives_smaller_first_weight(self):
        n = 20_000
        mean_small = np.mean(
            [stick_breaking(0.1, 10, np.random.default_rng(s))[0] for s in range(n)]
        )
        mean_large = np.mean(
            [stick_breaking(10.0, 10, np.random.default_rng(s))[0] for s in range(n)]
        )
        # Beta(1, gamma) means: 1/1.1 = 0.909 vs 1/11 = 0.0909
        assert mean_large < mean_small
        assert abs(mean_small - 1 / 1.1) < 0.01
        assert abs(mean_large - 1 / 11) < 0.01

    @pytest.mark.parametrize("gamma", [0.1, 1.0, 10.0])
    @pytest.mark.parametrize("L", [1, 2, 7, 50])
    def test_sums_to_one_nonnegative(self, gamma, L):
        for seed in range(5):
            beta = stick_breaking(gamma, L, np.random.default_rng(seed))
            assert abs(beta.sum() - 1.0) < 1e-12
            assert np.all(beta >= 0)

    def test_rejects_bad_parameters(self):
        rng = np.random.default_rng(0)
        with pytest.raises(ParameterError):
            stick_breaking(0.0, 3, rng)
        with pytest.raises(ParameterError):
            stick_breaking(1.0, 0, rng)


class TestStickyRowConcentration:
    def test_direct_substitution(self):
        c = sticky_row_concentration(1.0, np.array([0.5, 0.5]), 1.0, 1)
        assert np.allclose(c, [1.5, 0.5], atol=0)

    def test_three_state_substitution(self):
        c = sticky_row_concentration(2.0, np.array([0.2, 0.3, 0.5]), 4.0, 3)
        assert np.allclose(c, [0.4, 0.6, 5.0])

    def test_kappa_zero_reduces_to_plain_row(self):
        beta = np.array([0.1, 0.6, 0.3])
        c = sticky_row_concentration(2.5, beta, 0.0, 2)
        assert np.array_equal(c, 2.5 * beta)

    def test_kappa_changes_only_own_coordinate(self):
        beta = np.array([0.25, 0.25, 0.5])
        base = sticky_row_concentration(1.0, beta, 0.0, 2)
        bumped = sticky_row_concentration(1.0, beta, 7.0, 2)
        assert bumped[1] - base[1] == 7.0
        assert np.array_equal(np.delete(bumped, 1), np.delete(base, 1))

    def test_index_out_of_range(self):
        with pytest.raises(ParameterError):
            sticky_row_concentration(1.0, np.array([0.5, 0.5]), 1.0, 3)

    def test_expected_self_transition_matches_normalization(self):
        # Dirichlet mean is concentration / total mass
        rng = np.random.default_rng(9)
        beta = np.array([0.3, 0.45, 0.25])
        conc = sticky_row_concentration(1.5, beta, 6.0, 2)
        rows = rng.dirichlet(conc, size=100_000)
        assert abs(rows[:, 1].mean() - conc[1] / conc.sum()) < 1e-2


class TestGaussianLogpdf:
    def test_standard_normal_at_zero(self):
        em = GaussianEmission(mean=np.zeros(1), cov=np.eye(1))
        assert gaussian_logpdf(np.zeros(1), em) == pytest.approx(
            -0.5 * math.log(2 * math.pi), abs=1e-12
        )

    def test_bivariate_at_mean(self):
        em = GaussianEmission(mean=np.zeros(2), cov=np.eye(2))
        assert gaussian_logpdf(np.zeros(2), em) == pytest.approx(
            -math.log(2 * math.pi), abs=1e-12
        )

    def test_diagonal_matches_product_of_univariates(self):
        em = GaussianEmission(mean=np.zeros(2), cov=np.diag([2.0, 0.5]))
        x = np.array([1.0, 0.0])

        def uni(v, var):
            return -0.5 * (math.log(2 * math.pi) + math.log(var) + v * v / var)

        expected = uni(1.0, 2.0) + uni(0.0, 0.5)
        assert gaussian_logpdf(x, em) == pytest.approx(expected, abs=1e-12)

    def test_permutation_invariance(self):
        rng = np.random.default_rng(4)
        a = rng.normal(size=(3, 3))
        cov = a @ a.T + 3 * np.eye(3)
        mean = rng.normal(size=3)
        x = rng.normal(size=3)
        perm = np.array([2, 0, 1])
        em = GaussianEmission(mean=mean, cov=cov)
        em_p = GaussianEmission(mean=mean[perm], cov=cov[np.ix_(perm, perm)])
        assert gaussian_logpdf(x, em) == pytest.approx(
            gaussian_logpdf(x[perm], em_p), abs=1e-10
        )

    def test_non_positive_definite_reports_eigenvalue(self):
        with pytest.raises(NumericError, match="eigenvalue"):
            GaussianEmission(mean=np.zeros(2), cov=np.array([[1.0, 2.0], [2.0, 1.0]]))


class TestJointLogLikelihood:
    def _state(self, pi, emissions, labels, L):
        beta = np.full(L + 1, 1.0 / (L + 1))
        return ModelState(beta=beta, pi=pi, emissions=emissions, labels=labels, log_joint=0.0)

    def test_single_frame_has_no_transition_term(self):
        em = (GaussianEmission(np.zeros(1), np.eye(1)),)
        bag = make_bag([[0.3]])
        state = self._state(np.eye(1), em, np.array([1]), 1)
        expected = math.log(1.0) + gaussian_logpdf(np.array([0.3]), em[0])
        assert joint_log_likelihood(bag, state, np.array([1.0])) == pytest.approx(expected)

    def test_matches_term_by_term_sum(self):
        rng = np.random.default_rng(11)
        pi = np.array([[0.9, 0.1], [0.3, 0.7]])
        ems = (
            GaussianEmission(np.array([0.0]), np.eye(1)),
            GaussianEmission(np.array([3.0]), 2 * np.eye(1)),
        )
        data = rng.normal(size=(1, 3))
        labels = np.array([1, 2, 2])
        initial = np.array([0.6, 0.4])
        bag = make_bag(data)
        state = self._state(pi, ems, labels, 2)
        expected = math.log(0.6) + math.log(pi[0, 1]) + math.log(pi[1, 1])
        for t, lab in enumerate(labels):
            expected += gaussian_logpdf(data[:, t], ems[lab - 1])
        assert joint_log_likelihood(bag, state, initial) == pytest.approx(expected, abs=1e-10)

    def test_zero_probability_transition_is_minus_inf(self):
        pi = np.array([[1.0, 0.0], [0.0, 1.0]])
        ems = (
            GaussianEmission(np.array([0.0]), np.eye(1)),
            GaussianEmission(np.array([1.0]), np.eye(1)),
        )
        bag = make_bag([[0.0, 1.0]])
        state = self._state(pi, ems, np.array([1, 2]), 2)
        assert joint_log_likelihood(bag, state, np.array([0.5, 0.5])) == -np.inf

    def test_simulated_sequence_scores_finite(self):
        rng = np.random.default_rng(5)
        pi = np.array([[0.8, 0.2], [0.2, 0.8]])
        ems = (
            GaussianEmission(np.array([0.0, 0.0]), np.eye(2)),
            GaussianEmission(np.array([4.0, -1.0]), np.eye(2)),
        )
        initial = np.array([0.5, 0.5])
        labels, data = simulate(pi, ems, initial, 200, rng)
        bag = make_bag(data)
        state = self._state(pi, ems, labels, 2)
        assert np.isfinite(joint_log_likelihood(bag, state, initial))


class TestSimulate:
    def test_single_state_all_ones(self):
        ems = (GaussianEmission(np.zeros(1), np.eye(1)),)
        labels, data = simulate(np.eye(1), ems, np.array([1.0]), 50, np.random.default_rng(0))
        assert np.all(labels == 1)
        assert data.shape == (1, 50)

    def test_identity_pi_is_absorbing(self):
        ems = tuple(GaussianEmission(np.array([float(k)]), np.eye(1)) for k in range(3))
        labels, _ = simulate(
            np.eye(3), ems, np.array([0.2, 0.5, 0.3]), 100, np.random.default_rng(1)
        )
        assert np.unique(labels).size == 1

    def test_self_transition_frequency(self):
        pi = np.array([[0.98, 0.02], [0.02, 0.98]])
        ems = (
            GaussianEmission(np.zeros(1), np.eye(1)),
            GaussianEmission(np.array([5.0]), np.eye(1)),
        )
        labels, _ = simulate(pi, ems, np.array([0.5, 0.5]), 2000, np.random.default_rng(7))
        stays = np.mean(labels[1:] == labels[:-1])
        assert abs(stays - 0.98) < 0.02

    def test_reproducible_given_seed(self):
        pi = np.array([[0.9, 0.1], [0.4, 0.6]])
        ems = (
            GaussianEmission(np.zeros(2), np.eye(2)),
            GaussianEmission(np.ones(2), np.eye(2)),
        )
        out1 = simulate(pi, ems, np.array([0.5, 0.5]), 64, np.random.default_rng(3))
        out2 = simulate(pi, ems, np.array([0.5, 0.5]), 64, np.random.default_rng(3))
        assert np.array_equal(out1[0], out2[0])
        assert np.array_equal(out1[1], out2[1])


class TestTypes:
    def test_hyperparams_validation(self):
        with pytest.raises(ParameterError):
            HyperParams(gamma=0.0)
        with pytest.raises(ParameterError):
            HyperParams(kappa=-1.0)
        with pytest.raises(ParameterError):
            HyperParams(truncation_L=0)

    def test_niw_prior_validation(self):
        with pytest.raises(ParameterError):
            NiwPrior(mean0=np.zeros(2), scale0=1.0, dof0=0.5, psi0=np.eye(2))
        with pytest.raises(NumericError):
            NiwPrior(mean0=np.zeros(2), scale0=1.0, dof0=3.0, psi0=-np.eye(2))

    def test_default_prior_handles_constant_data(self):
        prior = default_niw_prior(np.full((2, 10), 3.0))
        assert np.allclose(prior.mean0, 3.0)
        np.linalg.cholesky(prior.psi0)  # positive definite

    def test_model_state_invariants(self):
        ems = (GaussianEmission(np.zeros(1), np.eye(1)),)
        with pytest.raises(ParameterError):
            ModelState(
                beta=np.array([0.5, 0.6]),
                pi=np.eye(1),
                emissions=ems,
                labels=np.array([1]),
                log_joint=0.0,
            )
        with pytest.raises(ParameterError):
            ModelState(
                beta=np.array([0.5, 0.5]),
                pi=np.eye(1),
                emissions=ems,
                labels=np.array([2]),
                log_joint=0.0,
            )

    def test_runs_of(self):
        assert runs_of(np.array([1, 1, 2, 2, 2, 1])) == [(1, 0, 1), (2, 2, 4), (1, 5, 5)]
        assert runs_of(np.array([3])) == [(3, 0, 0)]
