import itertools
import math

import numpy as np
import pytest
from scipy import stats
from scipy.special import logsumexp

from tdvs.model import (Dataset, Hyperparams, IndicatorVector,
                        RegressionParams, log_likelihood,
                        log_marginal_posterior, log_prior_complete, residuals)


def make_data(seed=0, n=12, p=3):
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((n, p))
    y = rng.standard_normal(n) * 2.0 + 1.0
    return Dataset(X, y)


def make_params(seed=1, p=3):
    rng = np.random.default_rng(seed)
    return RegressionParams(beta0=float(rng.normal()),
                            beta=rng.normal(size=p),
                            nu=float(rng.uniform(0.5, 10)),
                            gamma=float(rng.uniform(0.3, 3)),
                            theta=float(rng.uniform(0.05, 0.95)))


def oracle_logpdf(e, nu, g):
    C = 2.0 / (g + 1.0 / g)
    arg = e / g if e >= 0 else g * e
    return math.log(C) + stats.t.logpdf(arg, nu)


def oracle_log_prior(params, hyper, lam):
    """Straight-line transcription with textbook scipy densities."""
    s = stats.norm.logpdf(params.beta0, 0.0,
                          math.sqrt(hyper.beta0_prior_variance))
    for bj, lj in zip(params.beta, lam):
        t = hyper.t1 if lj else hyper.t0
        s += stats.laplace.logpdf(bj, 0.0, 1.0 / t)
    k = int(np.sum(lam))
    p = len(lam)
    s += stats.beta.logpdf(params.theta, hyper.a, hyper.b)
    s += k * math.log(params.theta) + (p - k) * math.log(1 - params.theta)
    s += stats.lognorm.logpdf(params.nu, s=1.0, scale=math.exp(1.0))
    s += stats.gamma.logpdf(params.gamma, hyper.c, scale=1.0 / hyper.d)
    return float(s)


class TestDataset:
    def test_shape_validation(self):
        with pytest.raises(ValueError):
            Dataset(np.zeros((1, 2)), np.zeros(1))       # n < 2
        with pytest.raises(ValueError):
            Dataset(np.zeros((3, 2)), np.zeros(4))       # length mismatch
        with pytest.raises(ValueError):
            Dataset(np.array([[1.0, np.nan], [0, 1]]), np.zeros(2))
        with pytest.raises(ValueError):
            Dataset(np.zeros((3, 2)), np.array([1.0, np.inf, 0.0]))

    def test_constant_columns_flagged_but_usable(self):
        X = np.column_stack([np.ones(5), np.arange(5.0)])
        data = Dataset(X, np.arange(5.0))
        assert data.constant_columns() == [0]

    def test_select_columns_keeps_names(self):
        data = Dataset(np.arange(12.0).reshape(4, 3), np.zeros(4),
                       ("a", "b", "c"))
        sub = data.select_columns([2, 0])
        assert sub.column_names == ("c", "a")
        np.testing.assert_array_equal(sub.covariates[:, 1], data.covariates[:, 0])

    def test_permuted_columns(self):
        data = make_data()
        perm = np.array([2, 0, 1, 3, 4, 5, 6, 7, 8, 9, 10, 11])
        out = data.with_permuted_columns([1], perm)
        np.testing.assert_array_equal(out.covariates[:, 1],
                                      data.covariates[perm, 1])
        np.testing.assert_array_equal(out.covariates[:, 0],
                                      data.covariates[:, 0])


class TestResiduals:
    def test_zero_coefficients_give_response(self):
        data = make_data()
        np.testing.assert_array_equal(residuals(data, 0.0, np.zeros(data.p)),
                                      data.response)

    def test_exact_fit_gives_zero(self):
        rng = np.random.default_rng(3)
        X = rng.standard_normal((8, 2))
        beta = np.array([1.5, -2.0])
        y = 0.7 + X @ beta
        assert np.allclose(residuals(Dataset(X, y), 0.7, beta), 0.0)

    def test_matches_hand_computation(self):
        X = np.array([[1.0, 2.0], [3.0, -1.0]])
        y = np.array([5.0, 2.0])
        out = residuals(Dataset(X, y), 1.0, np.array([2.0, 0.5]))
        np.testing.assert_allclose(out, [5 - 1 - 2 - 1, 2 - 1 - 6 + 0.5])

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            residuals(make_data(), 0.0, np.zeros(5))


class TestLogLikelihood:
    def test_single_observation_at_mode(self):
        data = Dataset(np.zeros((2, 1)), np.zeros(2))
        params = RegressionParams(0.0, np.zeros(1), 1.0, 1.0, 0.5)
        assert log_likelihood(data, params) == pytest.approx(
            2 * math.log(1 / math.pi), abs=1e-10)

    def test_row_permutation_invariance(self):
        data = make_data(4)
        params = make_params(5)
        perm = np.random.default_rng(0).permutation(data.n)
        permuted = Dataset(data.covariates[perm], data.response[perm])
        assert log_likelihood(permuted, params) == pytest.approx(
            log_likelihood(data, params), rel=1e-12)

    def test_matches_transcription_oracle(self):
        data = make_data(6, n=5, p=2)
        params = make_params(7, p=2)
        eps = data.response - params.beta0 - data.covariates @ params.beta
        want = sum(oracle_logpdf(e, params.nu, params.gamma) for e in eps)
        assert log_likelihood(data, params) == pytest.approx(want, rel=1e-10)


class TestLogPriorComplete:
    def test_all_zero_indicators_theta_factor(self):
        p = 4
        params = make_params(8, p=p)
        hyper = Hyperparams.for_dimension(p, 10.0, 1.0)
        lam0 = IndicatorVector(np.zeros(p, dtype=int))
        base = log_prior_complete(params, hyper, lam0)
        # adding one indicator multiplies by slab/spike at b_j and odds theta
        lam1 = IndicatorVector(np.array([1, 0, 0, 0]))
        diff = log_prior_complete(params, hyper, lam1) - base
        bj = abs(params.beta[0])
        want = ((math.log(hyper.t1 / 2) - hyper.t1 * bj)
                - (math.log(hyper.t0 / 2) - hyper.t0 * bj)
                + math.log(params.theta) - math.log1p(-params.theta))
        assert diff == pytest.approx(want, rel=1e-10)

    def test_laplace_at_zero(self):
        # a zero coefficient contributes log(t/2)
        p = 1
        params = RegressionParams(0.0, np.zeros(1), 1.0, 1.0, 0.5)
        hyper = Hyperparams(t0=8.0, t1=8.0, a=1.0, b=1.0)
        lam = IndicatorVector(np.zeros(1, dtype=int))
        with_zero = log_prior_complete(params, hyper, lam)
        hyper2 = Hyperparams(t0=4.0, t1=4.0, a=1.0, b=1.0)
        assert with_zero - log_prior_complete(params, hyper2, lam) == \
            pytest.approx(math.log(8 / 2) - math.log(4 / 2), rel=1e-12)

    def test_matches_transcription_oracle(self):
        p = 3
        params = make_params(9, p=p)
        hyper = Hyperparams.for_dimension(p, 7.0, 0.5)
        for bits in itertools.product((0, 1), repeat=p):
            lam = IndicatorVector(np.array(bits))
            assert log_prior_complete(params, hyper, lam) == pytest.approx(
                oracle_log_prior(params, hyper, bits), rel=1e-10)

    def test_length_mismatch(self):
        params = make_params(1, p=3)
        hyper = Hyperparams.for_dimension(3)
        with pytest.raises(ValueError):
            log_prior_complete(params, hyper, IndicatorVector(np.zeros(2, int)))


class TestLogMarginalPosterior:
    def test_equal_rates_collapse(self):
        # with t0 == t1 the coefficient factor no longer involves theta
        data = make_data(10)
        params = make_params(11)
        hyper = Hyperparams.for_dimension(data.p, 5.0, 5.0)
        v1 = log_marginal_posterior(data, params, hyper)
        # transcription: likelihood + all priors with a single laplace factor
        want = log_likelihood(data, params)
        want += stats.norm.logpdf(params.beta0, 0, 1e3)
        want += sum(stats.laplace.logpdf(b, 0, 1 / 5.0) for b in params.beta)
        want += stats.beta.logpdf(params.theta, hyper.a, hyper.b)
        want += stats.lognorm.logpdf(params.nu, s=1.0, scale=math.exp(1.0))
        want += stats.gamma.logpdf(params.gamma, hyper.c, scale=1 / hyper.d)
        assert v1 == pytest.approx(float(want), rel=1e-10)

    @pytest.mark.parametrize("p", [1, 2, 3, 4])
    def test_matches_enumeration_oracle(self, p):
        # marginal == logsumexp over all 2^p complete posteriors
        data = make_data(20 + p, n=10, p=p)
        params = make_params(30 + p, p=p)
        hyper = Hyperparams.for_dimension(p, 9.0, 1.0)
        terms = []
        for bits in itertools.product((0, 1), repeat=p):
            lam = IndicatorVector(np.array(bits))
            terms.append(log_likelihood(data, params)
                         + log_prior_complete(params, hyper, lam))
        want = float(logsumexp(terms))
        got = log_marginal_posterior(data, params, hyper)
        assert got == pytest.approx(want, abs=1e-9)

    def test_improving_fit_does_not_decrease(self):
        rng = np.random.default_rng(2)
        X = rng.standard_normal((20, 2))
        beta = np.array([1.0, -0.5])
        y = 0.3 + X @ beta  # exact fit achievable
        data = Dataset(X, y)
        hyper = Hyperparams.for_dimension(2, 10.0, 1.0)
        perfect = RegressionParams(0.3, beta, 3.0, 1.5, 0.4)
        off = RegressionParams(0.8, beta, 3.0, 1.5, 0.4)
        assert log_marginal_posterior(data, perfect, hyper) >= \
            log_marginal_posterior(data, off, hyper)

    def test_decreases_for_huge_coefficients(self):
        data = make_data(40)
        hyper = Hyperparams.for_dimension(data.p, 10.0, 1.0)
        base = make_params(41)
        vals = []
        for scale in (1.0, 10.0, 100.0, 1000.0):
            params = RegressionParams(base.beta0, base.beta * scale,
                                      base.nu, base.gamma, base.theta)
            vals.append(log_marginal_posterior(data, params, hyper))
        assert vals[0] > vals[1] > vals[2] > vals[3]

    def test_prior_components_match_textbook_forms(self):
        # lognormal and gamma pieces: move only nu (or gamma), compare shifts
        data = make_data(50)
        hyper = Hyperparams.for_dimension(data.p, 10.0, 1.0)
        base = make_params(51)
        for nu2 in (0.5, math.e, 20.0):
            p2 = RegressionParams(base.beta0, base.beta, nu2, base.gamma,
                                  base.theta)
            diff = (log_marginal_posterior(data, p2, hyper)
                    - log_marginal_posterior(data, base, hyper))
            want = (log_likelihood(data, p2) - log_likelihood(data, base)
                    + stats.lognorm.logpdf(nu2, s=1, scale=math.exp(1))
                    - stats.lognorm.logpdf(base.nu, s=1, scale=math.exp(1)))
            assert diff == pytest.approx(float(want), rel=1e-9)


class TestHyperparams:
    def test_defaults_for_dimension(self):
        h = Hyperparams.for_dimension(8)
        assert (h.t0, h.t1, h.a, h.b) == (10.0, 1.0, 1.0, 8.0)
        assert h.c == h.d == 1e-4
        assert h.beta0_prior_variance == 1e6

    def test_rejects_nonpositive(self):
        with pytest.raises(ValueError):
            Hyperparams(t0=0.0, t1=1.0)
        with pytest.raises(ValueError):
            Hyperparams(t0=1.0, t1=-1.0)


class TestRegressionParams:
    def test_validation(self):
        with pytest.raises(ValueError):
            RegressionParams(0.0, np.zeros(2), -1.0, 1.0, 0.5)
        with pytest.raises(ValueError):
            RegressionParams(0.0, np.zeros(2), 1.0, 0.0, 0.5)
        with pytest.raises(ValueError):
            RegressionParams(0.0, np.zeros(2), 1.0, 1.0, 1.0)

    def test_vector_roundtrip(self):
        params = make_params(60, p=2)
        v = params.as_vector()
        assert v.shape == (1 + 2 + 3,)
        assert v[0] == params.beta0 and v[-1] == params.theta
