import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate, stats

from tdvs.mixhat import (MixHatParams, mixhat_d1, mixhat_d2, mixhat_logpdf,
                         mixhat_pdf, mixhat_sample, student_t_logpdf)

# (nu, gamma) grid used by the distribution invariants
PARAM_GRID = [MixHatParams(nu, g)
              for nu in (0.5, 1.0, 3.0, 10.0, 30.0)
              for g in (0.25, 0.5, 1.0, 2.0, 4.0)]


def oracle_pdf(e, nu, g):
    """Independent transcription of the two-piece density via scipy's t pdf."""
    C = 2.0 / (g + 1.0 / g)
    return C * (stats.t.pdf(e / g, nu) if e >= 0 else stats.t.pdf(g * e, nu))


class TestStudentTLogpdf:
    def test_cauchy_at_mode(self):
        assert student_t_logpdf(0.0, 1.0) == pytest.approx(math.log(1 / math.pi), abs=1e-12)

    def test_cauchy_at_one(self):
        assert student_t_logpdf(1.0, 1.0) == pytest.approx(math.log(1 / (2 * math.pi)), abs=1e-12)

    def test_frozen_oracle_value(self):
        # scipy.stats.t.logpdf(0.5, 3)
        assert student_t_logpdf(0.5, 3.0) == pytest.approx(-1.1609742649705825, abs=1e-12)

    def test_matches_scipy_on_grid(self):
        u = np.linspace(-30, 30, 401)
        for nu in (0.3, 1.0, 2.5, 7.0, 50.0):
            np.testing.assert_allclose(student_t_logpdf(u, nu),
                                       stats.t.logpdf(u, nu), atol=1e-10)

    def test_rejects_bad_nu(self):
        with pytest.raises(ValueError):
            student_t_logpdf(0.0, 0.0)
        with pytest.raises(ValueError):
            student_t_logpdf(0.0, -2.0)

    def test_finite_for_huge_argument(self):
        assert np.isfinite(student_t_logpdf(1e8, 3.0))


class TestParams:
    @pytest.mark.parametrize("nu,gamma", [(0.0, 1.0), (-1.0, 1.0),
                                          (1.0, 0.0), (1.0, -0.5)])
    def test_rejects_nonpositive(self, nu, gamma):
        with pytest.raises(ValueError):
            MixHatParams(nu, gamma)

    def test_positive_mass(self):
        assert MixHatParams(3.0, 2.0).positive_mass == pytest.approx(0.8)
        assert MixHatParams(5.0, 1.0).positive_mass == pytest.approx(0.5)


class TestPdf:
    def test_standard_cauchy_values(self):
        p = MixHatParams(1.0, 1.0)
        assert mixhat_pdf(0.0, p) == pytest.approx(1 / math.pi, rel=1e-12)
        assert mixhat_pdf(1.0, p) == pytest.approx(1 / (2 * math.pi), rel=1e-12)

    def test_frozen_oracle_values(self):
        # oracle_pdf(-1, 3, 2) and oracle_pdf(4, 3, 2); the two agree exactly
        # because both branches see the same scaled argument +-2
        p = MixHatParams(3.0, 2.0)
        assert mixhat_pdf(-1.0, p) == pytest.approx(0.05400772853111433, rel=1e-12)
        assert mixhat_pdf(4.0, p) == pytest.approx(0.05400772853111433, rel=1e-12)

    def test_matches_oracle_transcription(self):
        for p in PARAM_GRID:
            for e in (-7.3, -1.0, -0.2, 0.0, 0.4, 2.0, 11.0):
                assert mixhat_pdf(e, p) == pytest.approx(
                    oracle_pdf(e, p.nu, p.gamma), rel=1e-10)

    def test_strictly_positive(self):
        p = MixHatParams(3.0, 2.0)
        assert np.all(mixhat_pdf(np.linspace(-100, 100, 2001), p) > 0)

    def test_mode_at_zero(self):
        grid = np.linspace(-50, 50, 4001)
        for p in PARAM_GRID:
            assert np.all(mixhat_pdf(0.0, p) >= mixhat_pdf(grid, p))

    def test_continuity_at_zero(self):
        # both branches evaluate the base density at 0, bitwise equal
        for p in PARAM_GRID:
            assert mixhat_pdf(1e-300, p) == mixhat_pdf(-1e-300, p) == mixhat_pdf(0.0, p)

    def test_normalization_by_quadrature(self):
        for p in PARAM_GRID:
            left, _ = integrate.quad(lambda e: mixhat_pdf(e, p), -np.inf, 0)
            right, _ = integrate.quad(lambda e: mixhat_pdf(e, p), 0, np.inf)
            assert left + right == pytest.approx(1.0, abs=1e-6)

    def test_positive_tail_mass(self):
        for p in PARAM_GRID:
            mass, _ = integrate.quad(lambda e: mixhat_pdf(e, p), 0, np.inf)
            assert mass == pytest.approx(p.positive_mass, abs=1e-7)

    def test_symmetry_when_gamma_one(self):
        grid = np.linspace(0.0, 20.0, 101)
        for nu in (0.5, 1.0, 3.0, 30.0):
            p = MixHatParams(nu, 1.0)
            np.testing.assert_array_equal(mixhat_pdf(grid, p), mixhat_pdf(-grid, p))


class TestLogpdf:
    def test_cauchy_at_mode(self):
        assert mixhat_logpdf(0.0, MixHatParams(1.0, 1.0)) == pytest.approx(
            -1.1447298858494002, abs=1e-9)

    def test_frozen_oracle_value(self):
        # log(oracle_pdf(-2.5, 5, 0.5))
        assert mixhat_logpdf(-2.5, MixHatParams(5.0, 0.5)) == pytest.approx(
            -2.0075642868198593, abs=1e-10)

    def test_log_space_consistency(self):
        grid = np.linspace(-40, 40, 301)
        for p in PARAM_GRID:
            pdf = mixhat_pdf(grid, p)
            keep = pdf > 1e-300
            np.testing.assert_allclose(np.exp(mixhat_logpdf(grid[keep], p)),
                                       pdf[keep], rtol=1e-9)

    def test_no_overflow_at_extremes(self):
        p = MixHatParams(3.0, 2.0)
        for e in (1e6, -1e6, 1e8, -1e8):
            v = mixhat_logpdf(e, p)
            assert np.isfinite(v) and v < 0


class TestDerivatives:
    def test_first_derivative_zero_at_mode(self):
        for p in PARAM_GRID:
            assert mixhat_d1(0.0, p) == 0.0

    def test_first_derivative_finite_difference(self):
        # frozen from the oracle: central FD of the density at (1, nu=1, g=1)
        p = MixHatParams(1.0, 1.0)
        assert mixhat_d1(1.0, p) == pytest.approx(-1 / (2 * math.pi), rel=1e-12)
        h = 1e-6
        fd = (mixhat_pdf(1.0 + h, p) - mixhat_pdf(1.0 - h, p)) / (2 * h)
        assert mixhat_d1(1.0, p) == pytest.approx(fd, rel=1e-5)

    def test_first_derivative_signs(self):
        p = MixHatParams(3.0, 2.0)
        assert mixhat_d1(0.5, p) < 0
        assert mixhat_d1(-0.5, p) > 0

    def test_second_derivative_at_zero_cauchy(self):
        # analytic: d^2/du^2 [1/(pi(1+u^2))] at 0 is -2/pi
        assert mixhat_d2(0.0, MixHatParams(1.0, 1.0)) == pytest.approx(
            -0.6366197723675814, rel=1e-12)

    def test_second_derivative_finite_difference(self):
        p = MixHatParams(3.0, 1.0)
        h = 1e-4
        fd = (mixhat_pdf(10 + h, p) - 2 * mixhat_pdf(10.0, p)
              + mixhat_pdf(10 - h, p)) / h ** 2
        assert mixhat_d2(10.0, p) == pytest.approx(fd, rel=1e-4)

    def test_concave_near_mode(self):
        assert mixhat_d2(0.1, MixHatParams(3.0, 1.0)) < 0

    def test_derivative_consistency_grid(self):
        # central differences of the pdf across the whole parameter grid;
        # the absolute floors sit at the difference quotients' own roundoff
        # (machine eps * pdf / h and * 4 / h^2), which dominates wherever a
        # derivative passes through zero
        eps = np.concatenate([np.linspace(-8, -0.01, 60),
                              np.linspace(0.01, 8, 60)])
        for p in PARAM_GRID:
            h1 = 1e-6
            fd1 = (mixhat_pdf(eps + h1, p) - mixhat_pdf(eps - h1, p)) / (2 * h1)
            np.testing.assert_allclose(mixhat_d1(eps, p), fd1,
                                       rtol=1e-5, atol=1e-9)
            h2 = 1e-4
            fd2 = (mixhat_pdf(eps + h2, p) - 2 * mixhat_pdf(eps, p)
                   + mixhat_pdf(eps - h2, p)) / h2 ** 2
            np.testing.assert_allclose(mixhat_d2(eps, p), fd2,
                                       rtol=1e-4, atol=1e-7)

    def test_odd_symmetry_when_gamma_one(self):
        grid = np.linspace(0.01, 15.0, 97)
        for nu in (0.5, 3.0, 30.0):
            p = MixHatParams(nu, 1.0)
            np.testing.assert_array_equal(mixhat_d1(grid, p), -mixhat_d1(-grid, p))


class TestSampler:
    def test_positive_fraction_matches_tail_mass(self):
        rng = np.random.default_rng(123)
        x = mixhat_sample(MixHatParams(3.0, 2.0), 100_000, rng)
        assert np.mean(x > 0) == pytest.approx(0.8, abs=0.01)

    def test_symmetric_when_gamma_one(self):
        rng = np.random.default_rng(7)
        x = mixhat_sample(MixHatParams(3.0, 1.0), 100_000, rng)
        assert abs(np.mean(np.sign(x))) < 0.01

    def test_histogram_matches_density(self):
        rng = np.random.default_rng(42)
        p = MixHatParams(3.0, 2.0)
        x = mixhat_sample(p, 100_000, rng)
        edges = np.linspace(-5, 10, 61)
        counts, _ = np.histogram(x, edges)
        width = edges[1] - edges[0]
        empirical = counts / (x.size * width)
        centers = 0.5 * (edges[:-1] + edges[1:])
        assert np.max(np.abs(empirical - mixhat_pdf(centers, p))) < 0.012

    def test_deterministic_given_seed(self):
        a = mixhat_sample(MixHatParams(3.0, 2.0), 1000, np.random.default_rng(5))
        b = mixhat_sample(MixHatParams(3.0, 2.0), 1000, np.random.default_rng(5))
        np.testing.assert_array_equal(a, b)

    def test_rejects_bad_count(self):
        with pytest.raises(ValueError):
            mixhat_sample(MixHatParams(3.0, 2.0), 0, np.random.default_rng(0))


@given(e=st.floats(-1e6, 1e6), nu=st.floats(0.1, 100.0),
       gamma=st.floats(0.1, 10.0))
@settings(max_examples=200, deadline=None)
def test_logpdf_always_finite(e, nu, gamma):
    assert np.isfinite(mixhat_logpdf(e, MixHatParams(nu, gamma)))


@given(e=st.floats(-100.0, 100.0), nu=st.floats(0.1, 50.0),
       gamma=st.floats(0.2, 5.0))
@settings(max_examples=200, deadline=None)
def test_mode_dominates_everywhere(e, nu, gamma):
    p = MixHatParams(nu, gamma)
    assert mixhat_pdf(0.0, p) >= mixhat_pdf(e, p)
