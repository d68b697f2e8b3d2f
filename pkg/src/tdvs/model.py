"""Regression data model, priors, and log-posterior evaluations.

The sampling model is y = beta0 + X beta + e with e ~ MixHat(nu, gamma).
Coefficients carry a spike-and-slab pair of Laplace priors switched by
binary inclusion indicators; the inclusion probability theta gets a beta
prior, nu a lognormal prior and gamma a gamma prior.  Everything here is
evaluated with full normalizing constants so that posterior values are
comparable across parameter settings and against brute-force oracles.
"""

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import betaln, gammaln

from . import _engine
from .mixhat import MixHatParams, mixhat_logpdf


@dataclass(frozen=True)
class Dataset:
    """Covariate matrix (n x p) and response vector (n)."""

    covariates: np.ndarray
    response: np.ndarray
    column_names: tuple = None

    def __post_init__(self):
        X = np.ascontiguousarray(self.covariates, dtype=np.float64)
        y = np.ascontiguousarray(self.response, dtype=np.float64)
        if X.ndim != 2:
            raise ValueError("covariates must be a 2-d matrix")
        if y.ndim != 1:
            raise ValueError("response must be a 1-d vector")
        n, p = X.shape
        if y.shape[0] != n:
            raise ValueError(f"covariates have {n} rows but response has {y.shape[0]}")
        if n < 2 or p < 1:
            raise ValueError(f"need n >= 2 and p >= 1, got n={n}, p={p}")
        if not np.all(np.isfinite(X)):
            raise ValueError("covariates contain non-finite entries")
        if not np.all(np.isfinite(y)):
            raise ValueError("response contains non-finite entries")
        if self.column_names is not None:
            names = tuple(self.column_names)
            if len(names) != p:
                raise ValueError("column_names length does not match p")
            object.__setattr__(self, "column_names", names)
        X.setflags(write=False)
        y.setflags(write=False)
        object.__setattr__(self, "covariates", X)
        object.__setattr__(self, "response", y)

    @property
    def n(self):
        return self.covariates.shape[0]

    @property
    def p(self):
        return self.covariates.shape[1]

    def constant_columns(self):
        """Indices of zero-variance covariate columns (permuting them is a no-op)."""
        X = self.covariates
        return [j for j in range(self.p) if np.all(X[:, j] == X[0, j])]

    def select_columns(self, indices):
        """New Dataset keeping only the given covariate columns, in the given order."""
        idx = list(indices)
        names = None
        if self.column_names is not None:
            names = tuple(self.column_names[j] for j in idx)
        return Dataset(self.covariates[:, idx], self.response, names)

    def with_permuted_columns(self, indices, permutation):
        """New Dataset with the rows of the given columns jointly permuted."""
        X = self.covariates.copy()
        for j in indices:
            X[:, j] = X[permutation, j]
        return Dataset(X, self.response, self.column_names)


@dataclass(frozen=True)
class RegressionParams:
    """Parameter block estimated by EM: intercept, effects, shape pair, theta."""

    beta0: float
    beta: np.ndarray
    nu: float
    gamma: float
    theta: float

    def __post_init__(self):
        beta = np.asarray(self.beta, dtype=np.float64)
        if beta.ndim != 1:
            raise ValueError("beta must be a 1-d vector")
        beta = beta.copy()
        beta.setflags(write=False)
        object.__setattr__(self, "beta", beta)
        if not (self.nu > 0):
            raise ValueError(f"nu must be positive, got {self.nu}")
        if not (self.gamma > 0):
            raise ValueError(f"gamma must be positive, got {self.gamma}")
        if not (0.0 < self.theta < 1.0):
            raise ValueError(f"theta must lie in (0, 1), got {self.theta}")

    @property
    def shape(self):
        return MixHatParams(self.nu, self.gamma)

    def as_vector(self):
        """Flat parameter vector used for the L2 convergence norm."""
        return np.concatenate(([self.beta0], self.beta, [self.nu, self.gamma, self.theta]))


@dataclass(frozen=True)
class Hyperparams:
    """Prior constants: spike/slab Laplace rates and hyper-prior parameters."""

    t0: float
    t1: float
    a: float = 1.0
    b: float = 1.0
    c: float = 1e-4
    d: float = 1e-4
    beta0_prior_variance: float = 1e6

    def __post_init__(self):
        for name in ("t0", "t1", "a", "b", "c", "d", "beta0_prior_variance"):
            v = getattr(self, name)
            if not (v > 0):
                raise ValueError(f"{name} must be positive, got {v}")

    @classmethod
    def for_dimension(cls, p, t0=10.0, t1=1.0):
        """Default hyperparameters for p candidate covariates: a=1, b=p."""
        return cls(t0=float(t0), t1=float(t1), a=1.0, b=float(p))


@dataclass(frozen=True)
class IndicatorVector:
    """Binary inclusion indicators, one per covariate."""

    lam: np.ndarray

    def __post_init__(self):
        lam = np.asarray(self.lam, dtype=np.int64)
        if lam.ndim != 1 or not np.all((lam == 0) | (lam == 1)):
            raise ValueError("indicators must be a 1-d 0/1 vector")
        lam = lam.copy()
        lam.setflags(write=False)
        object.__setattr__(self, "lam", lam)


def residuals(data, beta0, beta):
    """e_i = y_i - beta0 - x_i' beta."""
    beta = np.asarray(beta, dtype=np.float64)
    if beta.shape != (data.p,):
        raise ValueError(f"beta has shape {beta.shape}, expected ({data.p},)")
    return data.response - beta0 - data.covariates @ beta


def log_likelihood(data, params):
    """Sum of MixHat log-densities at the residuals, constants included."""
    eps = residuals(data, params.beta0, params.beta)
    return float(np.sum(mixhat_logpdf(eps, params.shape)))


def _log_laplace(s, t):
    """log of the Laplace(0, rate t) density."""
    return math.log(t / 2.0) - t * abs(s)


def _log_beta_pdf(theta, a, b):
    return (a - 1.0) * math.log(theta) + (b - 1.0) * math.log1p(-theta) - betaln(a, b)


def _log_lognormal_pdf(nu):
    # log-location and log-scale both 1
    ln = math.log(nu)
    return -ln - 0.5 * math.log(2.0 * math.pi) - 0.5 * (ln - 1.0) ** 2


def _log_gamma_pdf(gamma, c, d):
    return c * math.log(d) - gammaln(c) + (c - 1.0) * math.log(gamma) - d * gamma


def _log_normal_pdf(x, variance):
    return -0.5 * math.log(2.0 * math.pi * variance) - x * x / (2.0 * variance)


def log_prior_complete(params, hyper, indicators):
    """Log prior of (beta0, beta, nu, gamma, theta) jointly with the indicators.

    Each coefficient contributes the spike Laplace density when its
    indicator is 0 and the slab density when it is 1; the indicator count
    feeds the beta-distributed inclusion probability.
    """
    lam = indicators.lam
    beta = params.beta
    if lam.shape != beta.shape:
        raise ValueError("indicator length does not match beta")
    p = beta.shape[0]
    s = _log_normal_pdf(params.beta0, hyper.beta0_prior_variance)
    for j in range(p):
        t = hyper.t1 if lam[j] == 1 else hyper.t0
        s += _log_laplace(beta[j], t)
    k = int(lam.sum())
    s += ((k + hyper.a - 1.0) * math.log(params.theta)
          + (p - k + hyper.b - 1.0) * math.log1p(-params.theta)
          - betaln(hyper.a, hyper.b))
    s += _log_lognormal_pdf(params.nu)
    s += _log_gamma_pdf(params.gamma, hyper.c, hyper.d)
    return float(s)


def log_marginal_posterior(data, params, hyper):
    """Joint log-posterior with the inclusion indicators summed out.

    Each coefficient's prior factor becomes the two-point mixture
    (1-theta) * spike + theta * slab; this is the objective the EM
    iteration is guaranteed never to decrease.
    """
    eps = residuals(data, params.beta0, params.beta)
    return float(_engine._marginal_log_posterior(
        eps, params.beta0, params.beta, params.nu, params.gamma,
        params.theta, hyper.t0, hyper.t1, hyper.a, hyper.b, hyper.c,
        hyper.d, hyper.beta0_prior_variance))
