"""MAP estimation by expectation-maximization.

The inclusion indicators are treated as missing data: the E-step gives
each coefficient a posterior inclusion probability in closed form, and
the M-step maximizes the resulting surrogate objective one block at a
time (coefficients by cyclic coordinate ascent with an exact-zero
candidate at the L1 kink, then intercept, tail, skew, and theta).
Iteration stops when the L2 norm of the parameter change drops below
``convergence_tol``.  Fits are deterministic functions of their inputs.
"""

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from . import _engine
from .model import (Hyperparams, RegressionParams,
                    log_marginal_posterior, residuals)


class FitError(RuntimeError):
    """Numerical failure during fitting; carries the EM iteration index."""

    def __init__(self, message, iteration):
        super().__init__(f"{message} (iteration {iteration})")
        self.iteration = iteration


@dataclass(frozen=True)
class EMConfig:
    convergence_tol: float = 1e-7
    max_iterations: int = 500
    coordinate_sweep_tol: float = 1e-6
    max_sweeps_per_mstep: int = 50
    line_search_expansions: int = 30

    def __post_init__(self):
        if not (0 < self.convergence_tol < 1):
            raise ValueError("convergence_tol must lie in (0, 1)")
        for name in ("max_iterations", "coordinate_sweep_tol",
                     "max_sweeps_per_mstep", "line_search_expansions"):
            if not (getattr(self, name) > 0):
                raise ValueError(f"{name} must be positive")


@dataclass(frozen=True)
class FitResult:
    params: RegressionParams
    inclusion_probs: np.ndarray
    iterations: int
    converged: bool
    final_marginal_log_posterior: float
    objective_trace: np.ndarray

    def __post_init__(self):
        for name in ("inclusion_probs", "objective_trace"):
            arr = np.asarray(getattr(self, name), dtype=np.float64).copy()
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)


def e_step_inclusion_prob(beta_j, theta, t0, t1):
    """Posterior probability that a coefficient belongs to the slab.

    Evaluated as a logistic of the log-odds so large rate gaps cannot
    overflow.  With equal rates the coefficient carries no information
    and the probability is exactly theta.
    """
    if not (0.0 < theta < 1.0):
        raise ValueError(f"theta must lie in (0, 1), got {theta}")
    if not (t0 > 0 and t1 > 0):
        raise ValueError("rates t0 and t1 must be positive")
    scalar = np.isscalar(beta_j)
    beta_j = np.asarray(beta_j, dtype=np.float64)
    if t0 == t1:
        out = np.full(beta_j.shape, theta)
    else:
        z = (np.log(t1 / t0) + np.log(theta / (1.0 - theta))
             + (t0 - t1) * np.abs(beta_j))
        out = expit(z)
    return float(out) if scalar else out


def compute_q_objective(data, params, p_hat, hyper):
    """Surrogate objective value at the given state and inclusion probabilities."""
    p_hat = np.asarray(p_hat, dtype=np.float64)
    if np.any(p_hat < 0) or np.any(p_hat > 1):
        raise ValueError("inclusion probabilities must lie in [0, 1]")
    eps = residuals(data, params.beta0, params.beta)
    return float(_engine._q_objective(
        eps, params.beta0, params.beta, params.nu, params.gamma,
        params.theta, p_hat, hyper.t0, hyper.t1, hyper.a, hyper.b,
        hyper.c, hyper.d, hyper.beta0_prior_variance))


def _weights(p_hat, hyper):
    return (1.0 - p_hat) * hyper.t0 + p_hat * hyper.t1


def m_step_beta(data, state, p_hat, hyper, config=None, _tol=None):
    """Coefficient block update: weighted-L1 penalized modal likelihood.

    Each coordinate considers the exact value 0, so coefficients pushed
    onto the kink are bitwise zero.
    """
    config = config or EMConfig()
    p_hat = np.asarray(p_hat, dtype=np.float64)
    X = np.asfortranarray(data.covariates)
    beta = state.beta.copy()
    tol = _tol if _tol is not None else min(1e-8, 0.01 * config.coordinate_sweep_tol)
    _engine._coordinate_ascent(
        X, data.response, state.beta0, beta, state.nu, state.gamma,
        _weights(p_hat, hyper), config.coordinate_sweep_tol,
        config.max_sweeps_per_mstep, config.line_search_expansions, tol,
        True, np.full(data.p, 0.25))
    return beta


def update_beta0(data, state, hyper, config=None, _tol=1e-10):
    """Intercept update by bracketed 1-d search; never decreases the objective."""
    config = config or EMConfig()
    r0 = data.response - data.covariates @ state.beta
    return float(_engine._update_beta0(
        r0, state.beta0, state.nu, state.gamma, hyper.beta0_prior_variance,
        config.line_search_expansions, _tol, 1e-3))


def update_nu(data, state, hyper, _tol=1e-10):
    """Tail-parameter update on the log scale over [0.05, 200]."""
    eps = residuals(data, state.beta0, state.beta)
    return float(_engine._update_shape(2, eps, state.nu, state.gamma,
                                       hyper.c, hyper.d, _tol, True, 0.05))


def update_gamma(data, state, hyper, _tol=1e-10):
    """Skew-parameter update on the log scale over [0.05, 20]."""
    eps = residuals(data, state.beta0, state.beta)
    return float(_engine._update_shape(3, eps, state.gamma, state.nu,
                                       hyper.c, hyper.d, _tol, True, 0.05))


_THETA_CLIP = 1e-8


def update_theta(p_hat, a, b):
    """Closed-form theta update, clamped away from the boundary."""
    p_hat = np.asarray(p_hat, dtype=np.float64)
    p = p_hat.shape[0]
    denom = a + b + p - 2.0
    if denom <= 0:
        raise ValueError(f"a + b + p - 2 must be positive, got {denom}")
    theta = (float(p_hat.sum()) + a - 1.0) / denom
    return float(min(max(theta, _THETA_CLIP), 1.0 - _THETA_CLIP))


def default_init(data):
    """Starting point: robust intercept, zero effects, mild tail, no skew."""
    return RegressionParams(beta0=float(np.median(data.response)),
                            beta=np.zeros(data.p), nu=5.0, gamma=1.0,
                            theta=0.5)


def fit(data, hyper, config=None, init=None):
    """Run EM to convergence and return the fitted state.

    The update order within an iteration is: inclusion probabilities,
    coefficients, intercept, nu, gamma, theta.  The trace records the
    marginal log posterior after every iteration and is non-decreasing
    up to floating-point tolerance.
    """
    config = config or EMConfig()
    start = init if init is not None else default_init(data)
    if start.beta.shape != (data.p,):
        raise ValueError("init.beta length does not match data")
    X = np.asfortranarray(data.covariates)
    y = data.response
    beta0 = float(start.beta0)
    beta = start.beta.copy()
    nu = float(start.nu)
    gamma = float(start.gamma)
    theta = float(start.theta)

    value = log_marginal_posterior(data, start, hyper)
    if not np.isfinite(value):
        raise FitError("non-finite objective at the starting point", 0)
    trace = [value]
    prev_vec = start.as_vector()
    inner_tol = 1e-6
    converged = False
    iterations = 0
    exp_cap = config.line_search_expansions
    hstep = np.full(data.p, 0.25)
    h_b0 = 1e-3
    h_shape = 0.05
    for k in range(1, config.max_iterations + 1):
        iterations = k
        # periodic full scans guard against coordinates or shape parameters
        # settling into a poor local region early on
        full_scan = k == 1 or k % 20 == 0
        p_hat = e_step_inclusion_prob(beta, theta, hyper.t0, hyper.t1)
        _engine._coordinate_ascent(
            X, y, beta0, beta, nu, gamma, _weights(p_hat, hyper),
            config.coordinate_sweep_tol, config.max_sweeps_per_mstep,
            exp_cap, inner_tol, full_scan, hstep)
        r0 = y - X @ beta
        new_beta0 = float(_engine._update_beta0(
            r0, beta0, nu, gamma, hyper.beta0_prior_variance, exp_cap,
            inner_tol, h_b0))
        h_b0 = min(max(4.0 * abs(new_beta0 - beta0), 1e-9), 1e-3)
        beta0 = new_beta0
        eps = r0 - beta0
        new_nu = float(_engine._update_shape(
            2, eps, nu, gamma, hyper.c, hyper.d, inner_tol, full_scan,
            h_shape))
        new_gamma = float(_engine._update_shape(
            3, eps, gamma, new_nu, hyper.c, hyper.d, inner_tol, full_scan,
            h_shape))
        h_shape = min(max(4.0 * (abs(math.log(new_nu / nu))
                                 + abs(math.log(new_gamma / gamma))),
                          1e-9), 0.05)
        nu, gamma = new_nu, new_gamma
        theta = update_theta(p_hat, hyper.a, hyper.b)

        state = RegressionParams(beta0, beta.copy(), nu, gamma, theta)
        value = log_marginal_posterior(data, state, hyper)
        if not np.isfinite(value):
            raise FitError("non-finite objective", k)
        trace.append(value)
        vec = state.as_vector()
        delta = float(np.linalg.norm(vec - prev_vec))
        prev_vec = vec
        if delta < config.convergence_tol:
            converged = True
            break
        # tighten the inner line searches as the outer iteration closes in
        inner_tol = min(inner_tol, max(1e-12, min(1e-6, 1e-3 * delta)))

    params = RegressionParams(beta0, beta.copy(), nu, gamma, theta)
    incl = e_step_inclusion_prob(params.beta, theta, hyper.t0, hyper.t1)
    return FitResult(params=params, inclusion_probs=np.asarray(incl),
                     iterations=iterations, converged=converged,
                     final_marginal_log_posterior=trace[-1],
                     objective_trace=np.asarray(trace))
