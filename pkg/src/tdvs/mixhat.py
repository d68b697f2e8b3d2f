"""Two-piece mixture-of-half-t (MixHat) error distribution.

MixHat(nu, gamma) glues the right half of a Student's t_nu density,
stretched by gamma, to the left half compressed by gamma:

    p(e) = C * f_nu(e / gamma)   for e >= 0
    p(e) = C * f_nu(gamma * e)   for e <  0,     C = 2 / (gamma + 1/gamma)

The mode is always at zero; gamma > 1 shifts probability mass to the
positive side (P(e > 0) = gamma^2 / (1 + gamma^2)), and nu controls the
tail weight.  All densities are evaluated in log space so that the huge
residuals produced by heavy-tailed data never overflow.
"""

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln


@dataclass(frozen=True)
class MixHatParams:
    """Shape pair of the error distribution: tail weight and skew."""

    nu: float
    gamma: float

    def __post_init__(self):
        if not (self.nu > 0):
            raise ValueError(f"nu must be positive, got {self.nu}")
        if not (self.gamma > 0):
            raise ValueError(f"gamma must be positive, got {self.gamma}")

    @property
    def positive_mass(self):
        """P(e > 0) = gamma^2 / (1 + gamma^2)."""
        g2 = self.gamma * self.gamma
        return g2 / (1.0 + g2)

    @property
    def log_norm(self):
        """log C = log 2 - log(gamma + 1/gamma)."""
        return math.log(2.0) - math.log(self.gamma + 1.0 / self.gamma)


def student_t_logpdf(u, nu):
    """Log-density of the Student's t distribution with nu degrees of freedom."""
    if not (nu > 0):
        raise ValueError(f"nu must be positive, got {nu}")
    u = np.asarray(u, dtype=np.float64)
    const = (gammaln((nu + 1.0) / 2.0) - gammaln(nu / 2.0)
             - 0.5 * math.log(nu * math.pi))
    return const - 0.5 * (nu + 1.0) * np.log1p(u * u / nu)


def _scaled_arg(eps, params):
    """Branch-scaled argument: eps/gamma on [0, inf), gamma*eps on (-inf, 0)."""
    eps = np.asarray(eps, dtype=np.float64)
    return np.where(eps >= 0, eps / params.gamma, eps * params.gamma)


def mixhat_logpdf(eps, params):
    """Log-density of MixHat at eps (scalar or array)."""
    return params.log_norm + student_t_logpdf(_scaled_arg(eps, params), params.nu)


def mixhat_pdf(eps, params):
    """Density of MixHat at eps; exp of the log-space evaluation."""
    return np.exp(mixhat_logpdf(eps, params))


def mixhat_d1(eps, params):
    """First derivative of the MixHat density in its argument.

    The chain rule scales the inner t-density derivative by 1/gamma on the
    non-negative branch and by gamma on the negative one.  At eps = 0 the
    non-negative branch applies (both give 0 there, since the t density is
    flat at its mode).
    """
    eps = np.asarray(eps, dtype=np.float64)
    nu = params.nu
    u = _scaled_arg(eps, params)
    scale = np.where(eps >= 0, 1.0 / params.gamma, params.gamma)
    f = np.exp(params.log_norm + student_t_logpdf(u, nu))
    return f * scale * (-(nu + 1.0) * u / (nu + u * u))


def mixhat_d2(eps, params):
    """Second derivative of the MixHat density in its argument.

    Discontinuous at 0 when gamma != 1; the non-negative branch value is
    returned there, matching the half-open split of the density.
    """
    eps = np.asarray(eps, dtype=np.float64)
    nu = params.nu
    u = _scaled_arg(eps, params)
    scale = np.where(eps >= 0, 1.0 / params.gamma, params.gamma)
    f = np.exp(params.log_norm + student_t_logpdf(u, nu))
    denom = nu + u * u
    curv = (nu + 1.0) * ((nu + 2.0) * u * u - nu) / (denom * denom)
    return f * scale * scale * curv


def mixhat_sample(params, count, rng):
    """Draw i.i.d. MixHat variates.

    Uses the positive-mass decomposition: with probability
    gamma^2/(1+gamma^2) emit +gamma*|T|, otherwise -|T|/gamma, T ~ t_nu.
    Deterministic given the generator state.
    """
    if count < 1:
        raise ValueError(f"count must be >= 1, got {count}")
    side = rng.random(count) < params.positive_mass
    t_abs = np.abs(rng.standard_t(params.nu, count))
    return np.where(side, params.gamma * t_abs, -t_abs / params.gamma)
