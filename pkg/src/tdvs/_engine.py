"""Compiled numerical kernels for the EM fit.

Everything here works on raw float64 arrays and scalars so numba can
compile it; the public API in ``em`` wraps these with the dataclass
types.  All routines are deterministic and release the GIL, which is
what makes thread-level parallelism over permutation refits effective.

The one-dimensional maximizations share a tagged objective dispatch:
  kind 0 - single coefficient given partial residuals (L1 kink at 0)
  kind 1 - intercept
  kind 2 - tail parameter nu, searched on the log scale
  kind 3 - skew parameter gamma, searched on the log scale
"""

import math

import numpy as np
from numba import njit

_INVPHI = 0.6180339887498949   # (sqrt(5) - 1) / 2
_INVPHI2 = 0.3819660112501051  # 1 - _INVPHI


@njit(cache=True, nogil=True)
def _log_kernel_sum(eps, nu, gamma):
    """Likelihood kernel: sum of -((nu+1)/2) log(1 + u^2/nu), u branch-scaled."""
    s = 0.0
    half = 0.5 * (nu + 1.0)
    for i in range(eps.shape[0]):
        e = eps[i]
        u = e / gamma if e >= 0.0 else e * gamma
        s -= half * math.log1p(u * u / nu)
    return s


@njit(cache=True, nogil=True)
def _q_objective(eps, beta0, beta, nu, gamma, theta, p_hat,
                 t0, t1, a, b, c, d, v0):
    """EM surrogate objective given residuals and inclusion probabilities."""
    n = eps.shape[0]
    p = beta.shape[0]
    q = _log_kernel_sum(eps, nu, gamma)
    q -= beta0 * beta0 / (2.0 * v0)
    lt = math.log(t0 / 2.0)
    lr = math.log(t1 / t0)
    sp = 0.0
    for j in range(p):
        ab = abs(beta[j])
        q += lt - t0 * ab
        q += p_hat[j] * (lr - (t1 - t0) * ab)
        sp += p_hat[j]
    q += math.log(theta / (1.0 - theta)) * sp
    q += (a - 1.0) * math.log(theta) + (b - 1.0 + p) * math.log(1.0 - theta)
    ln = math.log(nu)
    q += -0.5 * (ln - 1.0) ** 2 - (0.5 * n + 1.0) * ln
    q += n * (math.lgamma(0.5 * (nu + 1.0)) - math.lgamma(0.5 * nu))
    q += (n + c - 1.0) * math.log(gamma) - n * math.log(gamma * gamma + 1.0)
    q -= d * gamma
    return q


@njit(cache=True, nogil=True, inline="always")
def _obj(kind, v1, v2, x, a1, a2, a3, a4):
    if kind == 0:
        # coefficient: v1 = partial residuals, v2 = covariate column,
        # a1 = nu, a2 = gamma, a3 = L1 weight
        s = 0.0
        half = 0.5 * (a1 + 1.0)
        for i in range(v1.shape[0]):
            e = v1[i] - v2[i] * x
            u = e / a2 if e >= 0.0 else e * a2
            s -= half * math.log1p(u * u / a1)
        return s - a3 * abs(x)
    elif kind == 1:
        # intercept: v1 = response minus covariate effects,
        # a1 = nu, a2 = gamma, a3 = prior variance
        s = 0.0
        half = 0.5 * (a1 + 1.0)
        for i in range(v1.shape[0]):
            e = v1[i] - x
            u = e / a2 if e >= 0.0 else e * a2
            s -= half * math.log1p(u * u / a1)
        return s - x * x / (2.0 * a3)
    elif kind == 2:
        # nu at log-value x: v1 = residuals, a2 = gamma
        nu = math.exp(x)
        n = v1.shape[0]
        s = _log_kernel_sum(v1, nu, a2)
        return (s - 0.5 * (x - 1.0) ** 2 - (0.5 * n + 1.0) * x
                + n * (math.lgamma(0.5 * (nu + 1.0)) - math.lgamma(0.5 * nu)))
    else:
        # gamma at log-value x: v1 = residuals, a1 = nu, a3 = c, a4 = d
        g = math.exp(x)
        n = v1.shape[0]
        s = _log_kernel_sum(v1, a1, g)
        return s + (n + a3 - 1.0) * x - n * math.log(g * g + 1.0) - a4 * g


@njit(cache=True, nogil=True)
def _gss(kind, v1, v2, a1, a2, a3, a4, lo, hi, tol):
    """Golden-section maximum on [lo, hi]; returns best evaluated (x, f)."""
    h = hi - lo
    if h <= tol:
        mid = 0.5 * (lo + hi)
        return mid, _obj(kind, v1, v2, mid, a1, a2, a3, a4)
    c = lo + _INVPHI2 * h
    d = lo + _INVPHI * h
    fc = _obj(kind, v1, v2, c, a1, a2, a3, a4)
    fd = _obj(kind, v1, v2, d, a1, a2, a3, a4)
    n_iter = int(math.ceil(math.log(tol / h) / math.log(_INVPHI)))
    if n_iter > 120:
        n_iter = 120
    for _ in range(n_iter):
        if fc > fd:
            hi = d
            d = c
            fd = fc
            h = _INVPHI * h
            c = lo + _INVPHI2 * h
            fc = _obj(kind, v1, v2, c, a1, a2, a3, a4)
        else:
            lo = c
            c = d
            fc = fd
            h = _INVPHI * h
            d = lo + _INVPHI * h
            fd = _obj(kind, v1, v2, d, a1, a2, a3, a4)
    if fc > fd:
        return c, fc
    return d, fd


@njit(cache=True, nogil=True)
def _climb(kind, v1, v2, a1, a2, a3, a4, x0, h0, lob, hib, expansions, tol):
    """Maximize a smooth 1-d objective from x0 within [lob, hib].

    Brackets by doubling steps in the improving direction, then refines by
    golden section.  Returns the starting point unless a strictly better
    point is found, so a chained caller can never lose objective value.
    """
    x0 = min(max(x0, lob), hib)
    f0 = _obj(kind, v1, v2, x0, a1, a2, a3, a4)
    xp = min(x0 + h0, hib)
    xm = max(x0 - h0, lob)
    fp = _obj(kind, v1, v2, xp, a1, a2, a3, a4)
    fm = _obj(kind, v1, v2, xm, a1, a2, a3, a4)
    if f0 >= fp and f0 >= fm:
        lo, hi = xm, xp
        best_x, best_f = x0, f0
    else:
        if fp > fm:
            d, x_cur, f_cur = 1.0, xp, fp
        else:
            d, x_cur, f_cur = -1.0, xm, fm
        x_prev = x0
        step = h0
        x_next = x_cur
        for _ in range(expansions):
            step *= 2.0
            x_next = min(max(x_cur + d * step, lob), hib)
            if x_next == x_cur:
                break
            f_next = _obj(kind, v1, v2, x_next, a1, a2, a3, a4)
            if f_next <= f_cur:
                break
            x_prev = x_cur
            x_cur, f_cur = x_next, f_next
        lo = min(x_prev, x_next)
        hi = max(x_prev, x_next)
        best_x, best_f = x_cur, f_cur
    x, f = _gss(kind, v1, v2, a1, a2, a3, a4, lo, hi, tol)
    if f > best_f:
        best_x, best_f = x, f
    if best_f > f0:
        return best_x, best_f
    return x0, f0


@njit(cache=True, nogil=True)
def _coord_side(r, xj, nu, gamma, w, sign, expansions, tol):
    """Best point on one side of the kink: geometric probes, then refine.

    Probes sign * 1e-3 * 2^k outward from the kink, stopping once the
    objective has dropped three probes in a row (the L1 weight forces it
    to -inf eventually), then golden-sections the interval bracketing the
    best probe.
    """
    h0 = 1e-3
    best_k = 0
    x_best = sign * h0
    best_f = _obj(0, r, xj, x_best, nu, gamma, w, 0.0)
    n_drop = 0
    k_last = 0
    x_k = x_best
    for k in range(1, expansions):
        x_k = x_k * 2.0
        f = _obj(0, r, xj, x_k, nu, gamma, w, 0.0)
        k_last = k
        if f > best_f:
            best_f = f
            best_k = k
            x_best = x_k
            n_drop = 0
        else:
            n_drop += 1
            if n_drop >= 3:
                break
    x_lo = 0.0 if best_k == 0 else sign * h0 * (2.0 ** (best_k - 1))
    x_hi = x_best if best_k == k_last else sign * h0 * (2.0 ** (best_k + 1))
    lo = min(x_lo, x_hi)
    hi = max(x_lo, x_hi)
    gx, gf = _gss(0, r, xj, nu, gamma, w, 0.0, lo, hi, tol)
    if gf > best_f:
        return gx, gf
    return x_best, best_f


@njit(cache=True, nogil=True)
def _coord_grad_at_zero(r, xj, nu, gamma):
    """Derivative of the smooth likelihood part of the coefficient objective at 0."""
    g = 0.0
    for i in range(r.shape[0]):
        e = r[i]
        if e >= 0.0:
            lp = -(nu + 1.0) * e / (gamma * gamma * nu + e * e)
        else:
            lp = -(nu + 1.0) * e * gamma * gamma / (nu + e * e * gamma * gamma)
        g -= xj[i] * lp
    return g


@njit(cache=True, nogil=True)
def _update_coord(r, xj, b_cur, nu, gamma, w, expansions, tol, full_scan, h0):
    """One coefficient update: exact-zero candidate plus a 1-d search.

    Zero wins ties, so coefficients shrunk onto the kink are bitwise 0.
    On a full scan both sides of the kink are probed geometrically; in
    steady state an active coefficient is refined locally (step hint h0)
    and an inactive one is kept at 0 while the subgradient condition
    |d loglik / d b| <= w holds there.
    """
    f0 = _obj(0, r, xj, 0.0, nu, gamma, w, 0.0)
    best_x = 0.0
    best_f = f0
    if b_cur != 0.0:
        fc = _obj(0, r, xj, b_cur, nu, gamma, w, 0.0)
        if fc > best_f:
            best_x, best_f = b_cur, fc
        if not full_scan:
            x, f = _climb(0, r, xj, nu, gamma, w, 0.0, b_cur, h0,
                          -1e308, 1e308, expansions, tol)
            if f > best_f:
                best_x, best_f = x, f
            return best_x, best_f
    elif not full_scan:
        if abs(_coord_grad_at_zero(r, xj, nu, gamma)) <= w:
            return 0.0, f0
    xp, fp = _coord_side(r, xj, nu, gamma, w, 1.0, expansions, tol)
    if fp > best_f:
        best_x, best_f = xp, fp
    xm, fm = _coord_side(r, xj, nu, gamma, w, -1.0, expansions, tol)
    if fm > best_f:
        best_x, best_f = xm, fm
    return best_x, best_f


@njit(cache=True, nogil=True)
def _coordinate_ascent(X, y, beta0, beta, nu, gamma, w,
                       sweep_tol, max_sweeps, expansions, tol,
                       full_scan, hstep):
    """Cyclic coordinate ascent on the penalized modal log-likelihood.

    Mutates ``beta`` (and the per-coordinate step hints ``hstep``) in
    place; returns the number of sweeps performed.  With ``full_scan``
    the first sweep probes both sides of every kink.  X is expected in
    Fortran order so column slices are contiguous.
    """
    n, p = X.shape
    eps = np.empty(n)
    for i in range(n):
        acc = y[i] - beta0
        for j in range(p):
            acc -= X[i, j] * beta[j]
        eps[i] = acc
    r = np.empty(n)
    sweeps = 0
    for sweep in range(max_sweeps):
        sweeps += 1
        max_move = 0.0
        scan = full_scan and sweep == 0
        for j in range(p):
            bj = beta[j]
            xj = X[:, j]
            for i in range(n):
                r[i] = eps[i] + xj[i] * bj
            bn, _ = _update_coord(r, xj, bj, nu, gamma, w[j],
                                  expansions, tol, scan, hstep[j])
            move = abs(bn - bj)
            if move > max_move:
                max_move = move
            if move > 0.0:
                hstep[j] = min(max(4.0 * move, 1e-9), 0.25)
            else:
                hstep[j] = max(0.5 * hstep[j], 1e-9)
            beta[j] = bn
            for i in range(n):
                eps[i] = r[i] - xj[i] * bn
        if max_move < sweep_tol:
            break
    return sweeps


@njit(cache=True, nogil=True)
def _update_beta0(r0, b0_cur, nu, gamma, v0, expansions, tol, h0):
    """Intercept update: bracket around the current value, refine, never worsen."""
    x, _ = _climb(1, r0, r0, nu, gamma, v0, 0.0, b0_cur, h0,
                  -1e308, 1e308, expansions, tol)
    return x


_NU_LOG_LO = math.log(0.05)
_NU_LOG_HI = math.log(200.0)
_GAMMA_LOG_LO = math.log(0.05)
_GAMMA_LOG_HI = math.log(20.0)
_SHAPE_GRID = 25


@njit(cache=True, nogil=True)
def _update_shape(kind, eps, cur, other, c, d, tol, full_scan, h0):
    """Bounded log-scale update shared by nu (kind 2) and gamma (kind 3).

    A full scan sweeps a coarse deterministic grid over the admissible
    range before refining; otherwise the search climbs from the current
    value with step hint h0.  The current value is kept unless the search
    strictly improves on it.
    """
    if kind == 2:
        lob, hib = _NU_LOG_LO, _NU_LOG_HI
        a1, a2, a3, a4 = 0.0, other, 0.0, 0.0
    else:
        lob, hib = _GAMMA_LOG_LO, _GAMMA_LOG_HI
        a1, a2, a3, a4 = other, 0.0, c, d
    zc = min(max(math.log(cur), lob), hib)
    if not full_scan:
        z, _ = _climb(kind, eps, eps, a1, a2, a3, a4, zc, h0, lob, hib,
                      60, tol)
        return math.exp(z) if z != zc else cur
    f_cur = _obj(kind, eps, eps, zc, a1, a2, a3, a4)
    best_z, best_f = zc, f_cur
    span = (hib - lob) / (_SHAPE_GRID - 1.0)
    for k in range(_SHAPE_GRID):
        z = lob + span * k
        f = _obj(kind, eps, eps, z, a1, a2, a3, a4)
        if f > best_f:
            best_z, best_f = z, f
    zlo = max(lob, best_z - span)
    zhi = min(hib, best_z + span)
    z, f = _gss(kind, eps, eps, a1, a2, a3, a4, zlo, zhi, tol)
    if f > best_f:
        best_z, best_f = z, f
    if best_f > f_cur:
        return math.exp(best_z)
    return cur


_LOG_2PI = math.log(2.0 * math.pi)


@njit(cache=True, nogil=True)
def _marginal_log_posterior(eps, beta0, beta, nu, gamma, theta,
                            t0, t1, a, b, c, d, v0):
    """Log posterior with indicators summed out, all constants included."""
    n = eps.shape[0]
    p = beta.shape[0]
    s = _log_kernel_sum(eps, nu, gamma)
    s += n * (math.log(2.0) + math.log(gamma) - math.log(gamma * gamma + 1.0)
              + math.lgamma(0.5 * (nu + 1.0)) - math.lgamma(0.5 * nu)
              - 0.5 * math.log(nu * math.pi))
    s += -0.5 * math.log(2.0 * math.pi * v0) - beta0 * beta0 / (2.0 * v0)
    l0 = math.log(0.5 * t0)
    l1 = math.log(0.5 * t1)
    for j in range(p):
        ab = abs(beta[j])
        spike = l0 - t0 * ab
        slab = l1 - t1 * ab
        hi = spike if spike > slab else slab
        s += hi + math.log((1.0 - theta) * math.exp(spike - hi)
                           + theta * math.exp(slab - hi))
    s += ((a - 1.0) * math.log(theta) + (b - 1.0) * math.log1p(-theta)
          - (math.lgamma(a) + math.lgamma(b) - math.lgamma(a + b)))
    ln = math.log(nu)
    s += -ln - 0.5 * _LOG_2PI - 0.5 * (ln - 1.0) ** 2
    s += c * math.log(d) - math.lgamma(c) + (c - 1.0) * math.log(gamma)
    s -= d * gamma
    return s
