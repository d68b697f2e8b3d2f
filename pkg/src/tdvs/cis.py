"""Change-in-slope testing and the staged permutation selection pipeline.

The statistic for covariate j compares squared density slopes at the
fitted residuals with and without the j-th covariate contribution,
normalized by local curvature.  Nulling a covariate whose coefficient is
exactly zero leaves the residuals untouched, so its statistic is exactly
zero.  Significance is assessed by refitting on column-permuted data;
with many candidates, two cheap pre-screening rounds (group-level, then
one-at-a-time) shrink the candidate set before the final tests.
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from .em import EMConfig, FitError, fit
from .mixhat import mixhat_d1, mixhat_d2
from .model import Hyperparams, RegressionParams, residuals
from .rng import child_rng

# stage tags used when deriving permutation streams from the master seed
_STAGE_PARTITION = 0
_STAGE_GROUPS = 1
_STAGE_INDIVIDUAL = 2
_STAGE_FINAL = 3


@dataclass(frozen=True)
class SelectionConfig:
    """Constants of the permutation pipeline."""

    final_permutations: int = 200
    group_permutations: int = 20
    individual_permutations: int = 20
    alpha: float = 0.05
    alpha0: float = 0.3
    group_size: int = 4
    delta: float = 1e-3
    enable_prescreen: bool = False
    master_seed: int = 0

    def __post_init__(self):
        for name in ("final_permutations", "group_permutations",
                     "individual_permutations", "group_size"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if not (0.0 < self.alpha < 1.0) or not (0.0 < self.alpha0 < 1.0):
            raise ValueError("alpha and alpha0 must lie in (0, 1)")
        if self.alpha0 < self.alpha:
            raise ValueError("alpha0 must be >= alpha")
        if not (self.delta > 0):
            raise ValueError("delta must be positive")


@dataclass(frozen=True)
class CiSResult:
    """Observed statistic, permutation reference values, and the p-value."""

    target: object
    statistic: float
    permuted_statistics: np.ndarray
    p_value: float
    n_failed: int = 0
    unreliable: bool = False

    def __post_init__(self):
        arr = np.asarray(self.permuted_statistics, dtype=np.float64).copy()
        arr.setflags(write=False)
        object.__setattr__(self, "permuted_statistics", arr)


@dataclass(frozen=True)
class SelectionResult:
    selected_indices: tuple
    stage_trace: dict
    fit: object


def _nulled_residuals(data, fit_result, cols):
    """Residuals recomputed with the given covariate columns zeroed."""
    params = fit_result.params
    eps = residuals(data, params.beta0, params.beta)
    shift = data.covariates[:, cols] @ params.beta[cols]
    return eps, eps + shift


def _cis_from_residuals(eps, eps_nulled, shape, delta):
    d1_full = mixhat_d1(eps, shape)
    d1_null = mixhat_d1(eps_nulled, shape)
    d2_null = mixhat_d2(eps_nulled, shape)
    num = np.abs(d1_full * d1_full - d1_null * d1_null)
    return float(np.mean(num / (np.abs(d2_null) + delta)))


def cis_statistic(data, fit_result, j, delta=1e-3):
    """Change-in-slope statistic for one covariate."""
    if not (0 <= j < data.p):
        raise IndexError(f"covariate index {j} out of range for p={data.p}")
    eps, eps_nulled = _nulled_residuals(data, fit_result, [j])
    return _cis_from_residuals(eps, eps_nulled, fit_result.params.shape, delta)


def cis_group_statistic(data, fit_result, group, delta=1e-3):
    """Change-in-slope statistic with a whole group of covariates nulled."""
    group = list(group)
    if not group:
        raise ValueError("group must be non-empty")
    for j in group:
        if not (0 <= j < data.p):
            raise IndexError(f"covariate index {j} out of range for p={data.p}")
    eps, eps_nulled = _nulled_residuals(data, fit_result, group)
    return _cis_from_residuals(eps, eps_nulled, fit_result.params.shape, delta)


def _nulled_warm_start(data, hyper, em_config, cols, base_params):
    """Fit with the target columns' effects removed, as a refit warm start.

    Permuting a column mostly destroys its association, so the refit on
    permuted data usually converges to the fit in which that column
    contributes nothing.  Fitting that state once (on data with the
    columns zeroed out, so their coefficients stay pinned at 0) makes the
    typical permutation refit converge almost immediately.
    """
    X = data.covariates.copy()
    X[:, cols] = 0.0
    beta_init = base_params.beta.copy()
    beta_init[cols] = 0.0
    init = RegressionParams(base_params.beta0, beta_init, base_params.nu,
                            base_params.gamma, base_params.theta)
    try:
        nulled = fit(type(data)(X, data.response), hyper, em_config,
                     init=init)
    except FitError:
        return init
    return nulled.params


def _refit_statistic(data, hyper, em_config, cols, perm, warm_params, delta):
    """Refit on data with the target columns' rows permuted; return its statistic.

    Returns NaN when the refit fails to converge, so the caller can drop
    the permutation from the p-value denominator.
    """
    permuted = data.with_permuted_columns(cols, perm)
    try:
        refit = fit(permuted, hyper, em_config, init=warm_params)
    except FitError:
        return np.nan
    if not refit.converged:
        return np.nan
    if len(cols) == 1:
        return cis_statistic(permuted, refit, cols[0], delta)
    return cis_group_statistic(permuted, refit, cols, delta)


def _map_tasks(pool, func, args_list):
    if pool is None:
        return [func(*args) for args in args_list]
    futures = [pool.submit(func, *args) for args in args_list]
    return [f.result() for f in futures]


def _pvalue_from_stats(observed, stats):
    """Share of valid permuted statistics at least as large as the observed one."""
    stats = np.asarray(stats, dtype=np.float64)
    valid = stats[np.isfinite(stats)]
    n_failed = stats.size - valid.size
    if valid.size == 0:
        return 1.0, n_failed, True
    p = float(np.count_nonzero(valid >= observed)) / valid.size
    unreliable = n_failed > 0.1 * stats.size
    return p, n_failed, unreliable


def _test_targets(data, hyper, em_config, items, count, stage, master_seed,
                  delta, base_fit, pool):
    """Permutation-test a batch of targets, sharing one flat task pool.

    ``items`` holds (tag, stream_key, cols, observed) per target; returns
    one CiSResult per item, in order.  Targets whose observed statistic is
    exactly 0 short-circuit to p = 1 (every permuted statistic is >= 0),
    skipping the refits entirely.
    """
    active = [it for it in items if it[3] != 0.0]
    warms = _map_tasks(pool, _nulled_warm_start,
                       [(data, hyper, em_config, cols, base_fit.params)
                        for _, _, cols, _ in active])
    flat = []
    for (tag, stream_key, cols, observed), warm in zip(active, warms):
        for perm in _derived_perms(master_seed, stage, stream_key, count,
                                   data.n):
            flat.append((data, hyper, em_config, cols, perm, warm, delta))
    stats = _map_tasks(pool, _refit_statistic, flat)
    results = {}
    for k, (tag, stream_key, cols, observed) in enumerate(active):
        p, n_failed, unreliable = _pvalue_from_stats(
            observed, stats[k * count:(k + 1) * count])
        results[stream_key] = CiSResult(tag, observed,
                                        np.asarray(stats[k * count:(k + 1) * count]),
                                        p, n_failed, unreliable)
    out = []
    for tag, stream_key, cols, observed in items:
        if observed == 0.0:
            out.append(CiSResult(tag, 0.0, np.empty(0), 1.0))
        else:
            out.append(results[stream_key])
    return out


def permutation_pvalue(data, hyper, em_config, target, count, rng, *,
                       base_fit=None, delta=1e-3, threads=1):
    """Permutation p-value for one covariate or one covariate group.

    The observed statistic comes from the fit on the unpermuted data; each
    permutation shuffles the target column(s) jointly, refits, and
    evaluates the statistic under its own fit.
    """
    cols = [int(target)] if np.isscalar(target) else [int(j) for j in target]
    if base_fit is None:
        base_fit = fit(data, hyper, em_config)
    if len(cols) == 1:
        observed = cis_statistic(data, base_fit, cols[0], delta)
        tag = cols[0]
    else:
        observed = cis_group_statistic(data, base_fit, cols, delta)
        tag = tuple(cols)
    if observed == 0.0:
        return CiSResult(tag, 0.0, np.empty(0), 1.0)
    perms = [g.permutation(data.n) for g in rng.spawn(count)]
    pool = ThreadPoolExecutor(threads) if threads > 1 else None
    try:
        warm = _nulled_warm_start(data, hyper, em_config, cols,
                                  base_fit.params)
        args = [(data, hyper, em_config, cols, perm, warm, delta)
                for perm in perms]
        stats = _map_tasks(pool, _refit_statistic, args)
    finally:
        if pool is not None:
            pool.shutdown()
    p, n_failed, unreliable = _pvalue_from_stats(observed, stats)
    return CiSResult(tag, observed, np.asarray(stats), p, n_failed,
                     unreliable)


def _partition(p, group_size, rng):
    """Seeded random partition into ceil(p/m) groups; the last may be smaller."""
    order = rng.permutation(p)
    return [tuple(int(j) for j in order[k:k + group_size])
            for k in range(0, p, group_size)]


def _derived_perms(master_seed, stage, target_key, count, n):
    return [child_rng(master_seed, stage, target_key, b).permutation(n)
            for b in range(count)]


def prescreen_groups(data, hyper, em_config, sel_config, rng=None, *,
                     base_fit=None, pool=None):
    """Group-level screening: drop whole groups with large p-values.

    Returns (surviving original indices, stage records, partition).
    """
    p = data.p
    if p <= sel_config.group_size:
        raise ValueError("group pre-screening needs p > group_size")
    if rng is None:
        rng = child_rng(sel_config.master_seed, _STAGE_PARTITION)
    if base_fit is None:
        base_fit = fit(data, hyper, em_config)
    groups = _partition(p, sel_config.group_size, rng)
    items = [(group, q, list(group),
              cis_group_statistic(data, base_fit, group, sel_config.delta))
             for q, group in enumerate(groups)]
    results = _test_targets(data, hyper, em_config, items,
                            sel_config.group_permutations, _STAGE_GROUPS,
                            sel_config.master_seed, sel_config.delta,
                            base_fit, pool)
    records = []
    survivors = []
    for (group, q, _, _), res in zip(items, results):
        dropped = res.p_value > sel_config.alpha0
        records.append({"group_index": q, "indices": group,
                        "statistic": res.statistic, "p_value": res.p_value,
                        "n_failed": res.n_failed, "dropped": dropped})
        if not dropped:
            survivors.extend(group)
    return sorted(survivors), records, groups


def prescreen_individuals(data, hyper, em_config, sel_config, survivors, *,
                          base_fit=None, pool=None):
    """One-at-a-time screening of the surviving covariates.

    The model is refit on the surviving columns only; ``survivors`` and the
    returned indices refer to the original covariate numbering.
    """
    survivors = sorted(int(j) for j in survivors)
    if not survivors:
        raise ValueError("survivors must be non-empty")
    reduced = data.select_columns(survivors)
    hyper_r = replace(hyper, b=float(reduced.p))
    if base_fit is None:
        base_fit = fit(reduced, hyper_r, em_config)
    items = [(orig_j, orig_j, [local_j],
              cis_statistic(reduced, base_fit, local_j, sel_config.delta))
             for local_j, orig_j in enumerate(survivors)]
    results = _test_targets(reduced, hyper_r, em_config, items,
                            sel_config.individual_permutations,
                            _STAGE_INDIVIDUAL, sel_config.master_seed,
                            sel_config.delta, base_fit, pool)
    records = []
    kept = []
    for (orig_j, _, _, _), res in zip(items, results):
        dropped = res.p_value > sel_config.alpha0
        records.append({"index": orig_j, "statistic": res.statistic,
                        "p_value": res.p_value, "n_failed": res.n_failed,
                        "dropped": dropped})
        if not dropped:
            kept.append(orig_j)
    return kept, records


def _final_tests(data, hyper, em_config, sel_config, candidates, base_fit,
                 pool):
    """Final per-covariate tests at level alpha on the remaining candidates."""
    candidates = sorted(int(j) for j in candidates)
    if set(candidates) == set(range(data.p)):
        reduced, hyper_r = data, hyper
        base = base_fit if base_fit is not None else fit(data, hyper, em_config)
    else:
        reduced = data.select_columns(candidates)
        hyper_r = replace(hyper, b=float(reduced.p))
        base = fit(reduced, hyper_r, em_config)
    items = [(orig_j, orig_j, [local_j],
              cis_statistic(reduced, base, local_j, sel_config.delta))
             for local_j, orig_j in enumerate(candidates)]
    results = _test_targets(reduced, hyper_r, em_config, items,
                            sel_config.final_permutations, _STAGE_FINAL,
                            sel_config.master_seed, sel_config.delta,
                            base, pool)
    records = []
    selected = []
    for (orig_j, _, _, _), res in zip(items, results):
        keep = res.p_value < sel_config.alpha
        records.append({"index": orig_j, "statistic": res.statistic,
                        "p_value": res.p_value, "n_failed": res.n_failed,
                        "unreliable": res.unreliable, "selected": keep})
        if keep:
            selected.append(orig_j)
    return selected, records


def tdvs_select(data, hyper, em_config=None, sel_config=None, threads=1):
    """The full selection pipeline.

    With pre-screening enabled (and p large enough to group), runs the
    group stage and the one-at-a-time stage at level alpha0 before the
    final tests at level alpha; all randomness derives from the master
    seed, so results are identical for any thread count.
    """
    em_config = em_config or EMConfig()
    sel_config = sel_config or SelectionConfig()
    full_fit = fit(data, hyper, em_config)
    pool = ThreadPoolExecutor(threads) if threads > 1 else None
    trace = {}
    try:
        candidates = list(range(data.p))
        if sel_config.enable_prescreen and data.p > sel_config.group_size:
            survivors, group_records, partition = prescreen_groups(
                data, hyper, em_config, sel_config, base_fit=full_fit,
                pool=pool)
            trace["partition"] = [tuple(g) for g in partition]
            trace["group_stage"] = group_records
            trace["survivors_after_groups"] = list(survivors)
            if not survivors:
                trace["individual_stage"] = []
                trace["final"] = []
                return SelectionResult((), trace, full_fit)
            survivors2, ind_records = prescreen_individuals(
                data, hyper, em_config, sel_config, survivors, pool=pool)
            trace["individual_stage"] = ind_records
            trace["survivors_after_individuals"] = list(survivors2)
            if not survivors2:
                trace["final"] = []
                return SelectionResult((), trace, full_fit)
            candidates = survivors2
        selected, final_records = _final_tests(
            data, hyper, em_config, sel_config, candidates, full_fit, pool)
        trace["final"] = final_records
        return SelectionResult(tuple(sorted(selected)), trace, full_fit)
    finally:
        if pool is not None:
            pool.shutdown()
