"""Spike-rate selection by K-fold cross-validation on prediction error.

The slab rate stays fixed; each candidate spike rate is scored by the
held-out mean squared error of the mode-point predictor, averaged over
folds, and the smallest rate wins ties.
"""

from dataclasses import dataclass, replace

import numpy as np

from .em import EMConfig, FitError, fit
from .model import Dataset, Hyperparams
from .rng import child_rng


@dataclass(frozen=True)
class TuningGrid:
    t0_candidates: tuple = (1.0, 3.0, 10.0, 30.0, 100.0)
    t1_fixed: float = 1.0
    folds: int = 5
    seed: int = 0

    def __post_init__(self):
        cands = tuple(sorted(float(t) for t in self.t0_candidates))
        if not cands or any(t <= 0 for t in cands):
            raise ValueError("t0 candidates must be positive")
        object.__setattr__(self, "t0_candidates", cands)
        if not (self.t1_fixed > 0):
            raise ValueError("t1_fixed must be positive")
        if self.folds < 2:
            raise ValueError("need at least 2 folds")


@dataclass(frozen=True)
class TuningResult:
    chosen_t0: float
    pmse_table: tuple  # pairs (t0, mean PMSE or None if all folds failed)
    fold_assignment: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.fold_assignment, dtype=np.int64).copy()
        arr.setflags(write=False)
        object.__setattr__(self, "fold_assignment", arr)


def predict_point(fit_result, x):
    """Mode-point prediction: fitted intercept plus covariate effects."""
    x = np.asarray(x, dtype=np.float64)
    beta = fit_result.params.beta
    if x.shape[-1] != beta.shape[0]:
        raise ValueError(f"x has {x.shape[-1]} entries, expected {beta.shape[0]}")
    return fit_result.params.beta0 + x @ beta


def _fold_indices(n, folds, seed):
    """Seeded permutation split; every observation lands in exactly one fold."""
    perm = child_rng(seed, 0xF01D).permutation(n)
    assignment = np.empty(n, dtype=np.int64)
    for k, chunk in enumerate(np.array_split(perm, folds)):
        assignment[chunk] = k
    return assignment


def cv_tune_t0(data, grid, hyper_base, em_config=None):
    """Pick the spike rate minimizing cross-validated prediction error.

    A candidate whose every fold fit fails is marked invalid (PMSE None);
    if all candidates are invalid an error is raised.
    """
    em_config = em_config or EMConfig()
    if data.n < grid.folds:
        raise ValueError(f"need n >= folds, got n={data.n}, folds={grid.folds}")
    assignment = _fold_indices(data.n, grid.folds, grid.seed)
    table = []
    for t0 in grid.t0_candidates:
        hyper = replace(hyper_base, t0=float(t0), t1=float(grid.t1_fixed))
        fold_mses = []
        failed = False
        for k in range(grid.folds):
            test = assignment == k
            train = ~test
            train_data = Dataset(data.covariates[train], data.response[train])
            try:
                fold_fit = fit(train_data, hyper, em_config)
            except FitError:
                failed = True
                break
            pred = predict_point(fold_fit, data.covariates[test])
            fold_mses.append(float(np.mean((data.response[test] - pred) ** 2)))
        table.append((float(t0), None if failed else float(np.mean(fold_mses))))
    valid = [(pmse, t0) for t0, pmse in table if pmse is not None]
    if not valid:
        raise FitError("every tuning candidate failed in cross-validation", 0)
    # candidates are sorted ascending, so min() breaks PMSE ties toward small t0
    _, chosen = min(valid)
    return TuningResult(chosen_t0=chosen, pmse_table=tuple(table),
                        fold_assignment=assignment)
