"""Synthetic-data studies: generators, metrics, and the replicate runner."""

import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .cis import SelectionConfig, tdvs_select
from .em import EMConfig, FitError
from .mixhat import MixHatParams, mixhat_sample
from .model import Dataset, Hyperparams
from .rng import child_rng, derived_seed
from .tuning import TuningGrid, cv_tune_t0


@dataclass(frozen=True)
class MixHatErrors:
    nu: float = 3.0
    gamma: float = 2.0

    def draw(self, n, rng):
        return mixhat_sample(MixHatParams(self.nu, self.gamma), n, rng)


@dataclass(frozen=True)
class GaussianErrors:
    variance: float = 3.0
    mean: float = 0.0

    def draw(self, n, rng):
        return self.mean + np.sqrt(self.variance) * rng.standard_normal(n)


@dataclass(frozen=True)
class GaussianMixtureErrors:
    """Mixture of Gaussians given as (weight, mean, variance) components."""

    weights: tuple = (0.8, 0.2)
    means: tuple = (0.0, 5.0)
    variances: tuple = (3.0, 7.0)

    def __post_init__(self):
        if not (len(self.weights) == len(self.means) == len(self.variances)):
            raise ValueError("component tuples must share a length")
        if abs(sum(self.weights) - 1.0) > 1e-12:
            raise ValueError("mixture weights must sum to 1")

    def draw(self, n, rng):
        comp = rng.choice(len(self.weights), size=n, p=self.weights)
        z = rng.standard_normal(n)
        means = np.asarray(self.means)[comp]
        sds = np.sqrt(np.asarray(self.variances))[comp]
        return means + sds * z


@dataclass(frozen=True)
class SimScenario:
    n: int
    p: int
    beta_true: np.ndarray
    error_spec: object
    beta0_true: float = 2.0
    covariate_spec: str = "independent"  # or "block"
    replicates: int = 50
    seed: int = 0

    def __post_init__(self):
        beta = np.asarray(self.beta_true, dtype=np.float64).copy()
        if beta.shape != (self.p,):
            raise ValueError("beta_true length must equal p")
        beta.setflags(write=False)
        object.__setattr__(self, "beta_true", beta)
        if self.covariate_spec not in ("independent", "block"):
            raise ValueError(f"unknown covariate spec {self.covariate_spec!r}")
        if self.n < 2 or self.p < 1 or self.replicates < 1:
            raise ValueError("need n >= 2, p >= 1, replicates >= 1")

    @property
    def support(self):
        return tuple(int(j) for j in np.flatnonzero(self.beta_true))


@dataclass(frozen=True)
class Metrics:
    tpr: float  # None when the true support is empty
    fpr: float  # None when there are no null covariates
    acr: float
    mse: float


# Cholesky factor of the 2x2 within-pair correlation block [[1, .5], [.5, 1]]
_BLOCK_CHOL = np.linalg.cholesky(np.array([[1.0, 0.5], [0.5, 1.0]]))


def gen_covariates(scenario, rng):
    """Rows i.i.d. normal; pairwise-correlated columns under the block spec."""
    X = rng.standard_normal((scenario.n, scenario.p))
    if scenario.covariate_spec == "block":
        if scenario.p % 2 == 1:
            warnings.warn("odd p under the block spec: trailing column left "
                          "independent", stacklevel=2)
        for k in range(scenario.p // 2):
            X[:, 2 * k:2 * k + 2] = X[:, 2 * k:2 * k + 2] @ _BLOCK_CHOL.T
    return X


def gen_errors(scenario, rng):
    return scenario.error_spec.draw(scenario.n, rng)


def gen_response(X, errors, beta0_true, beta_true):
    X = np.asarray(X, dtype=np.float64)
    errors = np.asarray(errors, dtype=np.float64)
    beta_true = np.asarray(beta_true, dtype=np.float64)
    if X.shape != (errors.shape[0], beta_true.shape[0]):
        raise ValueError("shape mismatch between covariates, errors, and beta")
    return beta0_true + X @ beta_true + errors


def compute_metrics(selected, beta_hat, scenario):
    """Selection rates and the per-coefficient squared estimation error."""
    beta_hat = np.asarray(beta_hat, dtype=np.float64)
    p = scenario.p
    if beta_hat.shape != (p,):
        raise ValueError(f"beta_hat length {beta_hat.shape[0]}, expected {p}")
    selected = set(int(j) for j in selected)
    support = set(scenario.support)
    nulls = set(range(p)) - support
    tp = len(selected & support)
    fp = len(selected & nulls)
    tn = len(nulls) - fp
    tpr = tp / len(support) if support else None
    fpr = fp / len(nulls) if nulls else None
    acr = (tp + tn) / p
    mse = float(np.sum((beta_hat - scenario.beta_true) ** 2)) / p
    return Metrics(tpr=tpr, fpr=fpr, acr=acr, mse=mse)


@dataclass(frozen=True)
class StudyResult:
    scenario: SimScenario
    per_replicate: tuple   # (replicate index, Metrics, selected indices, chosen t0)
    aggregate: dict        # metric name -> (mean, standard error or None)
    n_failed: int


def _aggregate(values):
    vals = [v for v in values if v is not None]
    if not vals:
        return None, None
    mean = float(np.mean(vals))
    if len(vals) < 2:
        return mean, None
    return mean, float(np.std(vals, ddof=1) / np.sqrt(len(vals)))


def _run_replicate(scenario, r, t0, t1, em_config, sel_base, tune_grid):
    data_rng = child_rng(scenario.seed, 7, r)
    X = gen_covariates(scenario, data_rng)
    errors = gen_errors(scenario, data_rng)
    y = gen_response(X, errors, scenario.beta0_true, scenario.beta_true)
    data = Dataset(X, y)
    chosen_t0 = float(t0)
    if tune_grid is not None:
        grid = replace(tune_grid, seed=derived_seed(scenario.seed, 11, r))
        hyper_base = Hyperparams.for_dimension(scenario.p, t0, t1)
        chosen_t0 = cv_tune_t0(data, grid, hyper_base, em_config).chosen_t0
    hyper = Hyperparams.for_dimension(scenario.p, chosen_t0, t1)
    sel = replace(sel_base, master_seed=derived_seed(scenario.seed, 13, r))
    result = tdvs_select(data, hyper, em_config, sel, threads=1)
    metrics = compute_metrics(result.selected_indices,
                              result.fit.params.beta, scenario)
    return metrics, result.selected_indices, chosen_t0


def run_study(scenario, t0=10.0, t1=1.0, em_config=None, sel_config=None,
              tune_grid=None, threads=1):
    """Run the selection pipeline on independent replicates and aggregate.

    Each replicate draws its data and its permutation streams from seeds
    derived from (scenario seed, replicate index), so the aggregate is
    identical for any thread count.  Failed replicates are excluded from
    the aggregate and counted.
    """
    em_config = em_config or EMConfig()
    sel_config = sel_config or SelectionConfig()

    def job(r):
        try:
            return r, _run_replicate(scenario, r, t0, t1, em_config,
                                     sel_config, tune_grid)
        except FitError:
            return r, None

    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            outcomes = list(pool.map(job, range(scenario.replicates)))
    else:
        outcomes = [job(r) for r in range(scenario.replicates)]

    per_replicate = []
    n_failed = 0
    for r, out in outcomes:
        if out is None:
            n_failed += 1
            continue
        metrics, selected, chosen_t0 = out
        per_replicate.append((r, metrics, tuple(selected), chosen_t0))
    aggregate = {}
    for name in ("tpr", "fpr", "acr", "mse"):
        mean, se = _aggregate([getattr(m, name) for _, m, _, _ in per_replicate])
        aggregate[name] = (mean, se)
    return StudyResult(scenario=scenario, per_replicate=tuple(per_replicate),
                       aggregate=aggregate, n_failed=n_failed)


def _paper_beta(p):
    beta = np.zeros(p)
    beta[0] = 2.0
    beta[2] = 1.0
    return beta


_ERROR_SPECS = {
    "mixhat": MixHatErrors(nu=3.0, gamma=2.0),
    "gaussian": GaussianErrors(variance=3.0),
    "mixture": GaussianMixtureErrors(weights=(0.8, 0.2), means=(0.0, 5.0),
                                     variances=(3.0, 7.0)),
}


def scenario_preset(name, replicates=50, seed=0):
    """Named study designs: table{1,2,3}-{mixhat,gaussian,mixture}.

    Table 1: p=8, n=100, independent covariates.  Table 2: the same with
    pairwise-correlated covariate blocks.  Table 3: p=80, n=30.
    """
    try:
        table, error_name = name.split("-", 1)
        error_spec = _ERROR_SPECS[error_name]
        layout = {"table1": (100, 8, "independent"),
                  "table2": (100, 8, "block"),
                  "table3": (30, 80, "independent")}[table]
    except (ValueError, KeyError):
        raise ValueError(f"unknown scenario preset {name!r}") from None
    n, p, cov = layout
    return SimScenario(n=n, p=p, beta_true=_paper_beta(p),
                       error_spec=error_spec, beta0_true=2.0,
                       covariate_spec=cov, replicates=replicates, seed=seed)
