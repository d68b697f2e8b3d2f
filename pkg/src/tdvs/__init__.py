"""Testing-driven variable selection for Bayesian modal regression.

Fits a linear model for the conditional mode of the response under a
two-piece half-t mixture error law, with spike-and-slab Laplace priors
estimated by EM, and selects covariates by permutation tests on a
change-in-slope statistic.
"""

__version__ = "0.1.0"

from .mixhat import (MixHatParams, mixhat_d1, mixhat_d2, mixhat_logpdf,
                     mixhat_pdf, mixhat_sample, student_t_logpdf)
from .model import (Dataset, Hyperparams, IndicatorVector, RegressionParams,
                    log_likelihood, log_marginal_posterior,
                    log_prior_complete, residuals)
from .em import (EMConfig, FitError, FitResult, e_step_inclusion_prob,
                 compute_q_objective, default_init, fit, m_step_beta,
                 update_beta0, update_gamma, update_nu, update_theta)
from .cis import (CiSResult, SelectionConfig, SelectionResult, cis_statistic,
                  cis_group_statistic, permutation_pvalue, prescreen_groups,
                  prescreen_individuals, tdvs_select)
from .tuning import TuningGrid, TuningResult, cv_tune_t0, predict_point
from .simulation import (GaussianErrors, GaussianMixtureErrors, Metrics,
                         MixHatErrors, SimScenario, StudyResult,
                         compute_metrics, gen_covariates, gen_errors,
                         gen_response, run_study, scenario_preset)
