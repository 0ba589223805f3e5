__version__ = '0.1.0'

from . import utils
from .crb import CrbModel, augment, crb_augmenter, crb_fit, crb_generate, residual_summary
from .discovery import (CiTestConfig, CiTestResult, LingamResult, direct_lingam, discovered_crb_augmenter,
                        discovered_dag, partial_correlation_test, pc, shd_curve, shuffle_augmenter)
from .gausstheory import (GaussianFit, LinearPredictor, MseGapResult, estimator_covariances, fit_constrained,
                          fit_unconstrained, markov_boundary_irrelevance_check, markov_boundary_predictor,
                          prediction_mse, read_gaussian_fit, regression_coefficients, run_mse_gap_experiment,
                          udu_decompose, write_gaussian_fit)
from .graph import (Cpdag, Dag, cpdag_to_dag, dag_to_cpdag, markov_boundary, random_er_dag, read_cpdag, read_dag,
                    shd, topological_sort, write_cpdag, write_dag)
from .harness import ExperimentConfig, RunReport, load_config, run_experiment
from .regress import FittedRegressor, RegressorSpec
from .scm import (Dataset, LinearScm, MechanismScm, NoiseSpec, chain_dag, confounded_dag, load_scm, make_chain_scm,
                  random_linear_scm, read_dataset, sample, save_scm, scm_population_covariance, unit_linear_scm,
                  write_dataset)
from .utils import CausalBootError, ConfigError, DataError, NumericError

__all__ = ["Dag", "Cpdag", "random_er_dag", "topological_sort", "markov_boundary", "dag_to_cpdag", "cpdag_to_dag",
           "shd", "read_dag", "read_cpdag", "write_dag", "write_cpdag",  #
           "Dataset", "NoiseSpec", "LinearScm", "MechanismScm", "sample", "scm_population_covariance", "chain_dag",
           "confounded_dag", "unit_linear_scm", "random_linear_scm", "make_chain_scm", "save_scm", "load_scm",
           "read_dataset", "write_dataset",  #
           "RegressorSpec", "FittedRegressor",  #
           "CrbModel", "crb_fit", "crb_generate", "augment", "crb_augmenter", "residual_summary",  #
           "GaussianFit", "LinearPredictor", "MseGapResult", "fit_unconstrained", "fit_constrained", "udu_decompose",
           "regression_coefficients", "prediction_mse", "markov_boundary_predictor", "run_mse_gap_experiment",
           "markov_boundary_irrelevance_check", "estimator_covariances", "read_gaussian_fit", "write_gaussian_fit",  #
           "CiTestConfig", "CiTestResult", "LingamResult", "partial_correlation_test", "pc", "direct_lingam",
           "shd_curve", "shuffle_augmenter", "discovered_crb_augmenter", "discovered_dag",  #
           "ExperimentConfig", "RunReport", "load_config", "run_experiment",  #
           "CausalBootError", "ConfigError", "DataError", "NumericError", "utils"]
