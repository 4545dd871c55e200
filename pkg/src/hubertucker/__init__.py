"""Robust low-rank order-3 tensor regression under heavy-tailed noise.

The estimator truncates responses for a moment-based spectral initializer,
then runs regularized gradient descent on an adaptive Huber empirical loss
over a Tucker factorization.  A Monte Carlo harness and diagnostic checks
make the error-rate scaling and the curvature/concentration behavior of the
procedure observable at desk scale.
"""

from .huber import (HuberParams, empirical_loss, factor_gradients, huber_psi,
                    huber_value, objective)
from .optimizer import (FitResult, GDConfig, default_tuning,
                        degrees_of_freedom, estimation_error, fit)
from .robust_init import (RankSelectConfig, hosvd, init_factors,
                          robust_moment_tensor, select_rank,
                          select_rank_history, truncate)
from .samples import SampleSet
from .simulation import (ERROR_TABLE_COLUMNS, ErrorTable, EstimatorConfig,
                         NoiseModel, SyntheticSpec, contaminate_responses,
                         derive_dataset_seed, derive_rng, gen_dataset,
                         gen_design, gen_noise, gen_target, monte_carlo)
from .tensor_core import (SpectrumSummary, TuckerFactors, fold, fro_norm,
                          inner, mode_product, spectrum_summary,
                          top_left_singular, tucker_reconstruct, unfold)

__version__ = "0.1.0"

__all__ = [
    "ERROR_TABLE_COLUMNS", "ErrorTable", "EstimatorConfig", "FitResult",
    "GDConfig", "HuberParams", "NoiseModel", "RankSelectConfig", "SampleSet",
    "SpectrumSummary", "SyntheticSpec", "TuckerFactors",
    "contaminate_responses", "default_tuning", "degrees_of_freedom",
    "derive_dataset_seed", "derive_rng", "empirical_loss", "estimation_error",
    "factor_gradients", "fit", "fold", "fro_norm", "gen_dataset",
    "gen_design", "gen_noise", "gen_target", "hosvd", "huber_psi",
    "huber_value", "init_factors", "inner", "mode_product", "monte_carlo",
    "objective", "robust_moment_tensor", "select_rank", "select_rank_history",
    "spectrum_summary", "top_left_singular", "truncate", "tucker_reconstruct",
    "unfold",
]
