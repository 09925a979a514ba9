"""Adaptive random projection tree regression."""

from .baselines import dyadic_partition, kd_partition
from .data import Dataset, load_dataset, save_dataset
from .geometry import (CellData, InvalidInput, approx_diameter, avg_data_diameter, data_diameter,
                       doubling_estimate)
from .regress import (AUTOSTOP, CV, AlphaParams, ConfigurationError, adaptive_rptree, alpha,
                      decrease_rate, empirical_risk, fit_cell_means, select_autostop, select_cv)
from .rptree import (CoreFailure, RngStream, basic_rptree, core_rptree, per_cell_median_split,
                     sample_direction, sample_noise_offset)
from .synth import (FunctionSpec, GeneratorSpec, NoiseSpec, RegressionProblem, gen_regression,
                    gen_sparse_star, gen_sphere_manifold, gen_subspace, oracle_excess_risk)

__version__ = "0.1.0"
