"""Design of MSE-optimal threshold quantizers for estimating a hidden source.

A source S is observed through X; a quantizer of X with T thresholds is
chosen so that the MMSE estimate of S from the quantizer output is as
accurate as possible.
"""

from .dp import brute_force, dp_direct, dp_indirect_rate, dp_indirect_threshold, naive_two_step
from .estimators import ThresholdQuantizer, TypeQuantizer
from .exceptions import (
    BudgetExceededError,
    ConfigError,
    DegenerateModelError,
    NumericalError,
    TruncationError,
)
from .experiments import ExperimentConfig, compare_designers, load_config, run_experiment
from .lloyd import IterationTrace, lloyd_indirect, lloyd_max, solve_threshold
from .model import (
    DirectModel,
    Grid1D,
    JointModel,
    TransformedModel,
    build_gaussian_direct,
    build_mixture_model,
    build_uniform_direct,
    load_density_file,
    save_density_file,
    transform_to_u,
)
from .quantizer import (
    CellMap,
    Quantizer,
    centroids_for,
    check_boundary_condition,
    check_fine_cells,
    check_vq_conditions,
    evaluate_mse,
)
from .vector import (
    SymbolChannel,
    TypeVector,
    VectorQuantizerDesign,
    boundary_b1,
    design_vector_iterative,
    enumerate_types,
    evaluate_vector_mse,
    type_posterior,
)

__version__ = "0.1.0"
