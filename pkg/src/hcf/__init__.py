"""Learn and use a hyperparametric independent-cascade model of cascading
transmission-line failures."""
from .dcsim import CascadeTrace, FlowState, generate_dataset, run_cascade, solve_dc_flow
from .diffusion import celf_top_k, estimate_spread, exact_spread, simulate_cascades, simulate_ic
from .features import FeatureMatrix, FeatureSpec, build_pair_features, extract_line_features
from .grid_io import GridCase, parse_grid_case, serialize_grid_case, validate_balance
from .kernels import BACKEND
from .metrics import distribution_error, failure_distribution, probability_error, size_histogram
from .model import (
    HcfModel,
    ProbabilityMatrix,
    activation_probability,
    check_concavity,
    gradient,
    influence_probability,
    lipschitz_bound,
    log_likelihood,
    probability_matrix,
    sample_complexity_bound,
)
from .optimizer import OptimizerConfig, maximize_likelihood
from .samples import SampleSet, covering_probability, encode_cascades

__version__ = "0.1.0"
