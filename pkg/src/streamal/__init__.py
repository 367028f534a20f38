"""Stream-based active learning with per-class Bayesian binary heads."""

from .active import AcquisitionConfig, FilterState, filter_update, select_indices, should_query
from .belief import GaussianBelief, isotropic_belief, load_belief, save_belief
from .datagen import ScenarioConfig, drifting_scenario, generate_scenario, load_stream, save_stream
from .heads import MultiHeadClassifier, NoTrainedHeadsError
from .laplace import assemble_posterior, likelihood_curvature, predictive, sample_params
from .mlp import MLPArch, OptConfig, default_arch, train_map
from .pacbayes import BoundConfig, mcallester_bound, optimize_hyperparams

__version__ = "0.1.0"

__all__ = [
    "AcquisitionConfig", "FilterState", "filter_update", "select_indices", "should_query",
    "GaussianBelief", "isotropic_belief", "load_belief", "save_belief",
    "ScenarioConfig", "drifting_scenario", "generate_scenario", "load_stream", "save_stream",
    "MultiHeadClassifier", "NoTrainedHeadsError",
    "assemble_posterior", "likelihood_curvature", "predictive", "sample_params",
    "MLPArch", "OptConfig", "default_arch", "train_map",
    "BoundConfig", "mcallester_bound", "optimize_hyperparams",
]
