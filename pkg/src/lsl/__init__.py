"""Statistics of activation length scales in randomly initialized ReLU networks."""

from lsl.dists import DistributionSpec, InitScheme, MomentSet, moments, parse_scheme, resolve_layer
from lsl.netgen import ConvArch, ConvLayer, FCArch, NetInstance, ResidualArch, fan_in, sample_net
from lsl.forward import InputSpec, LengthTrace, empirical_variance, forward
from lsl.mc import EnsembleStats, TrialPlan, conditional_step_stats, merge, run_ensemble

__all__ = [
    "ConvArch",
    "ConvLayer",
    "DistributionSpec",
    "EnsembleStats",
    "FCArch",
    "InitScheme",
    "InputSpec",
    "LengthTrace",
    "MomentSet",
    "NetInstance",
    "ResidualArch",
    "TrialPlan",
    "conditional_step_stats",
    "empirical_variance",
    "fan_in",
    "forward",
    "merge",
    "moments",
    "parse_scheme",
    "resolve_layer",
    "run_ensemble",
    "sample_net",
]

__version__ = "0.1.0"
