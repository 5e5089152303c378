"""Safe-supervised neuro-evolution of an inverted-pendulum balancing controller."""

from .ga import GaConfig, run_optimization
from .neuro import MlpParams, decode_genome, encode_params
from .plant import Plant, PlantParams, SensorParams, SimConfig, State
from .safe import SafeGain, design_gain, linearize
from .supervisor import FitnessWeights, HypercubeLimits, TandemEvaluator

__all__ = [
    "FitnessWeights", "GaConfig", "HypercubeLimits", "MlpParams", "Plant", "PlantParams",
    "SafeGain", "SensorParams", "SimConfig", "State", "TandemEvaluator", "decode_genome",
    "design_gain", "encode_params", "linearize", "run_optimization",
]
__version__ = "0.1.0"
