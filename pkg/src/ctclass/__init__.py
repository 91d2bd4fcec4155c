"""Critical-transition classification toolkit.

Simulates a bistable stochastic oscillator whose parameter regimes
produce drift-induced, noise-induced, and mixed transitions between a
low-amplitude and a high-amplitude state; detects such transitions in
any uniformly sampled series with a two-threshold relay; extracts
rolling-window features around each transition; and classifies the
transition mechanism with a linear max-margin model trained on
simulated examples.
"""

__version__ = "0.1.0"

from .classifier import CTType, SvmModel
from .detector import Annotations, DetectorParams, EventLog, detect
from .features import FeatureTrack, SvmType, WindowConfig, feature_track
from .model import ModelParams, ParameterPath, SimConfig, Trajectory, simulate
from .pipeline import Recording, SelectionCriteria, generate_corpus

__all__ = [
    "__version__",
    "CTType",
    "SvmModel",
    "Annotations",
    "DetectorParams",
    "EventLog",
    "detect",
    "FeatureTrack",
    "SvmType",
    "WindowConfig",
    "feature_track",
    "ModelParams",
    "ParameterPath",
    "SimConfig",
    "Trajectory",
    "simulate",
    "Recording",
    "SelectionCriteria",
    "generate_corpus",
]
