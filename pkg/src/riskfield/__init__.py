"""Risk-field driver modeling toolkit.

Models a driver's control choices as a softmax policy over an additive
risk field, fits the field's weights from driving logs by concave
maximum likelihood, and evaluates the fitted model on trajectory
prediction and behavior-characterization tasks.
"""

__version__ = "0.1.0"

from .course import ArcCoordinate, Course
from .data import DriverLog, Segment
from .dynamics import Control, IntegratorConfig, VehicleState
from .errors import FormatError, ValidationError
from .evaluation import DeviationReport, Ensemble
from .mle import Dataset, FitConfig, FittedModel
from .policy import ActionDistribution, ControlGrid, SamplerConfig, Trajectory
from .riskmodel import RiskParams

__all__ = [
    "ArcCoordinate",
    "ActionDistribution",
    "Control",
    "ControlGrid",
    "Course",
    "Dataset",
    "DeviationReport",
    "DriverLog",
    "Ensemble",
    "FitConfig",
    "FittedModel",
    "FormatError",
    "IntegratorConfig",
    "RiskParams",
    "SamplerConfig",
    "Segment",
    "Trajectory",
    "ValidationError",
    "VehicleState",
    "__version__",
]
