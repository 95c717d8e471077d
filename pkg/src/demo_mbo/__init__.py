"""Offline model-based optimisation by design editing with a pseudo-target diffusion model."""

from .diffusion import GuidanceConfig, NoiseSchedule, ScoreNetwork
from .editing import EditConfig
from .numeric_core import MlpParams, RngStream
from .pipeline import PipelineConfig, Runner
from .surrogate import SurrogateConfig
from .tasks import Dataset, TaskSpec, make_task

__version__ = "0.1.0"
