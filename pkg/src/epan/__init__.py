"""Edge-guided dual-branch image deblurring in NumPy.

The package bundles a small reverse-mode autodiff core, a Canny edge
detector, the dual-branch deblurring network with its losses and trainer,
dataset builders, PSNR/SSIM evaluation, and the ``epan`` command line.
"""

__version__ = "0.1.0"

from .checkpoint import load_checkpoint, save_checkpoint
from .config import RunConfig, load_run_config
from .edges import CannyParams, canny
from .estimator import CannyEdgeDetector, EPANDeblurrer
from .exceptions import (
    CheckpointError,
    ConfigurationError,
    ContractError,
    DataError,
    DimensionError,
    EPANError,
    GeometryError,
    ParameterError,
    TrainingDivergedError,
)
from .inference import deblur
from .losses import LossWeights, cdn_loss, edge_guided_loss, een_loss, mse_loss, total_loss
from .metrics import EvalReport, SsimParams, evaluate, psnr, ssim
from .model import VARIANTS, FusionMode, ModelConfig, Network, build_model
from .trainer import TrainConfig, Trainer, lr_at

__all__ = [
    "VARIANTS", "CannyEdgeDetector", "CannyParams", "CheckpointError", "ConfigurationError", "ContractError",
    "DataError", "DimensionError", "EPANDeblurrer", "EPANError", "EvalReport", "FusionMode", "GeometryError",
    "LossWeights", "ModelConfig", "Network", "ParameterError", "RunConfig", "SsimParams", "TrainConfig",
    "Trainer", "TrainingDivergedError", "build_model", "canny", "cdn_loss", "deblur", "edge_guided_loss",
    "een_loss", "evaluate", "load_checkpoint", "load_run_config", "lr_at", "mse_loss", "psnr", "save_checkpoint",
    "ssim", "total_loss", "__version__",
]
