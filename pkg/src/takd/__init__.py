"""Time-aware knowledge distillation for force estimation from insole pressure video."""

__version__ = "0.1.0"

from . import gradcheck, losses, metrics, models, optim, pipeline, synth, tensor, train

__all__ = ["gradcheck", "losses", "metrics", "models", "optim", "pipeline",
           "synth", "tensor", "train", "__version__"]
