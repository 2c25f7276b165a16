from .config import ExperimentConfig, PRESETS, resolve
from .report import MetricsReport, confidence_interval
from .checkpoint import load_checkpoint, save_checkpoint

__all__ = ["ExperimentConfig", "PRESETS", "resolve", "MetricsReport", "confidence_interval",
           "load_checkpoint", "save_checkpoint"]
