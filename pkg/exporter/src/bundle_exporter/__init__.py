"""Bundle exporter: CNN capture to tensor-bundle directories."""

from .errors import ExportError, UnsupportedLayerError
from .export import ExportConfig, available_models, export_baseline_scores, export_bundle
from .models import calibration_source
from .trace import trace_model

__all__ = [
    "ExportConfig",
    "ExportError",
    "UnsupportedLayerError",
    "available_models",
    "calibration_source",
    "export_baseline_scores",
    "export_bundle",
    "trace_model",
]
