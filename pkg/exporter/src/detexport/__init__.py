"""Detection dump exporter for torchvision one-stage detectors."""

__version__ = "0.1.0"

from .adapters import UnsupportedArchitectureError, supported_models
from .export import ExportConfig, export
from .formats import head_digest, read_ground_truth_images, write_detections, write_head
