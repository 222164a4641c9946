"""vfm-export: offline CLIP / DINOv2 feature extraction to VFMT tensors."""

from .backbones import ExportError
from .export import ExportJob, export_features

__version__ = "0.1.0"
