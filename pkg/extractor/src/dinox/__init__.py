"""ViT-S/8 feature exporter for volume segmentation pipelines."""

__version__ = "0.1.0"
