"""Interactive annotation-driven volume segmentation and transfer-function
design: feature-similarity queries, edge-aware bilateral refinement and
iso-surface rendering."""

__version__ = "0.1.0"
