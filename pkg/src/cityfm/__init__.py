"""Self-supervised multimodal pre-training on OpenStreetMap-style entities."""

__version__ = "0.1.0"
