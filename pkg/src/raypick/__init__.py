"""raypick: desk-scale 2.5D mobile pick-and-place with hierarchical control,
staged policy growth, and visuomotor distillation through a
segmentation+depth bottleneck."""

__version__ = "0.1.0"
