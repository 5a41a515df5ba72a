"""Augmentation-free self-supervised learning with frame projections."""

__version__ = "0.1.0"
