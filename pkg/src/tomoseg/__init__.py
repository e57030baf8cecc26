"""Particle segmentation, cross-section shape analysis and attenuation
calibration for volumetric grayscale scans, validated on synthetic
ground-truth phantoms."""

__version__ = "0.1.0"
