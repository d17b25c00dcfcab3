"""Jointly optimised beta-VAE pipeline for ECG feature extraction and LVF prediction."""

__version__ = "0.1.0"
