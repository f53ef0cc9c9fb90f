"""Unconditional mel-spectrogram generation with a hierarchical equilibrium
GAN, plus a clustering-based diversity evaluation harness."""

__version__ = "0.1.0"
