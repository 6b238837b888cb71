"""Convolutional framelets: Hankel algebra, frame constructions and learned denoising for low-dose CT."""

__version__ = "0.1.0"
