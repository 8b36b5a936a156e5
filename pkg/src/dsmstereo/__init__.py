"""Stereo matchability toolkit: probability-volume disparity regression,
entropy matchability, attenuated joint loss and matchability-aware refinement."""

__version__ = "0.1.0"
