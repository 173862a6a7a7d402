"""Linear-path diffusion vocoder with a numpy autodiff core."""

__version__ = "0.1.0"
