"""Training-free semantic addition and removal by composing diffusion noise predictions."""

__version__ = "0.1.0"
