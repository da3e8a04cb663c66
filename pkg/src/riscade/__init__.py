"""riscade: RIS cascaded-channel simulation and learned denoising estimators."""

__version__ = "0.1.0"
