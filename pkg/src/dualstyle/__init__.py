"""Multi-attribute image-to-image translation with label- and
reference-based style codes sharing one SPADE-conditioned generator."""

from .config import ExperimentConfig

__all__ = ["ExperimentConfig"]
__version__ = "0.1.0"
