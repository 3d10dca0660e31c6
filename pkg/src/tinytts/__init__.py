"""Tiny CPU-first non-autoregressive text-to-speech.

Phoneme-to-mel synthesis with a pyramid transformer encoder, parallel
pitch/energy/duration heads, a plain Griffin-Lim fallback vocoder, and a
built-in reverse-mode gradient tape for desk-scale training.
"""

__version__ = "0.1.0"

from .tensor import GradTape, Rng, Tensor

__all__ = ["GradTape", "Rng", "Tensor", "__version__"]
