"""Semantic speech transmission: speech to tokens over a noisy channel, back
to text or to a reconstructed spectrum."""

__version__ = "0.1.0"
