"""Spectral-submanifold reduction of forced mechanical systems with internal resonance."""
