"""Backward stochastic difference equations on random-walk lattices for Lévy-driven BSDEs."""

__version__ = "0.1.0"
