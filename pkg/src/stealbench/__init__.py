"""Model-stealing attacks and deceptive-perturbation defenses on a numpy engine."""

__version__ = "0.1.0"
