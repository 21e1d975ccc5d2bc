"""Learn-to-configure pipeline for network slicing: simulator calibration,
offline constrained Bayesian optimization, and safe online learning."""

__version__ = "0.1.0"
