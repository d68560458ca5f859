"""Non-Markovian excitation transfer: secular master equation and quantum jump ensembles."""

__all__ = ["model", "bath", "tcl", "nmqj", "scenarios", "cli"]
__version__ = "0.1.0"
