"""higgsflow - Donaldson heat flow on Higgs bundles over lattice tori."""

__version__ = "0.1.0"
