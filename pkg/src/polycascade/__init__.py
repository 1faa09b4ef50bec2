"""Cascade property prediction for polymers: GCN feature transfer into tree ensembles."""

__version__ = "0.1.0"
