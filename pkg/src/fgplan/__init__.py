"""Constraint-driven floorplan layout inference with a factor-graph neural network."""

__version__ = "0.1.0"
