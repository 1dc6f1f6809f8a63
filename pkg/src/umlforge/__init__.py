"""Synthetic PlantUML diagram corpora and diagram-to-code evaluation."""

__version__ = "0.1.0"
