"""Sentence-level process-reward verification for generated clinical reports."""

__version__ = "0.1.0"
