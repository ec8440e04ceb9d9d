"""Dual-process audit toolkit for LLM admission decisions."""

__version__ = "0.1.0"
