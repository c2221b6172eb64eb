"""Pluggable entity lookup tables for small masked language models."""

__version__ = "0.1.0"
