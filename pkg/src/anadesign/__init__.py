"""Specification-driven analog circuit design at desk scale."""

__version__ = "0.1.0"
