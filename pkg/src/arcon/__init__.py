"""Desk-scale AR remote controller: registry, recognizer, pairing network, hub."""

__version__ = "0.1.0"
