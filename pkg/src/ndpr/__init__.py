"""Dropped pronoun recovery with structured sentence/word attention."""

__version__ = "0.1.0"
