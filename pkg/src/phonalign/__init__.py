"""Phonetic embedding alignment for low-resource word recognition."""
__version__ = "0.1.0"
