"""Strict cold-start recommendation from item-attribute graphs with multi-task pre-training."""

__version__ = "0.1.0"
