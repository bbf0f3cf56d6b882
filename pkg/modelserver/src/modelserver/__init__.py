"""Thin HTTP service exposing a detector + box-prompted segmenter pair."""

__version__ = "0.1.0"
