"""Deterministic generator of synthetic version histories for variant-rich
software systems, with ground-truth meta-data (feature locations, clone
traces, replayable operation records)."""

__version__ = "0.1.0"
