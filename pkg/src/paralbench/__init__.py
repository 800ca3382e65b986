"""Benchmark harness for paralinguistic probing of acoustic encoders."""

__version__ = "0.1.0"
