"""Acoustic TB triage pipeline: cough audio in, TB-positive probability out."""

__version__ = "0.1.0"
