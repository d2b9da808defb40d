"""Offline figure rendering for gradcomp experiment CSV outputs."""

__version__ = "0.1.0"
