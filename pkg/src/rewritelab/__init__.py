"""Controlled symbolic tasks for studying instruction-following generalization."""

__version__ = "0.1.0"
