"""Deterministic simulator for BFT geo-replication with loosely coupled
agreement and execution replica groups connected by flow-controlled
inter-regional message channels."""

__version__ = "0.1.0"
