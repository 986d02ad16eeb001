"""Dimensioning of a probe-train reflector's out-queue (M/G/1 with bounded service)."""

__version__ = "0.1.0"
