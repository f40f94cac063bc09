"""Behavioral simulator for an SRAM compute-in-memory macro with a nonlinear
in-memory ramp converter, and an LSTM mapped onto it."""

__version__ = "0.1.0"
