"""Desk-scale simulator and optimizer for a low-latency UAV uplink/downlink:
urban environment synthesis, learned per-antenna channel coefficients, and
joint transmit-power control via semidefinite relaxation."""

__version__ = "0.1.0"
