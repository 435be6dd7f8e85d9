"""Massive MU-MIMO-OFDM uplink with low-resolution ADCs: quantized channel estimation and detection."""

__version__ = "0.1.0"
