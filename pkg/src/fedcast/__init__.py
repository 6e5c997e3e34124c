"""Federated 5G throughput forecasting with a live-streaming QoE stage."""

__version__ = "0.1.0"
