"""Discrete graph diffusion over DAG search spaces with reward-guided fine-tuning."""

__version__ = "0.1.0"
