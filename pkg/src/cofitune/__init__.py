"""Selective fine-tuning lab: coarse layer/module search plus soft-masked gradients
on a small Llama-style decoder, with the usual forgetting baselines and metrics."""

__version__ = "0.1.0"
