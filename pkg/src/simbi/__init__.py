"""Simulation-based inference with neural posterior, likelihood and ratio estimation."""
