"""Noise schedule, forward diffusion and posterior steps."""
