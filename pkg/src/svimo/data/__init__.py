"""Synthetic interaction samples, prompt vocabulary and dataset I/O."""
