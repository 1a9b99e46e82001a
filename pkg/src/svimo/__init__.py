"""Desk-scale synchronized video-motion diffusion for hand-object interaction."""
