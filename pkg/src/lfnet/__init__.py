"""Differentiable few-shot light-field rendering on numpy."""
