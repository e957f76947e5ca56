"""Density-augmented diffusion dynamics on analytic Gaussian mixtures."""
