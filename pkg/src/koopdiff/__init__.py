"""Dual-branch diffusion imitation policy with a Koopman latent constraint, built on a small autodiff core."""

__version__ = "0.1.0"
