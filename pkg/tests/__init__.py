"""Test package for latent-gate."""
