"""
Latent Gate Anomaly-Detection Engine.

Reconstruction-based anomaly detection with convolutional autoencoders,
built on a small float64 reverse-mode differentiation core. Ships the
latent-dimension sweep, the baseline comparison (VAE, MemAE, CeAE), exact
information-theoretic checks of the optimal-autoencoder conditions, the
bottleneck identity-mapping analysis, and a synthetic phantom dataset
generator with controllable intrinsic dimension.
"""

__version__ = "0.1.0"
