"""Cross-domain feature fusion transformer GAN for exemplar-based image translation."""

__version__ = "0.1.0"
