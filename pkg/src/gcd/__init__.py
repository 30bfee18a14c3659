"""Generalized category discovery on feature vectors.

Semi-supervised k-means, Hungarian-matched clustering accuracy, class-count
estimation by Brent search, and contrastive losses with analytic gradients.
"""
__version__ = "0.1.0"
