"""Sampled limited-memory training of separable networks.

The final linear layer is fit by a limited-memory sampled Tikhonov solver
with sGCV-selected regularization; the ResNet feature extractor is trained
by SGD or ADAM.
"""
__version__ = "0.1.0"
