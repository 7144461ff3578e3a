"""
CVID: Conditional Variational Image Deraining

A desk-scale toolkit for channel-wise conditional variational deraining:
synthetic rain generation, training, Monte-Carlo inference and evaluation.

License: MIT
"""

__version__ = "0.3.0"
__license__ = "MIT"
