"""Convolutional surrogates for the parametric 2D Poisson equation.

Three training paradigms share one UNet and one hard boundary treatment:
supervised regression on solver labels (``cnn``), the mean-squared
finite-difference residual (``cpinn``) and the quadrature-discretised
Dirichlet energy (``dcrm``).
"""

__version__ = "0.1.0"
