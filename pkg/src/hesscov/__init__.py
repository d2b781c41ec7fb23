"""Covariance of equality-constrained MAP and maximum likelihood estimates
from the inverse bordered Lagrangian Hessian."""

__version__ = '0.1.0'
