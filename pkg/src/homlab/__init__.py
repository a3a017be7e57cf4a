"""Numerical lab for homogenization of lower-order coefficient
perturbations: cell criteria, multiplier norms, resolvent convergence,
and truncated perturbation series, on 1D finite elements with
mesh-independent metric norms.
"""

__version__ = "0.1.0"
