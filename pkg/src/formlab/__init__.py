"""Numerical laboratory for Schrodinger forms with measure perturbations.

Subpackages are imported lazily by the user; the top level re-exports the
most common entry points.
"""
from formlab.forms import Grid1D, DiscreteForm, assemble_schrodinger_form
from formlab.kernels import BACKEND
from formlab import measures

__all__ = ["Grid1D", "DiscreteForm", "assemble_schrodinger_form", "BACKEND", "measures"]
__version__ = "0.1.0"
