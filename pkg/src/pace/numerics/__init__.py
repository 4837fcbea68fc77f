"""Numerical substrate: validated linear algebra, autodiff, seed streams."""

from . import autodiff
from .linalg import ensure_matrix, matmul, solve_spd, sym_eig
from .rng import stream, tag_hash

__all__ = [
    "autodiff",
    "ensure_matrix",
    "matmul",
    "solve_spd",
    "sym_eig",
    "stream",
    "tag_hash",
]
