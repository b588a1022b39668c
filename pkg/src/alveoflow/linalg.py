"""Sparse direct solves with singularity detection.

Thin contract around SuperLU: factor, solve, report the relative
residual, and raise ``NumericallySingular`` when a pivot collapses.  The
near-singular threshold is pivot < 1e-14 times the largest entry of the
original matrix, which reproduces the qualitative failure mode of
under-stabilised saddle systems without tuning to one backend.

One factor object serves one solve at a time; factorisation itself may
use whatever parallelism the backend provides.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

PIVOT_RTOL = 1e-14


class NumericallySingular(Exception):
    """The direct solver met a zero or near-zero pivot."""

    def __init__(self, message: str, pivot: float = 0.0):
        super().__init__(message)
        self.pivot = pivot


@dataclass(frozen=True)
class SolveReport:
    residual: float          # ||Ax - b|| / ||b||
    min_pivot: float
    max_entry: float


class SparseFactor:
    """LU factorisation of a square sparse matrix."""

    def __init__(self, A: sp.spmatrix):
        A = A.tocsc()
        if A.shape[0] != A.shape[1]:
            raise ValueError(f"matrix is not square: {A.shape}")
        self.shape = A.shape
        self.max_entry = float(np.abs(A.data).max()) if A.nnz else 0.0
        self._A = A.tocsr()
        try:
            self._lu = spla.splu(A)
        except RuntimeError as exc:   # "Factor is exactly singular"
            raise NumericallySingular(str(exc), pivot=0.0) from exc
        pivots = np.abs(self._lu.U.diagonal())
        self.min_pivot = float(pivots.min()) if len(pivots) else 0.0
        if self.min_pivot < PIVOT_RTOL * self.max_entry:
            raise NumericallySingular(
                f"near-zero pivot {self.min_pivot:.3e} "
                f"(threshold {PIVOT_RTOL * self.max_entry:.3e})",
                pivot=self.min_pivot)

    def solve(self, b: np.ndarray):
        b = np.asarray(b, dtype=float)
        x = self._lu.solve(b)
        nb = np.linalg.norm(b)
        res = np.linalg.norm(self._A @ x - b) / nb if nb > 0 else 0.0
        return x, SolveReport(float(res), self.min_pivot, self.max_entry)


def factor_solve(A: sp.spmatrix, b: np.ndarray):
    """Factor A and solve Ax = b; returns (x, SolveReport)."""
    return SparseFactor(A).solve(b)


def write_matrix_market(path, A: sp.spmatrix, comment: str = ""):
    """Dump a matrix in MatrixMarket coordinate text format."""
    from scipy.io import mmwrite

    mmwrite(str(path), A.tocoo(), comment=comment)
