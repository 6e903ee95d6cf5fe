"""Dense linear algebra kernel: rank screening, tolerance-aware solves and
ordered cross products.

All routines work on small parameter-dimension matrices or on tall design
matrices reduced to parameter dimension; nothing here is iterative.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .errors import SingularMatrixError

#: default relative tolerance for collinearity screening
DEFAULT_RANK_TOL = np.finfo(float).eps ** (2.0 / 3.0)

_CHUNK_ROWS = 4096


@dataclass(frozen=True)
class RankReport:
    """Outcome of a rank-revealing factorization.

    Attributes
    ----------
    rank : int
        Number of kept columns.
    kept_columns : list of int
        Column indices retained, in original order.
    dropped_columns : list of int
        Column indices judged collinear with earlier columns.
    pivot_magnitudes : list of float
        ``|R_kk|`` for every column (original order) after scaling the column
        to unit norm; zero columns report 0.
    """

    rank: int
    kept_columns: list[int]
    dropped_columns: list[int]
    pivot_magnitudes: list[float] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "rank": self.rank,
            "kept_columns": list(self.kept_columns),
            "dropped_columns": list(self.dropped_columns),
            "pivot_magnitudes": list(self.pivot_magnitudes),
        }


def pivoted_rank(m, rel_tol: float = DEFAULT_RANK_TOL) -> RankReport:
    """Detect collinear columns of ``m`` with a limited-pivoting Householder QR.

    Columns are processed left to right. A column whose residual norm, after
    projecting out the previously kept columns, is at most
    ``rel_tol * max pivot`` is moved to the dropped set; otherwise it is kept.
    Ties therefore always favour the earlier column. Columns are scaled to unit
    norm first, so the decision does not depend on units of measurement.
    """
    a = np.array(m, dtype=float, copy=True)
    if a.ndim != 2:
        raise ValueError("pivoted_rank expects a 2-D matrix")
    if not np.all(np.isfinite(a)):
        raise ValueError("matrix contains non-finite entries")
    if rel_tol < 0:
        raise ValueError("rel_tol must be nonnegative")
    n_rows, n_cols = a.shape
    norms = np.sqrt(np.einsum("ij,ij->j", a, a))
    nonzero = norms > 0
    a[:, nonzero] /= norms[nonzero]

    pivots = np.zeros(n_cols)
    reflectors: list[np.ndarray] = []
    kept: list[int] = []
    dropped: list[int] = []
    for j in range(n_cols):
        if not nonzero[j]:
            dropped.append(j)
            continue
        col = a[:, j].copy()
        for k, v in enumerate(reflectors):
            col[k:] -= 2.0 * v * (v @ col[k:])
        r = len(reflectors)
        tail = col[r:]
        pivot = float(np.sqrt(tail @ tail)) if r < n_rows else 0.0
        pivots[j] = pivot
        # pivots are <= 1 after normalization; the first nonzero column is 1
        largest = max(1.0, float(pivots.max()))
        if r >= n_rows or pivot <= rel_tol * largest:
            dropped.append(j)
            continue
        v = tail.copy()
        v[0] += np.copysign(pivot, v[0]) if v[0] != 0 else pivot
        v /= np.sqrt(v @ v)
        reflectors.append(v)
        kept.append(j)
    return RankReport(
        rank=len(kept),
        kept_columns=kept,
        dropped_columns=dropped,
        pivot_magnitudes=[float(p) for p in pivots],
    )


def solve_spd(a, b, zero_tol: float = 0.0) -> np.ndarray:
    """Solve ``a @ x = b`` by LU factorization with partial pivoting.

    Works for any nonsingular square ``a``; symmetric positive definite input
    is the common case but not required. A pivot ``|U_kk|`` is treated as zero
    when ``|U_kk| <= zero_tol * max_j |U_jj|``. With ``zero_tol = 0`` only
    exactly-zero pivots are rejected.

    Raises
    ------
    SingularMatrixError
        If a pivot is zero at the given tolerance; ``err.pivot`` holds the
        0-based column index.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"solve_spd needs a square matrix, got {a.shape}")
    if b.shape[0] != a.shape[0]:
        raise ValueError(f"right-hand side has {b.shape[0]} rows, expected {a.shape[0]}")
    if zero_tol < 0:
        raise ValueError("zero_tol must be nonnegative")
    if a.shape[0] == 0:
        return np.zeros_like(b)
    with np.errstate(all="ignore"), warnings.catch_warnings():
        # exactly singular factors are reported below with the pivot index
        warnings.simplefilter("ignore", scipy.linalg.LinAlgWarning)
        lu, piv = scipy.linalg.lu_factor(a, check_finite=True)
    diag = np.abs(np.diag(lu))
    threshold = zero_tol * diag.max()
    bad = np.flatnonzero(diag <= threshold)
    if bad.size:
        k = int(bad[0])
        raise SingularMatrixError(
            f"matrix is singular at pivot {k + 1} (|U_kk| = {diag[k]:.3g}, "
            f"tolerance {threshold:.3g})",
            pivot=k,
        )
    return scipy.linalg.lu_solve((lu, piv), b, check_finite=False)


def scaled_lstsq(a, b) -> np.ndarray:
    """Least squares on unit-norm columns, mapped back to the original scale.

    Plain ``lstsq`` truncates singular values relative to the largest one, so
    a legitimately tiny column would be zeroed out. Columns are assumed to
    have passed :func:`pivoted_rank` already.
    """
    a = np.asarray(a, dtype=float)
    norms = np.linalg.norm(a, axis=0)
    norms[norms == 0] = 1.0
    coef = np.linalg.lstsq(a / norms, b, rcond=None)[0]
    return (coef.T / norms).T


def ordered_cross(a, b, weights=None) -> np.ndarray:
    """Return ``a.T @ diag(weights) @ b`` summed row by row in fixed order.

    Every output entry is accumulated over rows in the same sequence no matter
    how many columns ``a`` and ``b`` have, so block-wise and whole-matrix builds
    agree bit for bit. Slower than BLAS; use only where reproducibility of
    individual entries matters.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape[0] != b.shape[0]:
        raise ValueError("row counts differ")
    if weights is not None:
        weights = np.asarray(weights, dtype=float)
    out = np.zeros((a.shape[1], b.shape[1]))
    for start in range(0, a.shape[0], _CHUNK_ROWS):
        stop = start + _CHUNK_ROWS
        ac = a[start:stop]
        if weights is not None:
            ac = ac * weights[start:stop, None]
        out += (ac[:, :, None] * b[start:stop, None, :]).sum(axis=0)
    return out

