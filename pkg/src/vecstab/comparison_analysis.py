"""Comparison-matrix analysis: structure tests, spectra, trajectories.

A comparison matrix here is a plain ``numpy.ndarray`` of shape (m, m).
The functions in this module classify it (Metzler structure, Gershgorin
dominance, level-weighted invariance), report its spectral abscissa,
and evaluate the induced linear comparison system r'(t) = A r(t).

Certification decisions rely only on the decentralized row tests;
eigenvalues are computed for reporting, never for admission.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.linalg import expm

__all__ = [
    "ComparisonMatrix",
    "LevelVector",
    "is_metzler",
    "gershgorin_hurwitz",
    "invariance_check",
    "spectral_abscissa",
    "max_row_sum",
    "comparison_trajectory",
    "comparison_report",
]

# An m-by-m real matrix; no intrinsic invariants, the predicates below
# classify it.
ComparisonMatrix = np.ndarray

SIGN_TOL = 1e-12


@dataclass(frozen=True)
class LevelVector:
    """Per-subsystem Lyapunov levels, each constrained to [0, 1]."""

    values: tuple[float, ...]

    def __init__(self, values: Sequence[float]) -> None:
        vals = tuple(float(v) for v in values)
        for i, v in enumerate(vals):
            if not np.isfinite(v) or v < 0.0 or v > 1.0:
                raise ValueError(f"level {i} is {v!r}, outside [0, 1]")
        object.__setattr__(self, "values", vals)

    def __len__(self) -> int:
        return len(self.values)

    def __getitem__(self, i: int) -> float:
        return self.values[i]

    def __array__(self, dtype=None, copy=None):
        return np.array(self.values, dtype=dtype or float)


def _as_square(A) -> np.ndarray:
    M = np.asarray(A, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {M.shape}")
    return M


def is_metzler(A, tol: float = SIGN_TOL) -> bool:
    """True when every off-diagonal entry is non-negative (within tol)."""
    M = _as_square(A)
    off = M - np.diag(np.diag(M))
    return bool(off.min() >= -tol)


def gershgorin_hurwitz(A) -> bool:
    """Strict row dominance with negative diagonals.

    True iff a_ii + sum_{j != i} |a_ij| < 0 for every row: all Gershgorin
    discs lie in the open left half plane.  Sufficient for Hurwitz
    stability, not necessary.
    """
    M = _as_square(A)
    radii = np.abs(M).sum(axis=1) - np.abs(np.diag(M))
    return bool(np.all(np.diag(M) + radii < 0.0))


def invariance_check(A, levels, tol: float = SIGN_TOL) -> bool:
    """Row-wise level condition: sum_j a_ij * gamma_j <= tol for every i.

    The levels weight the columns; this is the row form that makes each
    subsystem's own inequality verifiable from its row alone.
    """
    M = _as_square(A)
    g = np.asarray(levels, dtype=float)
    if g.shape != (M.shape[0],):
        raise ValueError(f"levels shape {g.shape} does not match matrix {M.shape}")
    return bool(np.all(M @ g <= tol))


def spectral_abscissa(A) -> float:
    """Largest real part over the eigenvalues."""
    M = _as_square(A)
    return float(np.linalg.eigvals(M).real.max())


def max_row_sum(A) -> float:
    M = _as_square(A)
    return float(M.sum(axis=1).max())


def comparison_trajectory(A, r0, times) -> np.ndarray:
    """Evaluate r(t) = exp(A t) r0 on the given time grid.

    Returns an array of shape (len(times), m).  Uniform grids advance by
    repeated multiplication with one matrix exponential; irregular grids
    fall back to one exponential per sample.
    """
    M = _as_square(A)
    r = np.asarray(r0, dtype=float).reshape(-1)
    if r.shape[0] != M.shape[0]:
        raise ValueError("initial vector does not match matrix dimension")
    t = np.asarray(times, dtype=float).reshape(-1)
    if t.size == 0:
        return np.zeros((0, M.shape[0]))
    out = np.empty((t.size, M.shape[0]))
    steps = np.diff(t)
    uniform = steps.size == 0 or np.allclose(steps, steps[0], rtol=1e-12, atol=1e-15)
    if uniform:
        out[0] = expm(M * t[0]) @ r if t[0] != 0.0 else r
        if steps.size:
            P = expm(M * steps[0])
            for k in range(1, t.size):
                out[k] = P @ out[k - 1]
    else:
        for k, tk in enumerate(t):
            out[k] = expm(M * tk) @ r
    return out


def comparison_report(A, levels) -> dict:
    """Summary dict for one comparison matrix and its level vector.

    Keys: row_sums, row_gamma_sums, abscissa, metzler, gershgorin,
    invariance, plus max_row_sum for the conservatism gap between the
    decentralized row test and the true spectrum.
    """
    M = _as_square(A)
    g = np.asarray(levels, dtype=float)
    row_sums = M.sum(axis=1)
    return {
        "row_sums": [float(s) for s in row_sums],
        "row_gamma_sums": [float(s) for s in M @ g],
        "abscissa": spectral_abscissa(M),
        "max_row_sum": float(row_sums.max()),
        "metzler": is_metzler(M),
        "gershgorin": gershgorin_hurwitz(M),
        "invariance": invariance_check(M, g),
    }
