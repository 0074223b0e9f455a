"""Standard-form semidefinite programs and their solutions.

A problem holds symmetric PSD matrix blocks, free scalars, and
non-negative scalars, tied together by sparse linear equality rows and a
linear objective (minimization).  Decision entries are addressed by
tuples:

    ("psd", block, i, j)   entry (i, j), i <= j, of PSD block ``block``
    ("free", k)            k-th free scalar
    ("nonneg", k)          k-th non-negative scalar

A coefficient on an off-diagonal PSD entry multiplies the single
mathematical value ``X[i, j]`` (the matrix is symmetric; the entry is
not double counted).
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from typing import Iterator, Mapping

import numpy as np

__all__ = [
    "Entry",
    "SdpProblem",
    "SdpSettings",
    "SdpSolution",
    "SdpStructureError",
    "solve_sdp",
]

Entry = tuple

_ENV_BACKEND = "VECSTAB_SDP_BACKEND"
_DEFAULT_BACKEND = "cvxopt"

STATUS_OPTIMAL = "optimal"
STATUS_INFEASIBLE = "infeasible"
STATUS_UNBOUNDED = "unbounded"
STATUS_NUMERICAL = "numerical_failure"


class SdpStructureError(ValueError):
    """Raised for malformed problems (bad entries, unknown blocks, ...)."""


@dataclass
class SdpSettings:
    """Solver tolerances and backend selection."""

    feasibility_tol: float = 1e-8
    psd_tol: float = 1e-8
    gap_tol: float = 1e-8
    max_iters: int = 100
    backend: str | None = None
    verbose: bool = False

    def resolved_backend(self) -> str:
        if self.backend:
            return self.backend
        return os.environ.get(_ENV_BACKEND, _DEFAULT_BACKEND)


class SdpProblem:
    """Mutable builder for a standard-form SDP."""

    def __init__(self) -> None:
        self.psd_dims: list[int] = []
        self.n_free: int = 0
        self.n_nonneg: int = 0
        self.eq_rows: list[dict[Entry, float]] = []
        self.eq_rhs: list[float] = []
        self.objective: dict[Entry, float] = {}
        self.objective_offset: float = 0.0

    # -- construction helpers -------------------------------------------------

    def add_psd_block(self, dim: int) -> int:
        if dim < 1:
            raise SdpStructureError(f"PSD block dimension must be >= 1, got {dim}")
        self.psd_dims.append(int(dim))
        return len(self.psd_dims) - 1

    def add_free(self) -> int:
        self.n_free += 1
        return self.n_free - 1

    def add_nonneg(self) -> int:
        self.n_nonneg += 1
        return self.n_nonneg - 1

    def _check_entry(self, entry: Entry) -> Entry:
        kind = entry[0]
        if kind == "psd":
            _, b, i, j = entry
            if not (0 <= b < len(self.psd_dims)):
                raise SdpStructureError(f"unknown PSD block in {entry}")
            n = self.psd_dims[b]
            if not (0 <= i <= j < n):
                raise SdpStructureError(f"bad PSD entry {entry} for block dim {n}")
            return entry
        if kind == "free":
            if not (0 <= entry[1] < self.n_free):
                raise SdpStructureError(f"unknown free scalar in {entry}")
            return entry
        if kind == "nonneg":
            if not (0 <= entry[1] < self.n_nonneg):
                raise SdpStructureError(f"unknown non-negative scalar in {entry}")
            return entry
        raise SdpStructureError(f"unknown entry kind in {entry}")

    def add_equality(self, coeffs: Mapping[Entry, float], rhs: float) -> None:
        row = {self._check_entry(e): float(c) for e, c in coeffs.items() if c != 0.0}
        self.eq_rows.append(row)
        self.eq_rhs.append(float(rhs))

    def set_objective(self, coeffs: Mapping[Entry, float], offset: float = 0.0) -> None:
        self.objective = {
            self._check_entry(e): float(c) for e, c in coeffs.items() if c != 0.0
        }
        self.objective_offset = float(offset)

    # -- inspection ---------------------------------------------------------

    @property
    def n_rows(self) -> int:
        return len(self.eq_rows)

    def entries(self) -> Iterator[Entry]:
        for b, n in enumerate(self.psd_dims):
            for i in range(n):
                for j in range(i, n):
                    yield ("psd", b, i, j)
        for k in range(self.n_free):
            yield ("free", k)
        for k in range(self.n_nonneg):
            yield ("nonneg", k)

    def describe(self) -> str:
        return (
            f"SdpProblem(psd={self.psd_dims}, free={self.n_free}, "
            f"nonneg={self.n_nonneg}, rows={self.n_rows})"
        )


@dataclass
class SdpSolution:
    """Solver output in problem coordinates."""

    status: str
    psd: list[np.ndarray] = field(default_factory=list)
    free: np.ndarray = field(default_factory=lambda: np.zeros(0))
    nonneg: np.ndarray = field(default_factory=lambda: np.zeros(0))
    primal_objective: float | None = None
    dual_objective: float | None = None
    residuals: dict[str, float] = field(default_factory=dict)
    iterations: int = 0
    backend: str = ""
    message: str = ""

    def value(self, entry: Entry) -> float:
        kind = entry[0]
        if kind == "psd":
            _, b, i, j = entry
            return float(self.psd[b][i, j])
        if kind == "free":
            return float(self.free[entry[1]])
        if kind == "nonneg":
            return float(self.nonneg[entry[1]])
        raise SdpStructureError(f"unknown entry kind in {entry}")

    def min_eigenvalues(self) -> list[float]:
        out = []
        for X in self.psd:
            out.append(float(np.linalg.eigvalsh(X).min()) if X.size else 0.0)
        return out


def solve_sdp(problem: SdpProblem, settings: SdpSettings | None = None) -> SdpSolution:
    """Solve a standard-form SDP with the configured backend."""
    settings = settings or SdpSettings()
    backend = settings.resolved_backend()
    if backend == "cvxopt":
        from vecstab.sdp_backend.cvxopt_solver import solve_with_cvxopt

        return solve_with_cvxopt(problem, settings)
    if backend == "reference":
        from vecstab.sdp_backend.reference_solver import solve_with_reference

        return solve_with_reference(problem, settings)
    raise SdpStructureError(f"unknown SDP backend {backend!r}")
