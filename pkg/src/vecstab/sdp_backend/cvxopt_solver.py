"""Adapter mapping standard-form SDPs onto cvxopt's conelp solver.

The decision vector handed to conelp stacks free scalars, non-negative
scalars, then the upper-triangular entries of each PSD block.  Cone
membership is imposed through slack identities: the linear cone carries
the non-negative scalars, and each semidefinite cone slab carries the
full (symmetrized) matrix of one block.
"""

from __future__ import annotations

import numpy as np
from cvxopt import matrix, solvers, spmatrix

from vecstab.sdp_backend.problem import (
    STATUS_INFEASIBLE,
    STATUS_NUMERICAL,
    STATUS_OPTIMAL,
    STATUS_UNBOUNDED,
    SdpProblem,
    SdpSettings,
    SdpSolution,
)

__all__ = ["solve_with_cvxopt"]


def _tri_size(n: int) -> int:
    return n * (n + 1) // 2


def _tri_index(n: int, i: int, j: int) -> int:
    # upper-triangular, row-major: (0,0), (0,1), ..., (0,n-1), (1,1), ...
    return i * n - i * (i - 1) // 2 + (j - i)


class _Layout:
    def __init__(self, problem: SdpProblem) -> None:
        self.nf = problem.n_free
        self.nn = problem.n_nonneg
        self.psd_dims = list(problem.psd_dims)
        self.psd_base: list[int] = []
        base = self.nf + self.nn
        for n in self.psd_dims:
            self.psd_base.append(base)
            base += _tri_size(n)
        self.n_cols = base

    def column(self, entry) -> int:
        kind = entry[0]
        if kind == "free":
            return entry[1]
        if kind == "nonneg":
            return self.nf + entry[1]
        _, b, i, j = entry
        return self.psd_base[b] + _tri_index(self.psd_dims[b], i, j)


def solve_with_cvxopt(problem: SdpProblem, settings: SdpSettings) -> SdpSolution:
    lay = _Layout(problem)
    n_cols = lay.n_cols
    if n_cols == 0:
        return SdpSolution(status=STATUS_OPTIMAL, backend="cvxopt",
                           primal_objective=problem.objective_offset,
                           dual_objective=problem.objective_offset)

    c = np.zeros(n_cols)
    for entry, coeff in problem.objective.items():
        c[lay.column(entry)] += coeff

    # cone slack rows: s = h - G x with s in (l-cone, s-cones)
    G_vals: list[float] = []
    G_rows: list[int] = []
    G_cols: list[int] = []
    row = 0
    for k in range(lay.nn):
        G_vals.append(-1.0)
        G_rows.append(row)
        G_cols.append(lay.nf + k)
        row += 1
    sdp_row_base = []
    for b, n in enumerate(lay.psd_dims):
        sdp_row_base.append(row)
        for i in range(n):
            for j in range(i, n):
                col = lay.psd_base[b] + _tri_index(n, i, j)
                G_vals.append(-1.0)
                G_rows.append(row + i * n + j)
                G_cols.append(col)
                if i != j:
                    G_vals.append(-1.0)
                    G_rows.append(row + j * n + i)
                    G_cols.append(col)
        row += n * n
    n_cone_rows = row
    if n_cone_rows == 0:
        # conelp requires a cone; park an unused slack in the linear cone.
        G = spmatrix([], [], [], (1, n_cols))
        h = matrix([1.0])
        dims = {"l": 1, "q": [], "s": []}
    else:
        G = spmatrix(G_vals, G_rows, G_cols, (n_cone_rows, n_cols))
        h = matrix(np.zeros(n_cone_rows))
        dims = {"l": lay.nn, "q": [], "s": list(lay.psd_dims)}

    A_vals: list[float] = []
    A_rows: list[int] = []
    A_cols: list[int] = []
    for r, coeffs in enumerate(problem.eq_rows):
        for entry, coeff in coeffs.items():
            A_vals.append(coeff)
            A_rows.append(r)
            A_cols.append(lay.column(entry))
    A = spmatrix(A_vals, A_rows, A_cols, (problem.n_rows, n_cols))
    b = matrix(np.asarray(problem.eq_rhs, dtype=float))

    options = {
        "show_progress": settings.verbose,
        "maxiters": settings.max_iters,
        "abstol": settings.gap_tol,
        "reltol": max(settings.gap_tol, 1e-9),
        "feastol": settings.feasibility_tol,
    }
    try:
        sol = solvers.conelp(matrix(c), G, h, dims, A=A, b=b, options=options)
    except (ValueError, ZeroDivisionError, ArithmeticError) as exc:
        return SdpSolution(status=STATUS_NUMERICAL, backend="cvxopt",
                           message=f"conelp raised {exc!r}")

    raw_status = sol["status"]
    if raw_status == "primal infeasible":
        return SdpSolution(
            status=STATUS_INFEASIBLE,
            backend="cvxopt",
            iterations=int(sol.get("iterations", 0)),
            message="conelp produced a primal infeasibility certificate",
        )
    if raw_status == "dual infeasible":
        return SdpSolution(
            status=STATUS_UNBOUNDED,
            backend="cvxopt",
            iterations=int(sol.get("iterations", 0)),
            message="conelp produced a dual infeasibility certificate",
        )

    residuals = {
        "primal_infeasibility": _as_float(sol.get("primal infeasibility")),
        "dual_infeasibility": _as_float(sol.get("dual infeasibility")),
        "gap": _as_float(sol.get("gap")),
        "relative_gap": _as_float(sol.get("relative gap")),
    }
    acceptable = (
        residuals["primal_infeasibility"] <= 10 * settings.feasibility_tol
        and residuals["dual_infeasibility"] <= 10 * settings.feasibility_tol
        and residuals["relative_gap"] <= 100 * settings.gap_tol
    )
    if raw_status != "optimal" and not acceptable:
        return SdpSolution(
            status=STATUS_NUMERICAL,
            backend="cvxopt",
            residuals=residuals,
            iterations=int(sol.get("iterations", 0)),
            message=f"conelp status {raw_status!r}",
        )

    x = np.asarray(sol["x"]).ravel()
    s = np.asarray(sol["s"]).ravel()
    free = x[: lay.nf].copy()
    nonneg = s[: lay.nn].copy() if lay.nn else np.zeros(0)
    psd: list[np.ndarray] = []
    for b_idx, n in enumerate(lay.psd_dims):
        base = sdp_row_base[b_idx]
        X = s[base : base + n * n].reshape(n, n).copy()
        psd.append(0.5 * (X + X.T))
    pobj = float(sol["primal objective"]) + problem.objective_offset
    dobj = float(sol["dual objective"]) + problem.objective_offset
    return SdpSolution(
        status=STATUS_OPTIMAL,
        psd=psd,
        free=free,
        nonneg=nonneg,
        primal_objective=pobj,
        dual_objective=dobj,
        residuals=residuals,
        iterations=int(sol.get("iterations", 0)),
        backend="cvxopt",
        message="" if raw_status == "optimal" else "accepted near-optimal iterate",
    )


def _as_float(value) -> float:
    if value is None:
        return float("nan")
    return float(value)
