"""Reference dense primal-dual interior-point solver.

An infeasible-start Mehrotra predictor-corrector method using the HKM
search direction, written against the same standard form as the cvxopt
adapter:

    minimize    sum_k <C_k, X_k> + c_f' f
    subject to  sum_k <A_rk, X_k> + F[r, :] f = b_r        (r = 1..m)
                X_k PSD,  f free

Non-negative scalars are treated as 1x1 PSD blocks.  Free variables are
carried through the Newton system as an augmented block, so no
free-variable splitting is needed.  Everything is dense; the solver is
meant for desk-scale problems (blocks up to a few tens of rows), where
it is exact enough to cross-check the production adapter.
"""

from __future__ import annotations

import numpy as np

from vecstab.sdp_backend.problem import (
    STATUS_INFEASIBLE,
    STATUS_NUMERICAL,
    STATUS_OPTIMAL,
    STATUS_UNBOUNDED,
    SdpProblem,
    SdpSettings,
    SdpSolution,
)

__all__ = ["solve_with_reference"]

_STEP_SHRINK = 0.98
_RAY_TOL = 1e-7
_OBJ_BLOWUP = 1e7


class _Data:
    """Problem data flattened to dense per-block arrays."""

    def __init__(self, problem: SdpProblem) -> None:
        self.dims = list(problem.psd_dims) + [1] * problem.n_nonneg
        self.n_psd = len(problem.psd_dims)
        self.n_nonneg = problem.n_nonneg
        self.nf = problem.n_free
        self.m = problem.n_rows
        m = self.m
        self.A = [np.zeros((m, n, n)) for n in self.dims]
        self.F = np.zeros((m, self.nf))
        self.b = np.asarray(problem.eq_rhs, dtype=float)
        self.C = [np.zeros((n, n)) for n in self.dims]
        self.cf = np.zeros(self.nf)

        for r, row in enumerate(problem.eq_rows):
            for entry, coeff in row.items():
                self._scatter(self.A, self.F, r, entry, coeff)
        obj_A = [np.zeros((1, n, n)) for n in self.dims]
        obj_F = np.zeros((1, self.nf))
        for entry, coeff in problem.objective.items():
            self._scatter(obj_A, obj_F, 0, entry, coeff)
        self.C = [blk[0] for blk in obj_A]
        self.cf = obj_F[0]

        self.scale = max(
            1.0,
            float(np.max(np.abs(self.b))) if m else 0.0,
            max((float(np.max(np.abs(Ck))) for Ck in self.C if Ck.size), default=0.0),
            float(np.max(np.abs(self.cf))) if self.nf else 0.0,
        )

    def _scatter(self, A_list, F_mat, r: int, entry, coeff: float) -> None:
        kind = entry[0]
        if kind == "psd":
            _, b, i, j = entry
            blk = A_list[b]
            if i == j:
                blk[r, i, i] += coeff
            else:
                blk[r, i, j] += 0.5 * coeff
                blk[r, j, i] += 0.5 * coeff
        elif kind == "nonneg":
            A_list[self.n_psd + entry[1]][r, 0, 0] += coeff
        elif kind == "free":
            F_mat[r, entry[1]] += coeff
        else:  # pragma: no cover - validated upstream
            raise ValueError(f"unknown entry {entry}")

    def apply(self, X: list[np.ndarray], f: np.ndarray) -> np.ndarray:
        out = self.F @ f if self.nf else np.zeros(self.m)
        for A_k, X_k in zip(self.A, X):
            out = out + np.einsum("rij,ij->r", A_k, X_k)
        return out

    def apply_adjoint(self, y: np.ndarray) -> list[np.ndarray]:
        return [np.einsum("r,rij->ij", y, A_k) for A_k in self.A]


def solve_with_reference(problem: SdpProblem, settings: SdpSettings) -> SdpSolution:
    data = _Data(problem)
    if not data.dims:
        return _solve_linear_only(data, problem, settings)

    m, nf = data.m, data.nf
    total_dim = sum(data.dims)
    s0 = max(10.0, np.sqrt(max(data.dims)), data.scale)
    X = [s0 * np.eye(n) for n in data.dims]
    Z = [s0 * np.eye(n) for n in data.dims]
    y = np.zeros(m)
    f = np.zeros(nf)

    A_flat = [A_k.reshape(m, -1) for A_k in data.A]
    iteration = 0
    status = STATUS_NUMERICAL
    message = "iteration limit reached"

    for iteration in range(1, settings.max_iters + 1):
        rp = data.b - data.apply(X, f)
        AT = data.apply_adjoint(y)
        Rd = [data.C[k] - AT[k] - Z[k] for k in range(len(data.dims))]
        rf = data.cf - data.F.T @ y if nf else np.zeros(0)

        gap = sum(float(np.tensordot(Xk, Zk)) for Xk, Zk in zip(X, Z))
        mu = gap / total_dim
        pobj = (
            sum(float(np.tensordot(data.C[k], X[k])) for k in range(len(data.dims)))
            + float(data.cf @ f)
        )
        dobj = float(data.b @ y)

        pinf = _inf_norm(rp) / (1.0 + _inf_norm(data.b))
        dinf = max(
            max((_inf_norm(R) for R in Rd), default=0.0),
            _inf_norm(rf),
        ) / (1.0 + data.scale)
        denom = 1.0 + abs(pobj) + abs(dobj)
        relgap = abs(pobj - dobj) / denom
        compl = gap / denom

        if pinf <= settings.feasibility_tol and dinf <= settings.feasibility_tol and (
            compl <= settings.gap_tol or relgap <= settings.gap_tol
        ):
            status, message = STATUS_OPTIMAL, ""
            break

        ray = _detect_infeasibility(data, X, f, y, pobj)
        if ray is not None:
            return SdpSolution(status=ray[0], backend="reference",
                               iterations=iteration, message=ray[1])

        try:
            Zinv = [np.linalg.inv(Zk) for Zk in Z]
            M = np.zeros((m, m))
            for k, n in enumerate(data.dims):
                T = np.einsum("ij,rjk,kl->ril", X[k], data.A[k], Zinv[k])
                M += A_flat[k] @ T.reshape(m, -1).T
            K = np.zeros((m + nf, m + nf))
            K[:m, :m] = M
            if nf:
                K[:m, m:] = data.F
                K[m:, :m] = data.F.T

            def newton(Rc: list[np.ndarray]):
                r1 = rp.copy()
                for k in range(len(data.dims)):
                    r1 -= np.einsum(
                        "rij,ij->r", data.A[k], Rc[k] - X[k] @ Rd[k] @ Zinv[k]
                    )
                rhs = np.concatenate([r1, rf])
                try:
                    sol = np.linalg.solve(K, rhs)
                except np.linalg.LinAlgError:
                    sol = np.linalg.lstsq(K, rhs, rcond=None)[0]
                dy = sol[:m]
                df = sol[m:]
                dAT = data.apply_adjoint(dy)
                dZ = [Rd[k] - dAT[k] for k in range(len(data.dims))]
                dX = []
                for k in range(len(data.dims)):
                    raw = Rc[k] - X[k] @ dZ[k] @ Zinv[k]
                    dX.append(0.5 * (raw + raw.T))
                return dX, df, dy, dZ

            # predictor (affine scaling)
            Rc_aff = [-X[k] for k in range(len(data.dims))]
            dXa, dfa, dya, dZa = newton(Rc_aff)
            ap = _block_step(X, dXa)
            ad = _block_step(Z, dZa)
            gap_aff = sum(
                float(np.tensordot(X[k] + ap * dXa[k], Z[k] + ad * dZa[k]))
                for k in range(len(data.dims))
            )
            sigma = float(np.clip((max(gap_aff, 0.0) / gap) ** 3, 1e-8, 1.0 - 1e-8))

            # corrector
            Rc = [
                sigma * mu * Zinv[k] - X[k] - dXa[k] @ dZa[k] @ Zinv[k]
                for k in range(len(data.dims))
            ]
            dX, df, dy, dZ = newton(Rc)
        except np.linalg.LinAlgError as exc:
            status, message = STATUS_NUMERICAL, f"linear algebra failure: {exc}"
            break

        ap = _STEP_SHRINK * _block_step(X, dX)
        ad = _STEP_SHRINK * _block_step(Z, dZ)
        ap, ad = min(ap, 1.0), min(ad, 1.0)
        if ap < 1e-10 and ad < 1e-10:
            status, message = STATUS_NUMERICAL, "step sizes collapsed"
            break
        for k in range(len(data.dims)):
            X[k] = _symmetrize(X[k] + ap * dX[k])
            Z[k] = _symmetrize(Z[k] + ad * dZ[k])
        f = f + ap * df
        y = y + ad * dy

    psd = [X[k] for k in range(data.n_psd)]
    nonneg = np.array([float(X[data.n_psd + k][0, 0]) for k in range(data.n_nonneg)])
    rp = data.b - data.apply(X, f)
    AT = data.apply_adjoint(y)
    Rd = [data.C[k] - AT[k] - Z[k] for k in range(len(data.dims))]
    gap = sum(float(np.tensordot(Xk, Zk)) for Xk, Zk in zip(X, Z))
    pobj = (
        sum(float(np.tensordot(data.C[k], X[k])) for k in range(len(data.dims)))
        + float(data.cf @ f)
        + problem.objective_offset
    )
    dobj = float(data.b @ y) + problem.objective_offset
    residuals = {
        "primal_infeasibility": _inf_norm(rp) / (1.0 + _inf_norm(data.b)),
        "dual_infeasibility": max(
            max((_inf_norm(R) for R in Rd), default=0.0),
            _inf_norm(data.cf - data.F.T @ y if nf else np.zeros(0)),
        )
        / (1.0 + data.scale),
        "gap": gap,
        "relative_gap": abs(pobj - dobj) / (1.0 + abs(pobj) + abs(dobj)),
    }
    return SdpSolution(
        status=status,
        psd=psd,
        free=f,
        nonneg=nonneg,
        primal_objective=pobj if status == STATUS_OPTIMAL else None,
        dual_objective=dobj if status == STATUS_OPTIMAL else None,
        residuals=residuals,
        iterations=iteration,
        backend="reference",
        message=message,
    )


def _symmetrize(M: np.ndarray) -> np.ndarray:
    return 0.5 * (M + M.T)


def _inf_norm(arr: np.ndarray) -> float:
    return float(np.max(np.abs(arr))) if arr.size else 0.0


def _block_step(S: list[np.ndarray], dS: list[np.ndarray]) -> float:
    """Largest alpha <= 1 keeping every S_k + alpha dS_k positive definite."""
    alpha = 1.0
    for Sk, dSk in zip(S, dS):
        L = np.linalg.cholesky(Sk)
        Li = np.linalg.inv(L)
        T = _symmetrize(Li @ dSk @ Li.T)
        lam = float(np.linalg.eigvalsh(T).min())
        if lam < 0:
            alpha = min(alpha, -1.0 / lam)
    return alpha


def _detect_infeasibility(data: _Data, X, f, y, pobj) -> tuple[str, str] | None:
    """Farkas-style ray tests for primal infeasibility / unboundedness."""
    bty = float(data.b @ y)
    ynorm = _inf_norm(y)
    if bty > 0 and ynorm > 1.0:
        yhat = y / bty
        AT = data.apply_adjoint(yhat)
        viol = max(
            (float(np.linalg.eigvalsh(_symmetrize(ATk)).max()) for ATk in AT),
            default=0.0,
        )
        fviol = _inf_norm(data.F.T @ yhat) if data.nf else 0.0
        if max(viol, fviol) <= _RAY_TOL * max(1.0, _inf_norm(yhat)):
            return (STATUS_INFEASIBLE, "primal infeasibility certificate found")
    if pobj < -_OBJ_BLOWUP * data.scale:
        norm = max(
            max((_inf_norm(Xk) for Xk in X), default=0.0),
            _inf_norm(f),
            1e-300,
        )
        Xhat = [Xk / norm for Xk in X]
        fhat = f / norm
        pres = _inf_norm(data.apply(Xhat, fhat))
        obj_dir = (
            sum(float(np.tensordot(data.C[k], Xhat[k])) for k in range(len(data.dims)))
            + float(data.cf @ fhat)
        )
        if pres <= _RAY_TOL and obj_dir < -_RAY_TOL:
            return (STATUS_UNBOUNDED, "primal unbounded ray found")
    return None


def _solve_linear_only(data: _Data, problem: SdpProblem, settings: SdpSettings) -> SdpSolution:
    """Degenerate case: no cone variables, just free scalars and equalities."""
    if data.nf == 0:
        ok = data.m == 0 or np.allclose(data.b, 0.0, atol=settings.feasibility_tol)
        return SdpSolution(
            status=STATUS_OPTIMAL if ok else STATUS_INFEASIBLE,
            primal_objective=problem.objective_offset if ok else None,
            dual_objective=problem.objective_offset if ok else None,
            backend="reference",
        )
    f, res, *_ = np.linalg.lstsq(data.F, data.b, rcond=None)
    if _inf_norm(data.F @ f - data.b) > settings.feasibility_tol * (1 + _inf_norm(data.b)):
        return SdpSolution(status=STATUS_INFEASIBLE, backend="reference",
                           message="equalities inconsistent")
    y, *_ = np.linalg.lstsq(data.F.T, data.cf, rcond=None)
    if _inf_norm(data.F.T @ y - data.cf) > settings.feasibility_tol * (1 + _inf_norm(data.cf)):
        return SdpSolution(status=STATUS_UNBOUNDED, backend="reference",
                           message="objective unbounded on affine feasible set")
    pobj = float(data.cf @ f) + problem.objective_offset
    return SdpSolution(
        status=STATUS_OPTIMAL,
        free=f,
        primal_objective=pobj,
        dual_objective=float(data.b @ y) + problem.objective_offset,
        residuals={"primal_infeasibility": 0.0, "dual_infeasibility": 0.0,
                   "gap": 0.0, "relative_gap": 0.0},
        backend="reference",
    )
