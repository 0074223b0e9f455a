"""Fixed-step integration of polynomial vector fields and bound checks.

The integrator is classic fourth-order Runge-Kutta on a uniform grid.
Open-loop blowup is an expected outcome, so exceeding the divergence
threshold raises a flag on the trajectory and halts integration instead
of throwing.  Lyapunov level traces and the comparison-system bound
check reproduce the validation workflow used for closed-loop runs.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dataclass_field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from vecstab.comparison_analysis import comparison_trajectory
from vecstab.polynomials import Polynomial, PolynomialVector

__all__ = [
    "CompiledField",
    "Trajectory",
    "LevelTraces",
    "integrate",
    "integrate_batch",
    "lyapunov_traces",
    "verify_exponential_bound",
    "export_csv",
]

DIVERGENCE_THRESHOLD = 1e6
DEFAULT_DT = 1e-3
DEFAULT_HORIZON = 20.0


class CompiledField:
    """Vectorized evaluator for a polynomial vector field.

    Precomputes one shared exponent table and a coefficient matrix so a
    call costs one power-product pass plus a matmul.  Accepts a single
    state (n,) or a batch (N, n).
    """

    def __init__(self, entries: "PolynomialVector | Sequence[Polynomial]") -> None:
        polys = list(entries)
        if not polys:
            raise ValueError("empty field")
        self.vars = polys[0].vars
        pool: dict[tuple[int, ...], int] = {}
        coeff_rows: list[dict[int, float]] = []
        for p in polys:
            if p.vars != self.vars:
                raise ValueError("field entries disagree on variables")
            row: dict[int, float] = {}
            for mono, c in p.terms.items():
                idx = pool.setdefault(mono.exponents, len(pool))
                row[idx] = row.get(idx, 0.0) + c
            coeff_rows.append(row)
        if not pool:
            pool[(0,) * len(self.vars)] = 0
        self.exponents = np.array(sorted(pool, key=lambda e: pool[e]), dtype=float)
        self.coeffs = np.zeros((len(polys), len(pool)))
        for k, row in enumerate(coeff_rows):
            for idx, c in row.items():
                self.coeffs[k, idx] = c

    @property
    def n_vars(self) -> int:
        return len(self.vars)

    def __call__(self, x: np.ndarray) -> np.ndarray:
        X = np.asarray(x, dtype=float)
        if X.shape[-1] != self.n_vars:
            raise ValueError(
                f"state dimension {X.shape[-1]} != field dimension {self.n_vars}"
            )
        monos = np.prod(X[..., None, :] ** self.exponents, axis=-1)
        return monos @ self.coeffs.T


@dataclass
class Trajectory:
    """Uniform-grid solution with an explicit divergence flag."""

    times: np.ndarray
    states: np.ndarray
    vars: tuple[str, ...]
    dt: float
    diverged: bool = False
    metadata: dict = dataclass_field(default_factory=dict)

    def __post_init__(self):
        if self.times.ndim != 1 or self.states.shape[0] != self.times.shape[0]:
            raise ValueError("times and states disagree on grid length")
        if np.any(np.diff(self.times) <= 0.0):
            raise ValueError("time grid must be strictly increasing")
        if not np.all(np.isfinite(self.states)):
            raise ValueError("trajectory rows must be finite")

    @property
    def final_state(self) -> np.ndarray:
        return self.states[-1]

    @property
    def final_time(self) -> float:
        return float(self.times[-1])


def integrate(
    field: "PolynomialVector | CompiledField",
    x0: Sequence[float],
    T: float = DEFAULT_HORIZON,
    dt: float = DEFAULT_DT,
    metadata: Mapping | None = None,
) -> Trajectory:
    """RK4 on a uniform grid; halts with a flag past the divergence threshold."""
    if dt <= 0.0 or T < dt:
        raise ValueError(f"need dt > 0 and T >= dt, got T={T}, dt={dt}")
    cf = field if isinstance(field, CompiledField) else CompiledField(field)
    x = np.asarray(x0, dtype=float).reshape(-1)
    if x.shape[0] != cf.n_vars:
        raise ValueError(
            f"initial state dimension {x.shape[0]} != field dimension {cf.n_vars}"
        )
    n_steps = int(round(T / dt))
    states = np.empty((n_steps + 1, x.shape[0]))
    states[0] = x
    diverged = False
    kept = n_steps + 1
    for k in range(n_steps):
        nxt = _rk4_step(cf, states[k], dt)
        if not np.all(np.isfinite(nxt)):
            diverged = True
            kept = k + 1
            break
        states[k + 1] = nxt
        if np.max(np.abs(nxt)) > DIVERGENCE_THRESHOLD:
            diverged = True
            kept = k + 2
            break
    times = np.arange(kept) * dt
    meta = {"integrator": "rk4", "dt": dt}
    meta.update(metadata or {})
    return Trajectory(
        times=times,
        states=states[:kept],
        vars=cf.vars,
        dt=dt,
        diverged=diverged,
        metadata=meta,
    )


def _rk4_step(cf: CompiledField, x: np.ndarray, dt: float) -> np.ndarray:
    k1 = cf(x)
    k2 = cf(x + 0.5 * dt * k1)
    k3 = cf(x + 0.5 * dt * k2)
    k4 = cf(x + dt * k3)
    return x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def integrate_batch(
    field: "PolynomialVector | CompiledField",
    x0s: np.ndarray,
    T: float,
    dt: float = DEFAULT_DT,
) -> tuple[np.ndarray, np.ndarray]:
    """Integrate many initial conditions at once, keeping final states only.

    Returns (finals, diverged): rows flagged diverged are frozen at their
    last finite in-threshold state.
    """
    cf = field if isinstance(field, CompiledField) else CompiledField(field)
    X = np.array(x0s, dtype=float)
    if X.ndim != 2 or X.shape[1] != cf.n_vars:
        raise ValueError(f"expected (N, {cf.n_vars}) initial conditions")
    n_steps = int(round(T / dt))
    active = np.ones(X.shape[0], dtype=bool)
    diverged = np.zeros(X.shape[0], dtype=bool)
    for _ in range(n_steps):
        if not active.any():
            break
        nxt = _rk4_step(cf, X[active], dt)
        bad = ~np.isfinite(nxt).all(axis=1) | (
            np.max(np.abs(nxt), axis=1) > DIVERGENCE_THRESHOLD
        )
        idx = np.flatnonzero(active)
        X[idx[~bad]] = nxt[~bad]
        diverged[idx[bad]] = True
        active[idx[bad]] = False
    return X, diverged


@dataclass
class LevelTraces:
    """Per-subsystem Lyapunov values sampled along one trajectory."""

    times: np.ndarray
    indices: tuple[int, ...]
    values: np.ndarray  # shape (grid, len(indices))

    def column(self, index: int) -> np.ndarray:
        return self.values[:, self.indices.index(index)]


def _cert_polynomials(certs) -> dict[int, Polynomial]:
    if isinstance(certs, Mapping):
        return {int(i): getattr(V, "V", V) for i, V in certs.items()}
    return {int(c.index): c.V for c in certs}


def lyapunov_traces(traj: Trajectory, certs) -> LevelTraces:
    """Sample V_i along the trajectory for each certificate.

    ``certs`` is either a mapping index -> Polynomial or an iterable of
    certificate objects with ``index`` and ``V`` attributes.
    """
    polys = _cert_polynomials(certs)
    indices = tuple(sorted(polys))
    cols = []
    for i in indices:
        V = polys[i].embed(traj.vars)
        cf = CompiledField([V])
        cols.append(cf(traj.states)[:, 0])
    values = np.column_stack(cols) if cols else np.zeros((traj.times.size, 0))
    return LevelTraces(times=traj.times, indices=indices, values=values)


def verify_exponential_bound(
    traces: LevelTraces,
    A,
    levels,
    tol: float = 1e-4,
) -> dict:
    """Check V_i(t) <= r_i(t) + tol and V_i(t) <= gamma_i + tol on the grid.

    r is the comparison trajectory started from the levels.  Returns a
    report; never raises on violations.
    """
    g = np.asarray(levels, dtype=float)
    if g.shape[0] != len(traces.indices):
        raise ValueError("levels count does not match traces")
    r = comparison_trajectory(A, g, traces.times)
    bound_violations = []
    invariance_violations = []
    for col, i in enumerate(traces.indices):
        v = traces.values[:, col]
        over_bound = np.flatnonzero(v > r[:, col] + tol)
        if over_bound.size:
            k = int(over_bound[0])
            bound_violations.append(
                {
                    "index": i,
                    "first_time": float(traces.times[k]),
                    "value": float(v[k]),
                    "bound": float(r[k, col]),
                }
            )
        over_level = np.flatnonzero(v > g[col] + tol)
        if over_level.size:
            k = int(over_level[0])
            invariance_violations.append(
                {
                    "index": i,
                    "first_time": float(traces.times[k]),
                    "value": float(v[k]),
                    "level": float(g[col]),
                }
            )
    return {
        "passed": not bound_violations and not invariance_violations,
        "bound_violations": bound_violations,
        "invariance_violations": invariance_violations,
        "tol": tol,
    }


def export_csv(
    path,
    traj: Trajectory,
    traces: LevelTraces | None = None,
    bounds: np.ndarray | None = None,
) -> None:
    """Write t, states, V_i columns, r_i columns as one CSV file."""
    header = ["t", *traj.vars]
    columns = [traj.times, *(traj.states[:, k] for k in range(traj.states.shape[1]))]
    if traces is not None:
        if traces.times.shape != traj.times.shape:
            raise ValueError("traces grid does not match trajectory grid")
        for col, i in enumerate(traces.indices):
            header.append(f"V_{i}")
            columns.append(traces.values[:, col])
    if bounds is not None:
        bounds = np.asarray(bounds, dtype=float)
        if traces is None or bounds.shape != traces.values.shape:
            raise ValueError("bounds must align with traces")
        for col, i in enumerate(traces.indices):
            header.append(f"r_{i}")
            columns.append(bounds[:, col])
    lines = [",".join(header)]
    data = np.column_stack(columns)
    for row in data:
        lines.append(",".join("%.12g" % v for v in row))
    Path(path).write_text("\n".join(lines) + "\n")
