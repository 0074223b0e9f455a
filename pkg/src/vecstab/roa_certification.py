"""Per-subsystem Lyapunov certificates via the expanding-interior scheme.

Each isolated subsystem gets a polynomial V, normalized so the attraction
estimate is the unit sublevel set {V <= 1}, together with an SOS
multiplier certifying exponential decrease on that set.  The bilinear
program alternates between a multiplier step (V fixed: refresh the
decrease multiplier, then push the inscribed shape level beta up by
bisection) and a V step (multipliers fixed: search V and beta jointly).

The inscribed-shape proxy beta measures {|x|^2 <= beta} subset of
{V <= 1}; growing beta grows the certified region.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
from scipy.linalg import solve_continuous_lyapunov
from scipy.stats import qmc

from vecstab import _jsonio
from vecstab.polynomials import (
    Monomial,
    Polynomial,
    PolynomialVector,
    lie_derivative,
    monomial_basis,
)
from vecstab.sdp_backend import SdpSettings
from vecstab.sos_core import PolyExpr, SosProgram, check_sos, solve_with_fallback
from vecstab.simulation import CompiledField

__all__ = [
    "CertificationError",
    "ExpandOptions",
    "LyapunovCertificate",
    "expanding_interior",
    "normalize_level",
    "verify_certificate",
    "certify_network",
    "quadratic_form_matrix",
]


class CertificationError(RuntimeError):
    """Certification could not be started or produced nothing usable."""


@dataclass
class ExpandOptions:
    epsilon: float = 1e-6
    rate_c: float = 0.01
    multiplier_degree: int = 2
    bisect_tol: float = 1e-3
    max_iters: int = 20
    rel_stop: float = 1e-3
    beta_cap: float = 100.0
    initial_V: Polynomial | None = None
    sdp: SdpSettings | None = None


@dataclass
class LyapunovCertificate:
    """Normalized Lyapunov function with its decrease multiplier.

    The attraction estimate is {V <= 1}.  The stored multiplier s
    certifies -(grad V . f + c V) - eps |x|^2 + s (V - 1) in Sigma for
    the stored rate c and margin eps.
    """

    index: int
    V: Polynomial
    degree: int
    rate_c: float
    beta_history: list[float] = field(default_factory=list)
    multiplier: Polynomial | None = None
    epsilon: float = 1e-6

    def to_json(self) -> dict:
        data = {
            "index": self.index,
            "V": self.V.to_string(),
            "vars": list(self.V.vars),
            "degree": self.degree,
            "rate_c": self.rate_c,
            "beta_history": list(self.beta_history),
            "epsilon": self.epsilon,
        }
        if self.multiplier is not None:
            data["multiplier"] = self.multiplier.to_string()
        return data

    @classmethod
    def from_json(cls, data: Mapping) -> "LyapunovCertificate":
        vars = tuple(data["vars"])
        mult = data.get("multiplier")
        return cls(
            index=int(data["index"]),
            V=Polynomial.parse(data["V"], vars),
            degree=int(data["degree"]),
            rate_c=float(data["rate_c"]),
            beta_history=[float(b) for b in data["beta_history"]],
            multiplier=None if mult is None else Polynomial.parse(mult, vars),
            epsilon=float(data.get("epsilon", 1e-6)),
        )

    def save(self, path) -> None:
        _jsonio.dump_json(self.to_json(), path)

    @classmethod
    def load(cls, path) -> "LyapunovCertificate":
        return cls.from_json(_jsonio.load_json(path))


def normalize_level(V_raw: Polynomial, gamma_max: float) -> Polynomial:
    """Rescale so {V <= 1} equals {V_raw <= gamma_max}."""
    if not (gamma_max > 0.0):
        raise ValueError(f"gamma_max must be positive, got {gamma_max}")
    return V_raw * (1.0 / gamma_max)


def quadratic_form_matrix(V: Polynomial) -> np.ndarray:
    """Symmetric matrix of the degree-2 part of V."""
    n = len(V.vars)
    Q = np.zeros((n, n))
    for mono, c in V.terms.items():
        if mono.degree != 2:
            continue
        nz = [k for k, e in enumerate(mono.exponents) if e]
        if len(nz) == 1:
            Q[nz[0], nz[0]] = c
        else:
            Q[nz[0], nz[1]] = Q[nz[1], nz[0]] = 0.5 * c
    return Q


def _norm_squared(vars: Sequence[str]) -> Polynomial:
    out = Polynomial.zero(vars)
    for v in vars:
        xv = Polynomial.variable(v, vars)
        out = out + xv * xv
    return out


def _v_support(vars: Sequence[str], degree: int) -> list[Monomial]:
    return [m for m in monomial_basis(vars, degree) if m.degree >= 2]


def _solve_decrease_multiplier(
    V: Polynomial,
    f: PolynomialVector,
    opts: ExpandOptions,
) -> tuple[Polynomial, float] | None:
    """Multiplier s with -(grad V . f + c V + eps|x|^2) + s(V-1) in Sigma.

    Maximizes the leftover margin lambda in front of |x|^2 so the result
    keeps the subsequent V step strictly feasible; returns (s, margin) or
    None when no multiplier exists at any margin.
    """
    vars = f.vars
    norm2 = _norm_squared(vars)
    prog = SosProgram()
    s = prog.sos_poly("s", vars, opts.multiplier_degree)
    lam = prog.free_scalar("lam")
    fixed = -(lie_derivative(V, f) + opts.rate_c * V + opts.epsilon * norm2)
    prog.add_sos(s * (V - 1.0) - lam * norm2 + fixed, label="decrease")
    prog.add_linear({lam: 1.0}, 1e6, "<=")
    prog.maximize({lam: 1.0})
    sol = solve_with_fallback(prog, opts.sdp)
    if not sol.is_optimal:
        return None
    return sol.value("s"), float(sol.value("lam"))


def _solve_shape_multiplier(
    V: Polynomial,
    beta: float,
    opts: ExpandOptions,
) -> Polynomial | None:
    """Find s1 in Sigma with (p - beta) s1 + (1 - V) in Sigma, p = |x|^2."""
    vars = V.vars
    p_shape = _norm_squared(vars)
    prog = SosProgram()
    s1 = prog.sos_poly("s1", vars, opts.multiplier_degree)
    prog.add_sos(s1 * (p_shape - beta) + (1.0 - V), label="shape")
    sol = solve_with_fallback(prog, opts.sdp)
    return sol.value("s1") if sol.is_optimal else None


def _bisect_beta(
    V: Polynomial,
    opts: ExpandOptions,
    start: float,
) -> tuple[float, Polynomial]:
    """Largest certified beta with its multiplier, by bracket and bisection."""
    lo = min(max(start, 0.0), opts.beta_cap)
    s_lo = _solve_shape_multiplier(V, lo, opts)
    shrink = 0
    while s_lo is None and lo > 1e-12:
        lo *= 0.5
        s_lo = _solve_shape_multiplier(V, lo, opts)
        shrink += 1
        if shrink > 60:
            break
    if s_lo is None:
        lo = 0.0
        s_lo = _solve_shape_multiplier(V, lo, opts)
        if s_lo is None:
            raise CertificationError(
                "shape multiplier infeasible even at beta = 0; "
                "V is not bounded below by the shape set"
            )
    hi = max(2.0 * lo, 1e-3)
    while hi < opts.beta_cap:
        s_hi = _solve_shape_multiplier(V, hi, opts)
        if s_hi is None:
            break
        lo, s_lo = hi, s_hi
        hi *= 2.0
    else:
        s_cap = _solve_shape_multiplier(V, opts.beta_cap, opts)
        if s_cap is not None:
            return opts.beta_cap, s_cap
        hi = opts.beta_cap
    while hi - lo > opts.bisect_tol * max(1.0, lo):
        mid = 0.5 * (lo + hi)
        s_mid = _solve_shape_multiplier(V, mid, opts)
        if s_mid is None:
            hi = mid
        else:
            lo, s_lo = mid, s_mid
    return lo, s_lo


def _v_step(
    f: PolynomialVector,
    degree: int,
    s1: Polynomial,
    s2: Polynomial,
    opts: ExpandOptions,
) -> tuple[Polynomial, float] | None:
    """Fix both multipliers, maximize beta over (V, beta) jointly."""
    vars = f.vars
    norm2 = _norm_squared(vars)
    p_shape = norm2
    prog = SosProgram()
    support = _v_support(vars, degree)
    Vref = prog.free_poly("V", vars, support=support)
    beta = prog.free_scalar("beta")

    vexpr = PolyExpr.of(Polynomial.zero(vars))
    vdot = PolyExpr.of(Polynomial.zero(vars))
    for m in support:
        mono = Polynomial.monomial(m, vars)
        vexpr = vexpr + Vref.coeff(m) * mono
        vdot = vdot + Vref.coeff(m) * lie_derivative(mono, f)

    prog.add_sos(vexpr - opts.epsilon * norm2, label="positivity")
    prog.add_sos(
        p_shape * s1 - beta * s1 + 1.0 - vexpr,
        label="shape",
    )
    prog.add_sos(
        -(vdot + opts.rate_c * vexpr + opts.epsilon * norm2)
        + s2 * vexpr
        - s2,
        label="decrease",
    )
    prog.add_linear({beta: 1.0}, opts.beta_cap, "<=")
    prog.maximize({beta: 1.0})
    sol = solve_with_fallback(prog, opts.sdp)
    if not sol.is_optimal:
        return None
    return sol.value("V"), float(sol.value("beta"))


def _initial_quadratic(f: PolynomialVector, opts: ExpandOptions) -> Polynomial:
    """Normalized starting V from the linearization's Lyapunov equation."""
    vars = f.vars
    A = f.linear_coefficients()
    eigs = np.linalg.eigvals(A)
    if eigs.real.max() >= 0.0:
        raise CertificationError(
            f"linearization is not Hurwitz (abscissa {eigs.real.max():.3g}); "
            "no quadratic Lyapunov function exists for the free subsystem"
        )
    P = solve_continuous_lyapunov(A.T, -np.eye(len(vars)))
    P = 0.5 * (P + P.T)
    lam_min = float(np.linalg.eigvalsh(P).min())
    if lam_min <= 0.0:
        raise CertificationError("Lyapunov equation returned a non-definite matrix")
    V0 = Polynomial.quadratic_form(P, vars)

    def feasible(gamma: float) -> bool:
        res = _solve_decrease_multiplier(V0 * (1.0 / gamma), f, opts)
        return res is not None and res[1] > 0.0

    gamma_hi = lam_min / opts.epsilon
    if feasible(gamma_hi):
        return normalize_level(V0, gamma_hi)
    lo = gamma_hi
    for _ in range(80):
        lo *= 0.5
        if feasible(lo):
            break
    else:
        raise CertificationError(
            "no sublevel set of the linearization's quadratic form certifies "
            "exponential decrease; the equilibrium may be only marginally stable"
        )
    hi = 2.0 * lo
    while hi - lo > opts.bisect_tol * lo:
        mid = 0.5 * (lo + hi)
        if feasible(mid):
            lo = mid
        else:
            hi = mid
    return normalize_level(V0, lo)


def expanding_interior(
    f_i: PolynomialVector,
    degree: int = 2,
    opts: ExpandOptions | None = None,
    index: int = 0,
) -> LyapunovCertificate:
    """Grow a unit-sublevel attraction estimate for the isolated dynamics.

    Alternates multiplier and V steps until the inscribed-shape level
    beta stalls (relative growth below opts.rel_stop), hits
    opts.beta_cap, or opts.max_iters passes.  The returned certificate
    always carries a multiplier solved against the final V.
    """
    opts = opts or ExpandOptions()
    if degree < 2 or degree % 2 != 0:
        raise ValueError(f"V degree must be even and >= 2, got {degree}")
    origin = {v: 0.0 for v in f_i.vars}
    for k, p in enumerate(f_i.entries):
        if p.evaluate(origin) != 0.0:
            raise ValueError(f"field entry {k} does not vanish at the origin")

    if opts.initial_V is not None:
        V = opts.initial_V.embed(f_i.vars)
    else:
        V = _initial_quadratic(f_i, opts)
    first = _solve_decrease_multiplier(V, f_i, opts)
    if first is None or first[1] <= 0.0:
        raise CertificationError(
            "initial V admits no decrease multiplier; "
            "certification cannot start"
        )
    s2 = first[0]

    beta, s1 = _bisect_beta(V, opts, start=1e-3)
    history = [beta]
    prev_vstep_beta: float | None = None
    for _ in range(opts.max_iters):
        step = _v_step(f_i, degree, s1, s2, opts)
        if step is None:
            break
        V_new, beta_v = step
        refresh = _solve_decrease_multiplier(V_new, f_i, opts)
        if refresh is None or refresh[1] <= 0.0:
            break
        V, s2 = V_new, refresh[0]
        history.append(beta_v)
        if beta_v >= opts.beta_cap * (1.0 - 1e-9):
            break
        if prev_vstep_beta is not None:
            growth = (beta_v - prev_vstep_beta) / max(prev_vstep_beta, 1e-12)
            if growth < opts.rel_stop:
                break
        prev_vstep_beta = beta_v
        beta_b, s1 = _bisect_beta(V, opts, start=beta_v)
        history.append(beta_b)

    return LyapunovCertificate(
        index=index,
        V=V,
        degree=degree,
        rate_c=opts.rate_c,
        beta_history=history,
        multiplier=s2,
        epsilon=opts.epsilon,
    )


def _sample_unit_sublevel(
    V: Polynomial,
    n_points: int,
    seed: int,
    max_draws: int = 1 << 19,
) -> np.ndarray:
    """Quasi-random points inside {V <= 1} via rejection from a box."""
    n = len(V.vars)
    Q = quadratic_form_matrix(V)
    halfwidth = None
    try:
        lam = np.linalg.eigvalsh(Q)
        if lam.min() > 0.0:
            Qinv = np.linalg.inv(Q)
            halfwidth = np.sqrt(np.maximum(np.diag(Qinv), 0.0))
            if V.degree > 2:
                halfwidth = 2.0 * halfwidth
            else:
                halfwidth = 1.05 * halfwidth
    except np.linalg.LinAlgError:
        halfwidth = None
    if halfwidth is None:
        halfwidth = np.full(n, 10.0)

    cf = CompiledField([V])
    sobol = qmc.Sobol(d=n, scramble=True, seed=seed)
    collected: list[np.ndarray] = []
    total = 0
    count = 0
    while count < n_points and total < max_draws:
        raw = sobol.random(4096)
        total += 4096
        pts = (2.0 * raw - 1.0) * halfwidth
        inside = cf(pts)[:, 0] <= 1.0
        kept = pts[inside]
        collected.append(kept)
        count += kept.shape[0]
    if not collected or count == 0:
        return np.zeros((1, n))
    return np.vstack(collected)[:n_points]


def verify_certificate(
    cert: LyapunovCertificate,
    f_i: PolynomialVector,
    n_points: int = 10_000,
    seed: int = 0,
    settings: SdpSettings | None = None,
) -> dict:
    """Independent re-check of a certificate; reports, never raises.

    Re-verifies positivity and decrease with fresh SOS runs against the
    stored multiplier, then samples {V <= 1} and tests the decrease
    inequality pointwise with slack 1e-6.
    """
    V = cert.V.embed(f_i.vars)
    eps = cert.epsilon
    c = cert.rate_c
    vars = f_i.vars
    norm2 = _norm_squared(vars)
    checks: dict[str, dict] = {}

    pos = check_sos(V - eps * norm2, settings)
    checks["positivity_sos"] = {"passed": pos.ok, "detail": pos.reason}

    if cert.multiplier is None:
        checks["decrease_sos"] = {"passed": False, "detail": "no stored multiplier"}
    else:
        s = cert.multiplier.embed(vars)
        expr = -(lie_derivative(V, f_i) + c * V) - eps * norm2 + s * (V - 1.0)
        dec = check_sos(expr, settings)
        mult = check_sos(s, settings)
        ok = dec.ok and mult.ok
        detail = dec.reason or ("multiplier not SOS: " + mult.reason if not mult.ok else "")
        checks["decrease_sos"] = {"passed": ok, "detail": detail}

    checks["exponential_rate"] = {
        "passed": c > 0.0,
        "rate": c,
        "detail": "" if c > 0.0 else "rate 0 certifies asymptotic decrease only",
    }

    pts = _sample_unit_sublevel(V, n_points, seed)
    vdot = lie_derivative(V, f_i)
    cf_pair = CompiledField([vdot, V])
    vals = cf_pair(pts)
    margins = vals[:, 0] + c * vals[:, 1]  # must be <= 1e-6
    worst = int(np.argmax(margins))
    sampling_ok = bool(margins[worst] <= 1e-6)
    checks["sampling"] = {
        "passed": sampling_ok,
        "n_points": int(pts.shape[0]),
        "worst_margin": float(margins[worst]),
        "worst_point": [float(v) for v in pts[worst]],
    }

    failures = [name for name, c_ in checks.items() if not c_["passed"]]
    return {"passed": not failures, "checks": checks, "failures": failures}


def certify_network(
    net,
    degree: int = 2,
    opts: ExpandOptions | None = None,
    jobs: int = 1,
) -> dict[int, LyapunovCertificate]:
    """Expanding-interior certificates for every isolated subsystem."""
    subsystems = list(net.subsystems)

    def work(sub) -> tuple[int, LyapunovCertificate]:
        return sub.index, expanding_interior(
            sub.f, degree=degree, opts=opts, index=sub.index
        )

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            pairs = list(pool.map(work, subsystems))
    else:
        pairs = [work(s) for s in subsystems]
    return dict(pairs)
