"""Distributed bounded-control synthesis on certified subsystems.

Each subsystem solves one SOS program over its neighborhood variables:
find a feedback u_i on its own states, a comparison row a_i. with
non-negative off-diagonal entries and strictly negative sum, and
multipliers localizing everything to the operating domain, while
minimizing the control amplitude bounds.  Assembling the rows gives a
Metzler comparison matrix whose row tests certify network stability.

No subsystem ever sees data beyond its neighborhood: the program is
built from the local dynamics, the neighbors' Lyapunov functions, and
the neighbors' initial levels alone.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from vecstab import _jsonio
from vecstab.comparison_analysis import (
    LevelVector,
    comparison_report,
    gershgorin_hurwitz,
    invariance_check,
    is_metzler,
)
from vecstab.network_model import NetworkModel, Subsystem
from vecstab.polynomials import (
    Monomial,
    Polynomial,
    PolynomialVector,
    lie_derivative,
    monomial_basis,
)
from vecstab.roa_certification import (
    ExpandOptions,
    LyapunovCertificate,
    certify_network,
)
from vecstab.sdp_backend import SdpSettings
from vecstab.simulation import CompiledField
from vecstab.sos_core import PolyExpr, SosProgram, check_sos, solve_with_fallback

__all__ = [
    "SynthesisError",
    "SynthesisRefusal",
    "SynthesisInput",
    "SynthesisResult",
    "SynthesisOptions",
    "initial_levels",
    "make_inputs",
    "synthesize_subsystem",
    "verify_synthesis",
    "assemble_comparison",
    "run_algorithm",
    "EPSILON_MARGIN",
]

# strictness of the row-sum inequality: sum_j a_ij <= -EPSILON_MARGIN
EPSILON_MARGIN = 1e-6
# extra compile-time margins so solver-tolerance noise cannot push a
# returned row past the inequality it was solved under
ROW_GUARD = 1e-7
INVARIANCE_GUARD = 1e-8
# slack for re-validating solver output against the exact inequalities
RESULT_TOL = 1e-9
# coefficients below this are solver dust; re-verification drops them so
# membership tests ask about the intended polynomial, not the noise floor
CHOP_TOL = 1e-8


class SynthesisError(RuntimeError):
    """Synthesis program infeasible or numerically unsolvable."""


class SynthesisRefusal(RuntimeError):
    """Initial condition outside the certified operating region."""

    def __init__(self, message: str, indices: Sequence[int]) -> None:
        super().__init__(message)
        self.indices = tuple(indices)


def _chop(p: Polynomial, tol: float = CHOP_TOL) -> Polynomial:
    return Polynomial(p.vars, {m: c for m, c in p.terms.items() if abs(c) > tol})


def _certified_sos(p: Polynomial, settings) -> tuple[bool, str]:
    """Membership test tolerant of solver dust, two stage.

    The exact polynomial is tried first, so boundary-tight certificates
    where every coefficient matters stand on their own.  Only if that
    fails is the candidate re-tried with sub-tolerance coefficients
    dropped: a residual the solver could not even represent should not
    fail a certificate whose honest scale sits orders above it.
    """
    chk = check_sos(p, settings)
    if chk.ok:
        return True, ""
    chopped = _chop(p)
    if chopped.terms == p.terms:
        return False, chk.reason
    retry = check_sos(chopped, settings)
    if retry.ok:
        return True, ""
    return False, retry.reason or chk.reason


def _restrict(p: Polynomial, vars: Sequence[str]) -> Polynomial:
    """Rebuild ``p`` over ``vars``; every used variable must be present."""
    vars = tuple(vars)
    positions = []
    for k, v in enumerate(p.vars):
        if v in vars:
            positions.append((k, vars.index(v)))
            continue
        if any(mono.exponents[k] for mono in p.terms):
            raise ValueError(
                f"polynomial uses {v!r}, outside the target variables"
            )
        positions.append((k, None))
    terms: dict[Monomial, float] = {}
    for mono, c in p.terms.items():
        exps = [0] * len(vars)
        for k, pos in positions:
            if pos is not None:
                exps[pos] = mono.exponents[k]
        key = Monomial(tuple(exps))
        terms[key] = terms.get(key, 0.0) + c
    return Polynomial(vars, terms)


@dataclass
class SynthesisInput:
    """Everything one subsystem needs: local dynamics plus neighbor data."""

    subsystem: Subsystem
    neighborhood: tuple[int, ...]
    certificates: Mapping[int, LyapunovCertificate]
    levels: Mapping[int, float]
    local_vars: tuple[str, ...]
    control_degree: int = 1
    multiplier_degree: int = 2
    fixed_bounds: tuple[float, ...] | None = None
    sdp: SdpSettings | None = None

    def __post_init__(self):
        i = self.subsystem.index
        if not self.neighborhood or self.neighborhood[0] != i:
            raise ValueError(
                f"neighborhood must start with the owner {i}, "
                f"got {self.neighborhood}"
            )
        for j in self.neighborhood:
            if j not in self.certificates:
                raise ValueError(f"no certificate for neighbor {j}")
            if j not in self.levels:
                raise ValueError(f"no level for neighbor {j}")
            lvl = float(self.levels[j])
            if not (0.0 <= lvl <= 1.0):
                raise ValueError(f"level of subsystem {j} is {lvl}, outside [0, 1]")
        missing = set(self.subsystem.states) - set(self.local_vars)
        if missing:
            raise ValueError(f"local variables miss own states {sorted(missing)}")
        for j in self.neighborhood:
            foreign = set(self.certificates[j].V.vars) - set(self.local_vars)
            if foreign:
                raise ValueError(
                    f"certificate of neighbor {j} uses variables "
                    f"{sorted(foreign)} outside the neighborhood"
                )
        if self.control_degree < 1:
            raise ValueError("control degree must be at least 1")
        if self.multiplier_degree < 2 or self.multiplier_degree % 2 != 0:
            raise ValueError("multiplier degree must be even and at least 2")
        if self.fixed_bounds is not None:
            caps = tuple(float(b) for b in self.fixed_bounds)
            if len(caps) != self.subsystem.n_states:
                raise ValueError("one bound cap per state channel required")
            for k, cap in enumerate(caps):
                if cap < 0.0:
                    raise ValueError(f"bound cap {k} is negative")
                if not self.subsystem.controlled[k] and cap != 0.0:
                    raise ValueError(
                        f"channel {k} is uncontrolled but has cap {cap}"
                    )
            self.fixed_bounds = caps


@dataclass
class SynthesisResult:
    """One subsystem's feedback, bounds, and comparison row."""

    index: int
    u: PolynomialVector
    bounds: tuple[float, ...]
    row: dict[int, float]
    levels: dict[int, float]
    status: str = "optimal"
    objective: float | None = None
    multipliers: dict[str, Polynomial] = field(default_factory=dict)

    def __post_init__(self):
        self.bounds = tuple(float(b) for b in self.bounds)
        self.row = {int(j): float(a) for j, a in self.row.items()}
        self.levels = {int(j): float(g) for j, g in self.levels.items()}
        if self.index not in self.row:
            raise ValueError(f"row of subsystem {self.index} misses its diagonal")
        for j, a in self.row.items():
            if j != self.index and a < -RESULT_TOL:
                raise ValueError(f"off-diagonal a[{self.index},{j}] = {a} < 0")
        if self.row_sum > -EPSILON_MARGIN + RESULT_TOL:
            raise ValueError(
                f"row sum {self.row_sum} not below -{EPSILON_MARGIN}"
            )
        if self.row_gamma_sum > RESULT_TOL:
            raise ValueError(
                f"level-weighted row sum {self.row_gamma_sum} is positive"
            )
        for b in self.bounds:
            if b < -RESULT_TOL:
                raise ValueError(f"negative control bound {b}")

    @property
    def neighborhood(self) -> tuple[int, ...]:
        rest = sorted(j for j in self.row if j != self.index)
        return (self.index,) + tuple(rest)

    @property
    def level(self) -> float:
        return self.levels[self.index]

    @property
    def row_sum(self) -> float:
        return float(sum(self.row.values()))

    @property
    def row_gamma_sum(self) -> float:
        return float(sum(a * self.levels[j] for j, a in self.row.items()))

    @property
    def bound_total(self) -> float:
        return float(sum(self.bounds))

    def policy(self, zero_tol: float = 1e-6) -> str:
        """Table-style policy column: '---' when no control is applied."""
        if max(self.bounds, default=0.0) <= zero_tol:
            return "---"
        parts = []
        for k, p in enumerate(self.u.entries):
            if self.bounds[k] <= zero_tol:
                continue
            parts.append(f"u[{k + 1}] = {p.to_string()}")
        return "; ".join(parts) if parts else "---"

    def to_json(self) -> dict:
        return {
            "i": self.index,
            "gamma_0": self.level,
            "row_sum": self.row_sum,
            "row_gamma_sum": self.row_gamma_sum,
            "U_bar": list(self.bounds),
            "policy": self.policy(),
            "u": [p.to_string() for p in self.u.entries],
            "vars": list(self.u.vars),
            "row": {str(j): a for j, a in sorted(self.row.items())},
            "levels": {str(j): g for j, g in sorted(self.levels.items())},
            "status": self.status,
            "objective": self.objective,
            "multipliers": {
                name: {"vars": list(p.vars), "poly": p.to_string()}
                for name, p in sorted(self.multipliers.items())
            },
        }

    @classmethod
    def from_json(cls, data: Mapping) -> "SynthesisResult":
        vars = tuple(data["vars"])
        mults = {
            name: Polynomial.parse(spec["poly"], tuple(spec["vars"]))
            for name, spec in data.get("multipliers", {}).items()
        }
        return cls(
            index=int(data["i"]),
            u=PolynomialVector(
                tuple(Polynomial.parse(s, vars) for s in data["u"]), vars
            ),
            bounds=tuple(float(b) for b in data["U_bar"]),
            row={int(j): float(a) for j, a in data["row"].items()},
            levels={int(j): float(g) for j, g in data["levels"].items()},
            status=str(data.get("status", "optimal")),
            objective=None if data.get("objective") is None
            else float(data["objective"]),
            multipliers=mults,
        )

    def save(self, path) -> None:
        _jsonio.dump_json(self.to_json(), path)

    @classmethod
    def load(cls, path) -> "SynthesisResult":
        return cls.from_json(_jsonio.load_json(path))


def initial_levels(
    certs: Mapping[int, LyapunovCertificate],
    x0,
    net: NetworkModel | None = None,
) -> LevelVector:
    """Evaluate gamma_i0 = V_i(x_i(0)) for every subsystem, ascending index.

    ``x0`` is either a mapping from state names to values or a vector over
    the network's ambient ordering (then ``net`` must be given).  Initial
    conditions outside any unit sublevel set are refused.
    """
    if isinstance(x0, Mapping):
        values = {v: float(x) for v, x in x0.items()}
        def level_of(idx: int) -> float:
            V = certs[idx].V
            return float(V.evaluate({v: values[v] for v in V.vars}))
    else:
        if net is None:
            raise ValueError("vector x0 needs the network for its ordering")
        parts = net.split_state(x0)
        def level_of(idx: int) -> float:
            return float(certs[idx].V.evaluate(parts[idx]))

    order = sorted(certs)
    gammas = [level_of(i) for i in order]
    outside = [i for i, g in zip(order, gammas) if g > 1.0]
    if outside:
        detail = ", ".join(
            f"{i}: V={level_of(i):.6g}" for i in outside
        )
        raise SynthesisRefusal(
            f"initial condition outside the certified region for "
            f"subsystem(s) {outside} ({detail})",
            outside,
        )
    return LevelVector(gammas)


def _control_support(vars: Sequence[str], degree: int) -> list[Monomial]:
    """Feedback monomials: degrees 1..degree, so u vanishes at the origin."""
    return [m for m in monomial_basis(vars, degree) if m.degree >= 1]


def _build_program(inp: SynthesisInput):
    """Assemble the per-subsystem SOS program; returns it with its handles."""
    sub = inp.subsystem
    i = sub.index
    vars_i = sub.states
    local = inp.local_vars
    Vi = inp.certificates[i].V.embed(vars_i)
    gamma_i = float(inp.levels[i])
    fixed_mode = inp.fixed_bounds is not None

    prog = SosProgram()

    support = _control_support(vars_i, inp.control_degree)
    u_refs = {
        k: prog.free_poly(f"u{k}", vars_i, support=support)
        for k, flag in enumerate(sub.controlled)
        if flag
    }
    a_refs = {
        j: (prog.free_scalar("a_self") if j == i else prog.nonneg_scalar(f"a_{j}"))
        for j in inp.neighborhood
    }
    # no constant Gram row: a constant in sigma_j only replicates a_ij
    # while forcing a negative constant -sigma_j(0)*gamma_j into the
    # certificate, which exact re-verification would then reject
    sig_refs = {
        j: prog.sos_poly(f"sigma_{j}", local, inp.multiplier_degree, min_degree=2)
        for j in inp.neighborhood
    }

    # decrease condition over the neighborhood variables
    dVi = {k: Vi.partial(v) for k, v in enumerate(vars_i)}
    expr = PolyExpr.of(Polynomial.zero(local))
    expr = expr - lie_derivative(Vi, sub.f).embed(local)
    for k, v in enumerate(vars_i):
        if dVi[k].is_zero:
            continue
        gk = _restrict(sub.g[k], local)
        expr = expr - dVi[k].embed(local) * gk
        if k in u_refs:
            expr = expr - u_refs[k] * dVi[k]
    for j in inp.neighborhood:
        Vj = inp.certificates[j].V.embed(local)
        gamma_j = float(inp.levels[j])
        expr = expr + a_refs[j] * Vj
        expr = expr + sig_refs[j] * (Vj - gamma_j)
    prog.add_sos(expr, label="decrease")

    prog.add_linear(
        {a_refs[j]: 1.0 for j in inp.neighborhood},
        -(EPSILON_MARGIN + ROW_GUARD),
        "<=",
    )

    # level-weighted row condition; the guard needs a case split because
    # zero levels make the strictly guarded form unattainable
    positive = {j for j in inp.neighborhood if inp.levels[j] > 0.0}
    if positive:
        if gamma_i > 0.0:
            prog.add_linear(
                {a_refs[j]: float(inp.levels[j]) for j in positive},
                -INVARIANCE_GUARD,
                "<=",
            )
        else:
            # own level zero: every positive-level neighbor entry is
            # forced to the bottom of its cone
            for j in positive:
                prog.add_linear({a_refs[j]: 1.0}, 0.0, "<=")

    # amplitude bounds on the own sublevel set {V_i <= gamma_i}
    level_gap = Polynomial.constant(gamma_i, vars_i) - Vi
    cap_refs = {}
    for k in u_refs:
        sig_up = prog.sos_poly(f"sig_up{k}", vars_i, inp.multiplier_degree)
        sig_lo = prog.sos_poly(f"sig_low{k}", vars_i, inp.multiplier_degree)
        if fixed_mode:
            cap = float(inp.fixed_bounds[k])
            prog.add_sos(cap - u_refs[k] - sig_up * level_gap,
                         label=f"bound_up_{k}")
            prog.add_sos(cap + u_refs[k] - sig_lo * level_gap,
                         label=f"bound_low_{k}")
        else:
            U = prog.nonneg_scalar(f"U{k}")
            cap_refs[k] = U
            prog.add_sos(U - u_refs[k] - sig_up * level_gap,
                         label=f"bound_up_{k}")
            prog.add_sos(U + u_refs[k] - sig_lo * level_gap,
                         label=f"bound_low_{k}")

    if fixed_mode:
        prog.minimize({a_refs[j]: float(inp.levels[j]) for j in inp.neighborhood})
    else:
        prog.minimize({U: 1.0 for U in cap_refs.values()})
    return prog, u_refs, a_refs, sig_refs, cap_refs


def synthesize_subsystem(inp: SynthesisInput) -> SynthesisResult:
    """Solve one subsystem's feedback/row program.

    Minimizes the total control bound; with fixed caps the objective
    switches to the level-weighted row sum, the natural margin left in
    the invariance inequality.  Decentralization is asserted structurally:
    the compiled program must reference neighborhood variables only.
    """
    sub = inp.subsystem
    i = sub.index
    vars_i = sub.states
    fixed_mode = inp.fixed_bounds is not None
    prog, u_refs, a_refs, sig_refs, cap_refs = _build_program(inp)

    allowed = set(inp.local_vars)
    for _, used, _, label in prog.compile().constraint_grams:
        foreign = set(used) - allowed
        if foreign:
            raise SynthesisError(
                f"subsystem {i}: constraint {label!r} touches foreign "
                f"variables {sorted(foreign)}"
            )

    sol = solve_with_fallback(prog, inp.sdp)
    if sol.status == "infeasible":
        raise SynthesisError(
            f"subsystem {i}: synthesis program infeasible at control degree "
            f"{inp.control_degree}; a higher degree may admit a policy"
        )
    if not sol.is_optimal:
        raise SynthesisError(
            f"subsystem {i}: solver returned status {sol.status!r}"
        )

    entries = []
    for k in range(sub.n_states):
        if k in u_refs:
            entries.append(sol.value(u_refs[k]))
        else:
            entries.append(Polynomial.zero(vars_i))
    bounds = []
    for k in range(sub.n_states):
        if k not in u_refs:
            bounds.append(0.0)
        elif fixed_mode:
            bounds.append(float(inp.fixed_bounds[k]))
        else:
            bounds.append(float(sol.value(cap_refs[k])))

    multipliers = {f"sigma_{j}": sol.value(sig_refs[j]) for j in inp.neighborhood}
    for k in u_refs:
        multipliers[f"sig_up{k}"] = sol.value(f"sig_up{k}")
        multipliers[f"sig_low{k}"] = sol.value(f"sig_low{k}")

    return SynthesisResult(
        index=i,
        u=PolynomialVector(tuple(entries), vars_i),
        bounds=tuple(bounds),
        row={j: float(sol.value(a_refs[j])) for j in inp.neighborhood},
        levels={j: float(inp.levels[j]) for j in inp.neighborhood},
        status=sol.status,
        objective=sol.objective_value,
        multipliers=multipliers,
    )


def verify_synthesis(
    result: SynthesisResult,
    inp: SynthesisInput,
    n_points: int = 10_000,
    seed: int = 0,
    settings: SdpSettings | None = None,
) -> dict:
    """Back-substitute a result and re-check it; reports, never raises.

    Re-runs the decrease certificate as a plain SOS membership test with
    the stored multipliers, then samples the own sublevel set to confirm
    the bounds hold pointwise.
    """
    from vecstab.roa_certification import _sample_unit_sublevel

    sub = inp.subsystem
    i = sub.index
    vars_i = sub.states
    local = inp.local_vars
    Vi = inp.certificates[i].V.embed(vars_i)
    gamma_i = float(inp.levels[i])
    checks: dict[str, dict] = {}

    closed = PolynomialVector(
        tuple(sub.f[k] + result.u[k] for k in range(sub.n_states)), vars_i
    )
    fixed = -lie_derivative(Vi, closed).embed(local)
    for k, v in enumerate(vars_i):
        dk = Vi.partial(v)
        if dk.is_zero:
            continue
        fixed = fixed - dk.embed(local) * _restrict(sub.g[k], local)
    for j in result.neighborhood:
        Vj = inp.certificates[j].V.embed(local)
        gamma_j = float(inp.levels[j])
        sigma = result.multipliers[f"sigma_{j}"].embed(local)
        fixed = fixed + result.row[j] * Vj + sigma * (Vj - gamma_j)
    dec_ok, dec_why = _certified_sos(fixed, settings)
    sig_ok = all(
        _certified_sos(result.multipliers[f"sigma_{j}"], settings)[0]
        for j in result.neighborhood
    )
    checks["decrease_sos"] = {
        "passed": dec_ok and sig_ok,
        "detail": dec_why if not dec_ok else
        ("" if sig_ok else "a stored multiplier is not SOS"),
    }

    level_gap = Polynomial.constant(gamma_i, vars_i) - Vi
    bound_ok, bound_detail = True, ""
    for k, flag in enumerate(sub.controlled):
        if not flag:
            continue
        for side, sign in (("up", -1.0), ("low", 1.0)):
            sigma = result.multipliers[f"sig_{side}{k}"]
            cand = (Polynomial.constant(result.bounds[k], vars_i)
                    + sign * result.u[k] - sigma * level_gap)
            cand_ok, cand_why = _certified_sos(cand, settings)
            if not (cand_ok and _certified_sos(sigma, settings)[0]):
                bound_ok = False
                bound_detail = f"channel {k} {side}: {cand_why or 'bad multiplier'}"
                break
        if not bound_ok:
            break
    checks["bound_sos"] = {"passed": bound_ok, "detail": bound_detail}

    if gamma_i > 0.0:
        pts = _sample_unit_sublevel(Vi * (1.0 / gamma_i), n_points, seed)
    else:
        pts = np.zeros((1, len(vars_i)))
    uvals = CompiledField(result.u)(pts)
    worst = np.abs(uvals) - np.asarray(result.bounds)
    worst_k = int(np.argmax(worst.max(axis=0)))
    checks["bounds"] = {
        "passed": bool(worst.max() <= 1e-6),
        "n_points": int(pts.shape[0]),
        "worst_excess": float(worst.max()),
        "worst_channel": worst_k,
    }

    failures = [name for name, c in checks.items() if not c["passed"]]
    return {"passed": not failures, "checks": checks, "failures": failures}


def assemble_comparison(
    results: Sequence[SynthesisResult],
    m: int | None = None,
) -> np.ndarray:
    """Stack rows into the dense comparison matrix and re-assert its story.

    Rows are ordered by ascending subsystem index; entries outside a row's
    neighborhood stay zero.  Raises naming the offending row if the matrix
    fails the Metzler, Gershgorin, or level-invariance test.
    """
    if not results:
        raise ValueError("no synthesis results to assemble")
    order = sorted(r.index for r in results)
    if len(set(order)) != len(order):
        raise ValueError("duplicate subsystem indices in results")
    if m is not None and m != len(order):
        raise ValueError(f"expected {m} results, got {len(order)}")
    pos = {idx: k for k, idx in enumerate(order)}
    by_index = {r.index: r for r in results}

    levels = np.zeros(len(order))
    for r in results:
        for j, g in r.levels.items():
            if j not in pos:
                raise ValueError(
                    f"row {r.index} references unknown subsystem {j}"
                )
            own = by_index[j].level
            if abs(own - g) > 1e-9:
                raise ValueError(
                    f"row {r.index} carries level {g} for subsystem {j}, "
                    f"which reports {own}"
                )
        levels[pos[r.index]] = r.level

    A = np.zeros((len(order), len(order)))
    for r in results:
        for j, a in r.row.items():
            A[pos[r.index], pos[j]] = a

    for r in results:
        k = pos[r.index]
        row = A[k]
        off = np.delete(row, k)
        if off.size and off.min() < -1e-12:
            raise ValueError(f"row {r.index} is not Metzler: min {off.min()}")
        if row[k] + np.abs(off).sum() >= 0.0:
            raise ValueError(f"row {r.index} fails the Gershgorin test")
        if float(row @ levels) > 1e-12:
            raise ValueError(f"row {r.index} violates the level condition")
    if not (is_metzler(A) and gershgorin_hurwitz(A)
            and invariance_check(A, levels)):
        raise ValueError("assembled matrix fails a global re-check")
    return A


@dataclass
class SynthesisOptions:
    """Knobs for the full per-network run."""

    control_degree: int = 1
    multiplier_degree: int = 2
    cert_degree: int = 2
    expand: ExpandOptions | None = None
    fixed_bounds: Mapping[int, Sequence[float]] | None = None
    jobs: int = 1
    cache_dir: str | Path | None = None
    sdp: SdpSettings | None = None


def _cached_certificates(
    net: NetworkModel, opts: SynthesisOptions
) -> dict[int, LyapunovCertificate]:
    """Load or compute the one-time certificates, keyed by network content."""
    cache = None
    if opts.cache_dir is not None:
        cache = Path(opts.cache_dir) / net.content_hash() / f"deg{opts.cert_degree}"
        if cache.is_dir():
            paths = {s.index: cache / f"cert_{s.index}.json"
                     for s in net.subsystems}
            if all(p.is_file() for p in paths.values()):
                return {
                    idx: LyapunovCertificate.load(p) for idx, p in paths.items()
                }
    certs = certify_network(
        net, degree=opts.cert_degree, opts=opts.expand, jobs=opts.jobs
    )
    if cache is not None:
        cache.mkdir(parents=True, exist_ok=True)
        for idx, cert in certs.items():
            cert.save(cache / f"cert_{idx}.json")
    return certs


def make_inputs(
    net: NetworkModel,
    certs: Mapping[int, LyapunovCertificate],
    levels: Mapping[int, float],
    opts: "SynthesisOptions | None" = None,
) -> dict[int, SynthesisInput]:
    """Per-subsystem synthesis inputs, levels keyed by subsystem index."""
    opts = opts or SynthesisOptions()

    def one(sub: Subsystem) -> SynthesisInput:
        nbhd = net.neighborhoods[sub.index]
        caps = None
        if opts.fixed_bounds is not None and sub.index in opts.fixed_bounds:
            caps = tuple(float(b) for b in opts.fixed_bounds[sub.index])
        return SynthesisInput(
            subsystem=sub,
            neighborhood=nbhd,
            certificates={j: certs[j] for j in nbhd},
            levels={j: float(levels[j]) for j in nbhd},
            local_vars=net.neighborhood_states(sub.index),
            control_degree=opts.control_degree,
            multiplier_degree=opts.multiplier_degree,
            fixed_bounds=caps,
            sdp=opts.sdp,
        )

    return {sub.index: one(sub) for sub in net.subsystems}


def run_algorithm(
    net: NetworkModel,
    x0,
    opts: SynthesisOptions | None = None,
) -> dict:
    """One-time certification plus the per-subsystem synthesis round.

    Returns a dict with the certificates, levels, per-subsystem results,
    any per-subsystem failures, and (when everything succeeded) the
    assembled comparison matrix and its report.  A refusal at the initial
    levels propagates; per-subsystem synthesis failures do not, so partial
    results survive.
    """
    opts = opts or SynthesisOptions()
    certs = _cached_certificates(net, opts)
    levels = initial_levels(certs, x0, net)
    order = sorted(certs)
    level_by_index = {idx: float(levels[k]) for k, idx in enumerate(order)}
    inputs = make_inputs(net, certs, level_by_index, opts)

    def work(idx: int):
        try:
            return idx, synthesize_subsystem(inputs[idx]), None
        except SynthesisError as exc:
            return idx, None, str(exc)

    if opts.jobs > 1:
        with ThreadPoolExecutor(max_workers=opts.jobs) as pool:
            outcomes = list(pool.map(work, order))
    else:
        outcomes = [work(idx) for idx in order]

    results = {idx: res for idx, res, _ in outcomes if res is not None}
    failures = {idx: err for idx, _, err in outcomes if err is not None}

    out = {
        "certs": certs,
        "levels": levels,
        "inputs": inputs,
        "results": results,
        "failures": failures,
        "A": None,
        "report": None,
    }
    if not failures:
        A = assemble_comparison([results[idx] for idx in order])
        out["A"] = A
        out["report"] = comparison_report(A, levels)
    return out
