"""Sum-of-squares programs over decision polynomials.

A program owns named decisions (free polynomials with explicit monomial
support, sum-of-squares polynomials, free scalars, non-negative
scalars), constraints that are affine in those decisions (SOS
membership, identically-zero, scalar linear rows), and a linear
objective over scalar decisions.  ``compile`` lowers the program to one
standard-form SDP: each SOS constraint and each SOS decision gets a
Gram block whose basis spans all monomials up to half the constraint
degree over the variables that actually appear, and coefficient
matching becomes sparse equality rows.

``check_sos`` answers the one-shot question "is this fixed polynomial a
sum of squares", returning an explicit Gram factorization on success.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from vecstab.polynomials import (
    Monomial,
    Polynomial,
    monomial_basis,
)
from vecstab.sdp_backend import (
    STATUS_OPTIMAL,
    SdpProblem,
    SdpSettings,
    SdpSolution,
    solve_sdp,
)

__all__ = [
    "SosStructureError",
    "DecisionRef",
    "PolyExpr",
    "SosProgram",
    "SosSolution",
    "SosCheck",
    "check_sos",
    "gram_polynomial",
    "solve_with_fallback",
    "STRICT_MARGIN",
]

# margin used when compiling strict scalar inequalities as closed ones
STRICT_MARGIN = 1e-6


class SosStructureError(ValueError):
    """Malformed program: odd degrees, nonlinear decision use, bad names."""


def _union_vars(a: Sequence[str], b: Sequence[str]) -> tuple[str, ...]:
    out = list(a)
    for v in b:
        if v not in out:
            out.append(v)
    return tuple(out)


@dataclass(frozen=True)
class DecisionRef:
    """Handle to a named decision; supports building affine expressions."""

    name: str
    kind: str  # "free_poly" | "sos_poly" | "free_scalar" | "nonneg_scalar"
    vars: tuple[str, ...] = ()
    support: tuple[Monomial, ...] = ()
    degree: int = 0
    min_degree: int = 0

    def coeff(self, mono: Monomial | tuple[int, ...]) -> "PolyExpr":
        """One coefficient of a free polynomial decision, as a scalar atom."""
        if self.kind != "free_poly":
            raise SosStructureError("coeff() applies to free polynomial decisions")
        m = mono if isinstance(mono, Monomial) else Monomial(tuple(mono))
        if m not in self.support:
            raise SosStructureError(f"monomial {m} not in support of {self.name!r}")
        one = Polynomial.constant(1.0, self.vars)
        return PolyExpr(self.vars, Polynomial.zero(self.vars),
                        {("coeff", self.name, m): one})

    def _as_expr(self) -> "PolyExpr":
        return self * 1.0

    def __mul__(self, other: "Polynomial | float | int") -> "PolyExpr":
        if isinstance(other, (int, float)):
            other = Polynomial.constant(float(other), self.vars or ())
        if not isinstance(other, Polynomial):
            return NotImplemented
        ambient = _union_vars(self.vars, other.vars)
        q = other.embed(ambient)
        terms: dict[tuple, Polynomial] = {}
        if self.kind in ("free_scalar", "nonneg_scalar"):
            terms[("scalar", self.name)] = q
        elif self.kind == "free_poly":
            for m in self.support:
                mono_poly = Polynomial.monomial(m, self.vars).embed(ambient)
                terms[("coeff", self.name, m)] = q * mono_poly
        elif self.kind == "sos_poly":
            terms[("gram", self.name)] = q
        else:  # pragma: no cover
            raise SosStructureError(f"unknown decision kind {self.kind!r}")
        return PolyExpr(ambient, Polynomial.zero(ambient), terms)

    __rmul__ = __mul__

    def __neg__(self) -> "PolyExpr":
        return self * -1.0

    def __add__(self, other) -> "PolyExpr":
        return self._as_expr() + other

    def __radd__(self, other) -> "PolyExpr":
        return self._as_expr() + other

    def __sub__(self, other) -> "PolyExpr":
        return self._as_expr() - other

    def __rsub__(self, other) -> "PolyExpr":
        return (-self) + other


class PolyExpr:
    """Polynomial-valued expression, affine in scalar and Gram atoms.

    Atoms are keyed ("scalar", name), ("coeff", name, monomial) or
    ("gram", name); each carries a known polynomial multiplier.
    """

    __slots__ = ("vars", "const", "terms")

    def __init__(
        self,
        vars: Sequence[str],
        const: Polynomial,
        terms: Mapping[tuple, Polynomial] | None = None,
    ) -> None:
        self.vars = tuple(vars)
        self.const = const.embed(self.vars)
        self.terms = {k: q.embed(self.vars) for k, q in (terms or {}).items()}

    @classmethod
    def of(cls, p: "Polynomial | float | int", vars: Sequence[str] = ()) -> "PolyExpr":
        if isinstance(p, (int, float)):
            p = Polynomial.constant(float(p), vars)
        return cls(p.vars, p, {})

    def _coerce(self, other) -> "PolyExpr | None":
        if isinstance(other, PolyExpr):
            return other
        if isinstance(other, DecisionRef):
            return other._as_expr()
        if isinstance(other, Polynomial):
            return PolyExpr.of(other)
        if isinstance(other, (int, float)):
            return PolyExpr.of(Polynomial.constant(float(other), self.vars))
        return None

    def __add__(self, other) -> "PolyExpr":
        rhs = self._coerce(other)
        if rhs is None:
            return NotImplemented
        ambient = _union_vars(self.vars, rhs.vars)
        const = self.const.embed(ambient) + rhs.const.embed(ambient)
        terms = {k: q.embed(ambient) for k, q in self.terms.items()}
        for k, q in rhs.terms.items():
            qe = q.embed(ambient)
            terms[k] = terms[k] + qe if k in terms else qe
        return PolyExpr(ambient, const, terms)

    __radd__ = __add__

    def __neg__(self) -> "PolyExpr":
        return PolyExpr(
            self.vars, -self.const, {k: -q for k, q in self.terms.items()}
        )

    def __sub__(self, other) -> "PolyExpr":
        rhs = self._coerce(other)
        if rhs is None:
            return NotImplemented
        return self + (-rhs)

    def __rsub__(self, other) -> "PolyExpr":
        return (-self) + other

    def __mul__(self, other) -> "PolyExpr":
        if isinstance(other, (DecisionRef, PolyExpr)):
            raise SosStructureError(
                "expressions must stay affine in decisions; "
                "cannot multiply two decision-bearing values"
            )
        if isinstance(other, (int, float)):
            other = Polynomial.constant(float(other), self.vars)
        if not isinstance(other, Polynomial):
            return NotImplemented
        ambient = _union_vars(self.vars, other.vars)
        q = other.embed(ambient)
        return PolyExpr(
            ambient,
            self.const.embed(ambient) * q,
            {k: mult.embed(ambient) * q for k, mult in self.terms.items()},
        )

    __rmul__ = __mul__


@dataclass
class _SosConstraint:
    expr: PolyExpr
    zero: bool  # True: expression == 0; False: expression is SOS
    label: str = ""


@dataclass
class _LinearConstraint:
    coeffs: dict[str, float]
    rhs: float
    sense: str  # "<=", ">=", "=="
    strict: bool = False


@dataclass
class CompiledProgram:
    sdp: SdpProblem
    scalar_entries: dict[str, tuple]
    coeff_entries: dict[tuple[str, Monomial], tuple]
    decision_grams: dict[str, tuple[int, tuple[str, ...], list[Monomial]]]
    constraint_grams: list[tuple[int, tuple[str, ...], list[Monomial], str]]


class SosProgram:
    """Builder for one sum-of-squares feasibility/optimization program."""

    def __init__(self, strict_margin: float = STRICT_MARGIN) -> None:
        self._decisions: dict[str, DecisionRef] = {}
        self._sos_constraints: list[_SosConstraint] = []
        self._linear_constraints: list[_LinearConstraint] = []
        self._objective: dict[str, float] = {}
        self._objective_offset: float = 0.0
        self.strict_margin = strict_margin

    # -- decisions -----------------------------------------------------------

    def _register(self, ref: DecisionRef) -> DecisionRef:
        if ref.name in self._decisions:
            raise SosStructureError(f"duplicate decision name {ref.name!r}")
        self._decisions[ref.name] = ref
        return ref

    def free_poly(
        self,
        name: str,
        vars: Sequence[str],
        support: Iterable[Monomial | tuple[int, ...]] | None = None,
        degree: int | None = None,
        min_degree: int = 0,
    ) -> DecisionRef:
        """Polynomial decision with explicitly listed monomial support."""
        vt = tuple(vars)
        if support is None:
            if degree is None:
                raise SosStructureError("free_poly needs a support or a degree")
            monos = [m for m in monomial_basis(vt, degree) if m.degree >= min_degree]
        else:
            monos = [
                m if isinstance(m, Monomial) else Monomial(tuple(m)) for m in support
            ]
            if any(len(m.exponents) != len(vt) for m in monos):
                raise SosStructureError("support monomials do not match variables")
        if not monos:
            raise SosStructureError(f"free_poly {name!r} has empty support")
        deg = max(m.degree for m in monos)
        return self._register(
            DecisionRef(name, "free_poly", vt, tuple(monos), deg)
        )

    def sos_poly(
        self, name: str, vars: Sequence[str], degree: int, min_degree: int = 0
    ) -> DecisionRef:
        """SOS polynomial decision; ``min_degree > 0`` drops low Gram rows.

        With ``min_degree = 2`` the Gram basis starts at the linear
        monomials, so the recovered polynomial vanishes at the origin
        exactly instead of up to solver tolerance.
        """
        if degree < 0 or degree % 2 != 0:
            raise SosStructureError(
                f"sos_poly {name!r} needs an even non-negative degree, got {degree}"
            )
        if min_degree < 0 or min_degree % 2 != 0 or min_degree > degree:
            raise SosStructureError(
                f"sos_poly {name!r}: min_degree {min_degree} must be even, "
                f"non-negative and at most {degree}"
            )
        return self._register(
            DecisionRef(name, "sos_poly", tuple(vars), (), degree, min_degree)
        )

    def free_scalar(self, name: str) -> DecisionRef:
        return self._register(DecisionRef(name, "free_scalar"))

    def nonneg_scalar(self, name: str) -> DecisionRef:
        return self._register(DecisionRef(name, "nonneg_scalar"))

    # -- constraints -----------------------------------------------------------

    def _validate_expr(self, expr: PolyExpr) -> None:
        for key in expr.terms:
            name = key[1]
            if name not in self._decisions:
                raise SosStructureError(f"unknown decision {name!r} in expression")
            kind = self._decisions[name].kind
            if key[0] == "scalar" and kind not in ("free_scalar", "nonneg_scalar"):
                raise SosStructureError(f"{name!r} used as scalar but is {kind}")
            if key[0] == "coeff" and kind != "free_poly":
                raise SosStructureError(f"{name!r} used as free_poly but is {kind}")
            if key[0] == "gram" and kind != "sos_poly":
                raise SosStructureError(f"{name!r} used as sos_poly but is {kind}")

    def add_sos(self, expr: "PolyExpr | Polynomial", label: str = "") -> int:
        if isinstance(expr, Polynomial):
            expr = PolyExpr.of(expr)
        elif isinstance(expr, DecisionRef):
            expr = expr._as_expr()
        self._validate_expr(expr)
        self._sos_constraints.append(_SosConstraint(expr, zero=False, label=label))
        return len(self._sos_constraints) - 1

    def add_zero(self, expr: "PolyExpr | Polynomial", label: str = "") -> int:
        if isinstance(expr, Polynomial):
            expr = PolyExpr.of(expr)
        self._validate_expr(expr)
        self._sos_constraints.append(_SosConstraint(expr, zero=True, label=label))
        return len(self._sos_constraints) - 1

    def add_linear(
        self,
        coeffs: Mapping[DecisionRef | str, float],
        rhs: float,
        sense: str = "<=",
        strict: bool = False,
    ) -> None:
        """Scalar linear constraint over scalar decisions.

        Strict inequalities are compiled as closed ones shifted inward by
        ``strict_margin``.
        """
        if sense not in ("<=", ">=", "=="):
            raise SosStructureError(f"bad sense {sense!r}")
        if strict and sense == "==":
            raise SosStructureError("equality cannot be strict")
        named: dict[str, float] = {}
        for key, c in coeffs.items():
            name = key.name if isinstance(key, DecisionRef) else key
            if name not in self._decisions:
                raise SosStructureError(f"unknown decision {name!r}")
            if self._decisions[name].kind not in ("free_scalar", "nonneg_scalar"):
                raise SosStructureError(
                    f"linear constraints take scalar decisions, {name!r} is not"
                )
            named[name] = named.get(name, 0.0) + float(c)
        self._linear_constraints.append(
            _LinearConstraint(named, float(rhs), sense, strict)
        )

    def minimize(
        self, coeffs: Mapping[DecisionRef | str, float], offset: float = 0.0
    ) -> None:
        named: dict[str, float] = {}
        for key, c in coeffs.items():
            name = key.name if isinstance(key, DecisionRef) else key
            if name not in self._decisions:
                raise SosStructureError(f"unknown decision {name!r}")
            if self._decisions[name].kind not in ("free_scalar", "nonneg_scalar"):
                raise SosStructureError("objective is linear in scalar decisions only")
            named[name] = named.get(name, 0.0) + float(c)
        self._objective = named
        self._objective_offset = float(offset)

    def maximize(
        self, coeffs: Mapping[DecisionRef | str, float], offset: float = 0.0
    ) -> None:
        self.minimize({k: -c for k, c in coeffs.items()}, offset=-offset)

    # -- compilation -----------------------------------------------------------

    def compile(self) -> CompiledProgram:
        sdp = SdpProblem()
        scalar_entries: dict[str, tuple] = {}
        coeff_entries: dict[tuple[str, Monomial], tuple] = {}
        decision_grams: dict[str, tuple[int, tuple[str, ...], list[Monomial]]] = {}

        for name, ref in self._decisions.items():
            if ref.kind == "free_scalar":
                scalar_entries[name] = ("free", sdp.add_free())
            elif ref.kind == "nonneg_scalar":
                scalar_entries[name] = ("nonneg", sdp.add_nonneg())
            elif ref.kind == "free_poly":
                for m in ref.support:
                    coeff_entries[(name, m)] = ("free", sdp.add_free())
            elif ref.kind == "sos_poly":
                basis = [
                    m for m in monomial_basis(ref.vars, ref.degree // 2)
                    if m.degree >= ref.min_degree // 2
                ]
                block = sdp.add_psd_block(len(basis))
                decision_grams[name] = (block, ref.vars, basis)

        constraint_grams: list[tuple[int, tuple[str, ...], list[Monomial], str]] = []
        for con in self._sos_constraints:
            self._compile_poly_constraint(
                con, sdp, scalar_entries, coeff_entries, decision_grams,
                constraint_grams,
            )

        for lin in self._linear_constraints:
            self._compile_linear(lin, sdp, scalar_entries)

        obj = {scalar_entries[name]: c for name, c in self._objective.items()}
        sdp.set_objective(obj, offset=self._objective_offset)
        return CompiledProgram(sdp, scalar_entries, coeff_entries,
                               decision_grams, constraint_grams)

    def _expr_used_vars(self, expr: PolyExpr) -> tuple[str, ...]:
        used = set(expr.const.variables_used())
        for key, mult in expr.terms.items():
            used |= mult.variables_used()
            if key[0] == "gram":
                used |= set(self._decisions[key[1]].vars)
        return tuple(v for v in expr.vars if v in used)

    def _expr_degree(self, expr: PolyExpr) -> int:
        deg = expr.const.degree if not expr.const.is_zero else 0
        for key, mult in expr.terms.items():
            if mult.is_zero:
                continue
            extra = self._decisions[key[1]].degree if key[0] == "gram" else 0
            deg = max(deg, mult.degree + extra)
        return deg

    def _compile_poly_constraint(
        self, con, sdp, scalar_entries, coeff_entries, decision_grams,
        constraint_grams,
    ) -> None:
        expr = con.expr
        used = self._expr_used_vars(expr)
        degree = self._expr_degree(expr)
        rows: dict[Monomial, dict[tuple, float]] = {}
        n_ambient = len(expr.vars)
        pos = {v: expr.vars.index(v) for v in used}

        def ambient_mono(local: Monomial, local_vars: tuple[str, ...]) -> Monomial:
            exps = [0] * n_ambient
            for v, e in zip(local_vars, local.exponents):
                if e:
                    exps[expr.vars.index(v)] = e
            return Monomial(tuple(exps))

        def bump(mono: Monomial, entry: tuple, value: float) -> None:
            row = rows.setdefault(mono, {})
            row[entry] = row.get(entry, 0.0) + value

        for key, mult in expr.terms.items():
            if key[0] == "scalar":
                entry = scalar_entries[key[1]]
                for mono, c in mult.terms.items():
                    bump(mono, entry, c)
            elif key[0] == "coeff":
                entry = coeff_entries[(key[1], key[2])]
                for mono, c in mult.terms.items():
                    bump(mono, entry, c)
            elif key[0] == "gram":
                block, dvars, basis = decision_grams[key[1]]
                emb = [ambient_mono(b, dvars) for b in basis]
                for i in range(len(basis)):
                    for j in range(i, len(basis)):
                        pair = emb[i] * emb[j]
                        weight = 1.0 if i == j else 2.0
                        for mono, c in mult.terms.items():
                            bump(pair * mono, ("psd", block, i, j), weight * c)

        if not con.zero:
            if degree % 2 != 0:
                raise SosStructureError(
                    f"SOS constraint {con.label or ''!r} has odd degree {degree}"
                )
            basis_local = monomial_basis(used, degree // 2)
            block = sdp.add_psd_block(len(basis_local))
            emb = [ambient_mono(b, used) for b in basis_local]
            for i in range(len(basis_local)):
                for j in range(i, len(basis_local)):
                    weight = 1.0 if i == j else 2.0
                    bump(emb[i] * emb[j], ("psd", block, i, j), -weight)
            constraint_grams.append((block, used, basis_local, con.label))

        monos = set(rows) | set(expr.const.terms)
        for mono in sorted(monos, key=Monomial.grlex_key):
            sdp.add_equality(rows.get(mono, {}), -expr.const.coefficient(mono))

    def _compile_linear(self, lin, sdp, scalar_entries) -> None:
        coeffs = {scalar_entries[name]: c for name, c in lin.coeffs.items()}
        rhs = lin.rhs
        sense = lin.sense
        if sense == ">=":
            coeffs = {e: -c for e, c in coeffs.items()}
            rhs = -rhs
            sense = "<="
        if sense == "<=":
            if lin.strict:
                rhs -= self.strict_margin
            slack = ("nonneg", sdp.add_nonneg())
            coeffs[slack] = coeffs.get(slack, 0.0) + 1.0
        sdp.add_equality(coeffs, rhs)

    # -- solve -----------------------------------------------------------------

    def solve(self, settings: SdpSettings | None = None) -> "SosSolution":
        compiled = self.compile()
        sol = solve_sdp(compiled.sdp, settings)
        return SosSolution(self, compiled, sol)


class SosSolution:
    """Decision values recovered from a solved program."""

    def __init__(self, program: SosProgram, compiled: CompiledProgram,
                 sdp_solution: SdpSolution) -> None:
        self.program = program
        self.compiled = compiled
        self.sdp = sdp_solution

    @property
    def status(self) -> str:
        return self.sdp.status

    @property
    def is_optimal(self) -> bool:
        return self.sdp.status == STATUS_OPTIMAL

    @property
    def objective_value(self) -> float | None:
        return self.sdp.primal_objective

    def value(self, ref: DecisionRef | str):
        name = ref.name if isinstance(ref, DecisionRef) else ref
        decl = self.program._decisions.get(name)
        if decl is None:
            raise SosStructureError(f"unknown decision {name!r}")
        if not self.is_optimal:
            raise SosStructureError(f"no values: solver status {self.status!r}")
        if decl.kind in ("free_scalar", "nonneg_scalar"):
            return self.sdp.value(self.compiled.scalar_entries[name])
        if decl.kind == "free_poly":
            terms = {
                m: self.sdp.value(self.compiled.coeff_entries[(name, m)])
                for m in decl.support
            }
            return Polynomial(decl.vars, terms)
        block, dvars, basis = self.compiled.decision_grams[name]
        return gram_polynomial(basis, self.sdp.psd[block], dvars)

    def gram(self, ref: DecisionRef | str) -> tuple[list[Monomial], np.ndarray]:
        name = ref.name if isinstance(ref, DecisionRef) else ref
        block, _, basis = self.compiled.decision_grams[name]
        return basis, self.sdp.psd[block]

    def constraint_gram(self, index: int) -> tuple[tuple[str, ...], list[Monomial], np.ndarray]:
        block, used, basis, _ = self.compiled.constraint_grams[index]
        return used, basis, self.sdp.psd[block]


def solve_with_fallback(
    prog: SosProgram, settings: SdpSettings | None = None
) -> SosSolution:
    """Solve, retrying on the other backend after a numerical failure."""
    sol = prog.solve(settings)
    if sol.status == "numerical_failure":
        primary = sol.sdp.backend
        other = "reference" if primary == "cvxopt" else "cvxopt"
        retry = SdpSettings(backend=other) if settings is None else SdpSettings(
            feasibility_tol=settings.feasibility_tol,
            psd_tol=settings.psd_tol,
            gap_tol=settings.gap_tol,
            max_iters=settings.max_iters,
            backend=other,
        )
        sol = prog.solve(retry)
    return sol


def gram_polynomial(
    basis: Sequence[Monomial], Q: np.ndarray, vars: Sequence[str]
) -> Polynomial:
    """Expand ``z^T Q z`` for the given monomial basis ``z``."""
    terms: dict[Monomial, float] = {}
    n = len(basis)
    for i in range(n):
        for j in range(i, n):
            w = (1.0 if i == j else 2.0) * float(Q[i, j])
            if w == 0.0:
                continue
            mono = basis[i] * basis[j]
            terms[mono] = terms.get(mono, 0.0) + w
    return Polynomial(tuple(vars), terms)


@dataclass
class SosCheck:
    """Outcome of a sum-of-squares membership test."""

    ok: bool
    reason: str = ""
    basis: list[Monomial] = field(default_factory=list)
    gram: np.ndarray | None = None
    factors: list[Polynomial] = field(default_factory=list)
    max_coefficient_error: float = float("nan")
    min_eigenvalue: float = float("nan")
    status: str = ""


def check_sos(
    p: Polynomial,
    settings: SdpSettings | None = None,
    reconstruction_tol: float = 1e-6,
) -> SosCheck:
    """Decide SOS membership of a fixed polynomial.

    On success the returned Gram factorization satisfies
    ``p = z^T Q z`` with every coefficient reproduced to
    ``reconstruction_tol`` and ``Q`` positive semidefinite up to the
    solver's PSD tolerance.  Structural defects such as odd degree raise
    ``SosStructureError``; solver refusals are reported, not raised.
    """
    settings = settings or SdpSettings()
    if p.degree % 2 != 0:
        raise SosStructureError(f"polynomial of odd degree {p.degree} cannot be SOS")
    used = tuple(v for v in p.vars if v in p.variables_used())
    reduced = p.project(used) if used != p.vars else p
    # Feasibility with unit-scaled coefficients.  Sums of squares with real
    # zeros put every feasible Gram matrix on the cone boundary, where an
    # objective pushing toward low rank makes interior-point steps collapse.
    scale = max((abs(c) for c in reduced.terms.values()), default=1.0)
    scaled = reduced * (1.0 / scale)
    basis = monomial_basis(used, reduced.degree // 2)
    sdp = SdpProblem()
    block = sdp.add_psd_block(len(basis))
    rows: dict[Monomial, dict[tuple, float]] = {}
    for i in range(len(basis)):
        for j in range(i, len(basis)):
            mono = basis[i] * basis[j]
            row = rows.setdefault(mono, {})
            entry = ("psd", block, i, j)
            row[entry] = row.get(entry, 0.0) + (1.0 if i == j else 2.0)
    monos = set(rows) | set(scaled.terms)
    for mono in sorted(monos, key=Monomial.grlex_key):
        sdp.add_equality(rows.get(mono, {}), scaled.coefficient(mono))

    sol = solve_sdp(sdp, settings)
    if sol.status == "numerical_failure":
        other = "reference" if sol.backend == "cvxopt" else "cvxopt"
        retry = SdpSettings(
            feasibility_tol=settings.feasibility_tol,
            psd_tol=settings.psd_tol,
            gap_tol=settings.gap_tol,
            max_iters=settings.max_iters,
            backend=other,
        )
        sol = solve_sdp(sdp, retry)
    if sol.status != STATUS_OPTIMAL:
        reason = {
            "infeasible": "no positive semidefinite Gram matrix matches the coefficients",
            "unbounded": "solver reported an unbounded reformulation",
        }.get(sol.status, f"solver failed ({sol.message or sol.status})")
        return SosCheck(ok=False, reason=reason, status=sol.status, basis=basis)

    Q = sol.psd[0] * scale
    recon = gram_polynomial(basis, Q, used)
    err = 0.0
    for mono in set(recon.terms) | set(reduced.terms):
        err = max(err, abs(recon.coefficient(mono) - reduced.coefficient(mono)))
    eigvals, eigvecs = np.linalg.eigh(Q)
    min_eig = float(eigvals.min()) if eigvals.size else 0.0
    if err > reconstruction_tol:
        return SosCheck(
            ok=False,
            reason=f"Gram reconstruction error {err:.2e} exceeds {reconstruction_tol:.0e}",
            basis=basis, gram=Q, max_coefficient_error=err,
            min_eigenvalue=min_eig, status=sol.status,
        )
    if min_eig < -settings.psd_tol:
        return SosCheck(
            ok=False,
            reason=f"Gram matrix has eigenvalue {min_eig:.2e} below tolerance",
            basis=basis, gram=Q, max_coefficient_error=err,
            min_eigenvalue=min_eig, status=sol.status,
        )

    factors: list[Polynomial] = []
    if eigvals.size:
        cutoff = max(eigvals.max(), 0.0) * 1e-14
        for t in range(len(eigvals)):
            lam = eigvals[t]
            if lam <= cutoff:
                continue
            coeffs = np.sqrt(lam) * eigvecs[:, t]
            terms = {
                basis[k]: float(coeffs[k])
                for k in range(len(basis))
                if coeffs[k] != 0.0
            }
            factors.append(Polynomial(used, terms))
    return SosCheck(
        ok=True, basis=basis, gram=Q, factors=factors,
        max_coefficient_error=err, min_eigenvalue=min_eig, status=sol.status,
    )
