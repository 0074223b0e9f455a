"""Sparse multivariate polynomials over named real variables.

Polynomials are immutable: every operation returns a new object.  A
polynomial carries an explicit, ordered tuple of ambient variable names;
binary operations require both operands to share that tuple, and
``embed`` widens a polynomial into a larger ambient set.  Monomials are
ordered graded-lexicographically (total degree first, then leftmost
variable dominant), which fixes a canonical text form used for
serialization.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from itertools import combinations_with_replacement
from typing import Iterable, Mapping, Sequence

import numpy as np

__all__ = [
    "Monomial",
    "Polynomial",
    "PolynomialVector",
    "VariableMismatchError",
    "PolynomialParseError",
    "monomial_basis",
    "poly_grad",
    "lie_derivative",
]


class VariableMismatchError(ValueError):
    """Raised when operands disagree on the ambient variable tuple."""


class PolynomialParseError(ValueError):
    """Raised when a polynomial string cannot be parsed."""


@dataclass(frozen=True)
class Monomial:
    """A power product, stored as one exponent per ambient variable."""

    exponents: tuple[int, ...]

    def __post_init__(self) -> None:
        if any(e < 0 for e in self.exponents):
            raise ValueError(f"negative exponent in {self.exponents}")

    @property
    def degree(self) -> int:
        return sum(self.exponents)

    def __mul__(self, other: "Monomial") -> "Monomial":
        if len(self.exponents) != len(other.exponents):
            raise VariableMismatchError("monomials live in different ambient spaces")
        return Monomial(tuple(a + b for a, b in zip(self.exponents, other.exponents)))

    def grlex_key(self) -> tuple:
        # Total degree first; within a degree the leftmost variable wins,
        # so x**2 sorts before x*y which sorts before y**2.
        return (self.degree, tuple(-e for e in self.exponents))


def _as_monomial(key: "Monomial | tuple[int, ...]", n: int) -> Monomial:
    mono = key if isinstance(key, Monomial) else Monomial(tuple(int(e) for e in key))
    if len(mono.exponents) != n:
        raise VariableMismatchError(
            f"monomial has {len(mono.exponents)} exponents, ambient has {n} variables"
        )
    return mono


class Polynomial:
    """Immutable sparse polynomial with float64 coefficients."""

    __slots__ = ("vars", "terms")

    def __init__(
        self,
        vars: Sequence[str],
        terms: "Mapping[Monomial | tuple[int, ...], float] | None" = None,
    ) -> None:
        vt = tuple(vars)
        if len(set(vt)) != len(vt):
            raise ValueError(f"duplicate variable names in {vt}")
        normalized: dict[Monomial, float] = {}
        for key, coeff in (terms or {}).items():
            mono = _as_monomial(key, len(vt))
            c = normalized.get(mono, 0.0) + float(coeff)
            if c == 0.0:
                normalized.pop(mono, None)
            else:
                normalized[mono] = c
        object.__setattr__(self, "vars", vt)
        object.__setattr__(self, "terms", normalized)

    def __setattr__(self, name, value):  # pragma: no cover - guard rail
        raise AttributeError("Polynomial is immutable")

    # ------------------------------------------------------------------
    # constructors
    # ------------------------------------------------------------------

    @classmethod
    def zero(cls, vars: Sequence[str]) -> "Polynomial":
        return cls(vars, {})

    @classmethod
    def constant(cls, value: float, vars: Sequence[str]) -> "Polynomial":
        return cls(vars, {Monomial((0,) * len(tuple(vars))): value})

    @classmethod
    def variable(cls, name: str, vars: Sequence[str]) -> "Polynomial":
        vt = tuple(vars)
        if name not in vt:
            raise VariableMismatchError(f"{name!r} not among ambient variables {vt}")
        exps = [0] * len(vt)
        exps[vt.index(name)] = 1
        return cls(vt, {Monomial(tuple(exps)): 1.0})

    @classmethod
    def monomial(
        cls, mono: Monomial | tuple[int, ...], vars: Sequence[str], coeff: float = 1.0
    ) -> "Polynomial":
        return cls(vars, {mono: coeff})

    @classmethod
    def quadratic_form(cls, matrix: np.ndarray, vars: Sequence[str]) -> "Polynomial":
        """Build ``x^T P x`` from a square (not necessarily symmetric) matrix."""
        vt = tuple(vars)
        P = np.asarray(matrix, dtype=float)
        n = len(vt)
        if P.shape != (n, n):
            raise ValueError(f"matrix shape {P.shape} does not match {n} variables")
        terms: dict[Monomial, float] = {}
        for i in range(n):
            for j in range(n):
                if P[i, j] == 0.0:
                    continue
                exps = [0] * n
                exps[i] += 1
                exps[j] += 1
                mono = Monomial(tuple(exps))
                terms[mono] = terms.get(mono, 0.0) + P[i, j]
        return cls(vt, terms)

    # ------------------------------------------------------------------
    # structure
    # ------------------------------------------------------------------

    @property
    def is_zero(self) -> bool:
        return not self.terms

    @property
    def degree(self) -> int:
        """Total degree; the zero polynomial reports degree 0."""
        if not self.terms:
            return 0
        return max(m.degree for m in self.terms)

    def support(self) -> list[Monomial]:
        return sorted(self.terms, key=Monomial.grlex_key)

    def coefficient(self, mono: Monomial | tuple[int, ...]) -> float:
        return self.terms.get(_as_monomial(mono, len(self.vars)), 0.0)

    def variables_used(self) -> set[str]:
        used: set[str] = set()
        for mono in self.terms:
            for name, e in zip(self.vars, mono.exponents):
                if e > 0:
                    used.add(name)
        return used

    def __eq__(self, other) -> bool:
        if not isinstance(other, Polynomial):
            return NotImplemented
        return self.vars == other.vars and self.terms == other.terms

    def __hash__(self) -> int:
        return hash((self.vars, frozenset(self.terms.items())))

    # ------------------------------------------------------------------
    # arithmetic
    # ------------------------------------------------------------------

    def _check_vars(self, other: "Polynomial") -> None:
        if self.vars != other.vars:
            raise VariableMismatchError(
                f"ambient mismatch: {self.vars} vs {other.vars}; embed first"
            )

    def __add__(self, other: "Polynomial | float | int") -> "Polynomial":
        if isinstance(other, (int, float)):
            other = Polynomial.constant(float(other), self.vars)
        if not isinstance(other, Polynomial):
            return NotImplemented
        self._check_vars(other)
        merged = dict(self.terms)
        for mono, c in other.terms.items():
            merged[mono] = merged.get(mono, 0.0) + c
        return Polynomial(self.vars, merged)

    __radd__ = __add__

    def __neg__(self) -> "Polynomial":
        return Polynomial(self.vars, {m: -c for m, c in self.terms.items()})

    def __sub__(self, other: "Polynomial | float | int") -> "Polynomial":
        if isinstance(other, (int, float)):
            other = Polynomial.constant(float(other), self.vars)
        if not isinstance(other, Polynomial):
            return NotImplemented
        return self + (-other)

    def __rsub__(self, other: "float | int") -> "Polynomial":
        return (-self) + float(other)

    def __mul__(self, other: "Polynomial | float | int") -> "Polynomial":
        if isinstance(other, (int, float)):
            c = float(other)
            if c == 0.0:
                return Polynomial.zero(self.vars)
            return Polynomial(self.vars, {m: c * v for m, v in self.terms.items()})
        if not isinstance(other, Polynomial):
            return NotImplemented
        self._check_vars(other)
        out: dict[Monomial, float] = {}
        for ma, ca in self.terms.items():
            for mb, cb in other.terms.items():
                mono = ma * mb
                out[mono] = out.get(mono, 0.0) + ca * cb
        return Polynomial(self.vars, out)

    __rmul__ = __mul__

    def __pow__(self, k: int) -> "Polynomial":
        if not isinstance(k, int) or k < 0:
            raise ValueError("exponent must be a non-negative integer")
        result = Polynomial.constant(1.0, self.vars)
        base = self
        while k:
            if k & 1:
                result = result * base
            base = base * base if k > 1 else base
            k >>= 1
        return result

    # ------------------------------------------------------------------
    # calculus and evaluation
    # ------------------------------------------------------------------

    def partial(self, var: str) -> "Polynomial":
        if var not in self.vars:
            raise VariableMismatchError(f"{var!r} not among ambient variables")
        idx = self.vars.index(var)
        out: dict[Monomial, float] = {}
        for mono, c in self.terms.items():
            e = mono.exponents[idx]
            if e == 0:
                continue
            exps = list(mono.exponents)
            exps[idx] = e - 1
            key = Monomial(tuple(exps))
            out[key] = out.get(key, 0.0) + c * e
        return Polynomial(self.vars, out)

    def gradient(self) -> "PolynomialVector":
        return PolynomialVector(tuple(self.partial(v) for v in self.vars), self.vars)

    def evaluate(self, point: "Mapping[str, float] | Sequence[float] | np.ndarray") -> float:
        values = _point_to_array(point, self.vars)
        total = 0.0
        for mono, c in self.terms.items():
            term = c
            for e, x in zip(mono.exponents, values):
                if e:
                    term *= x**e
            total += term
        return total

    def __call__(self, point) -> float:
        return self.evaluate(point)

    # ------------------------------------------------------------------
    # variable manipulation
    # ------------------------------------------------------------------

    def embed(self, vars: Sequence[str]) -> "Polynomial":
        """Widen into a larger ambient variable tuple (order given by ``vars``)."""
        vt = tuple(vars)
        if vt == self.vars:
            return self
        missing = [v for v in self.vars if v not in vt]
        if missing:
            raise VariableMismatchError(f"target ambient lacks variables {missing}")
        pos = [vt.index(v) for v in self.vars]
        out: dict[Monomial, float] = {}
        for mono, c in self.terms.items():
            exps = [0] * len(vt)
            for p, e in zip(pos, mono.exponents):
                exps[p] = e
            out[Monomial(tuple(exps))] = c
        return Polynomial(vt, out)

    def set_zero(self, names: Iterable[str]) -> "Polynomial":
        """Substitute 0 for each named variable (ambient is unchanged)."""
        zero_idx = {self.vars.index(v) for v in names}
        out: dict[Monomial, float] = {}
        for mono, c in self.terms.items():
            if any(mono.exponents[i] for i in zero_idx):
                continue
            out[mono] = out.get(mono, 0.0) + c
        return Polynomial(self.vars, out)

    def project(self, vars: Sequence[str]) -> "Polynomial":
        """Re-express over a sub-tuple of the ambient variables.

        Fails if the polynomial depends on a variable outside ``vars``.
        """
        vt = tuple(vars)
        outside = self.variables_used() - set(vt)
        if outside:
            raise VariableMismatchError(
                f"polynomial depends on {sorted(outside)} outside target ambient"
            )
        pos = {v: i for i, v in enumerate(self.vars)}
        sel = [pos[v] for v in vt]
        out: dict[Monomial, float] = {}
        for mono, c in self.terms.items():
            exps = tuple(mono.exponents[i] for i in sel)
            key = Monomial(exps)
            out[key] = out.get(key, 0.0) + c
        return Polynomial(vt, out)

    # ------------------------------------------------------------------
    # text form
    # ------------------------------------------------------------------

    def to_string(self) -> str:
        if not self.terms:
            return "0"
        parts: list[str] = []
        display_key = lambda m: (-m.degree, tuple(-e for e in m.exponents))
        for mono in sorted(self.terms, key=display_key):
            c = self.terms[mono]
            factors = []
            for name, e in zip(self.vars, mono.exponents):
                if e == 1:
                    factors.append(name)
                elif e > 1:
                    factors.append(f"{name}^{e}")
            mag = abs(c)
            if factors and mag == 1.0:
                body = "*".join(factors)
            elif factors:
                body = "*".join([_format_coeff(mag)] + factors)
            else:
                body = _format_coeff(mag)
            if not parts:
                parts.append(body if c >= 0 else f"-{body}")
            else:
                parts.append(f"+ {body}" if c >= 0 else f"- {body}")
        return " ".join(parts)

    def __str__(self) -> str:
        return self.to_string()

    def __repr__(self) -> str:
        return f"Polynomial({self.to_string()!r}, vars={self.vars!r})"

    @classmethod
    def parse(cls, text: str, vars: "Sequence[str] | None" = None) -> "Polynomial":
        raw_terms = _parse_terms(text)
        if vars is None:
            seen: list[str] = []
            for _, factors in raw_terms:
                for name, _ in factors:
                    if name not in seen:
                        seen.append(name)
            vt = tuple(sorted(seen))
        else:
            vt = tuple(vars)
        index = {v: i for i, v in enumerate(vt)}
        terms: dict[Monomial, float] = {}
        for coeff, factors in raw_terms:
            exps = [0] * len(vt)
            for name, e in factors:
                if name not in index:
                    raise PolynomialParseError(
                        f"unknown variable {name!r}; ambient is {vt}"
                    )
                exps[index[name]] += e
            mono = Monomial(tuple(exps))
            terms[mono] = terms.get(mono, 0.0) + coeff
        return cls(vt, terms)


def _format_coeff(value: float) -> str:
    text = format(value, ".12g")
    return text


_TOKEN_RE = re.compile(
    r"\s*(?:(?P<num>\d+\.\d*(?:[eE][+-]?\d+)?|\.\d+(?:[eE][+-]?\d+)?|\d+(?:[eE][+-]?\d+)?)"
    r"|(?P<name>[A-Za-z_][A-Za-z_0-9]*)"
    r"|(?P<op>\*\*|[-+*^]))"
)


def _parse_terms(text: str) -> list[tuple[float, list[tuple[str, int]]]]:
    tokens: list[tuple[str, str]] = []
    pos = 0
    stripped = text.strip()
    if not stripped:
        raise PolynomialParseError("empty polynomial string")
    while pos < len(stripped):
        m = _TOKEN_RE.match(stripped, pos)
        if not m or m.end() == pos:
            raise PolynomialParseError(f"unexpected character at {stripped[pos:pos + 10]!r}")
        pos = m.end()
        for kind in ("num", "name", "op"):
            val = m.group(kind)
            if val is not None:
                tokens.append((kind, "^" if val == "**" else val))
                break
    terms: list[tuple[float, list[tuple[str, int]]]] = []
    i = 0
    n = len(tokens)
    while i < n:
        coeff = 1.0
        if tokens[i][0] == "op" and tokens[i][1] in "+-":
            # fold any run of leading signs
            while i < n and tokens[i][0] == "op" and tokens[i][1] in "+-":
                if tokens[i][1] == "-":
                    coeff = -coeff
                i += 1
            if i >= n:
                raise PolynomialParseError("dangling sign at end of input")
        factors: list[tuple[str, int]] = []
        consumed = 0
        expect_factor = True
        while i < n:
            kind, val = tokens[i]
            if kind == "op" and val in "+-":
                if not expect_factor:
                    break
                if val == "-":
                    coeff = -coeff
                i += 1
            elif kind == "num":
                if not expect_factor:
                    raise PolynomialParseError("missing '*' between factors")
                coeff *= float(val)
                i += 1
                consumed += 1
                expect_factor = False
            elif kind == "name":
                if not expect_factor:
                    raise PolynomialParseError("missing '*' between factors")
                exp = 1
                i += 1
                if i < n and tokens[i] == ("op", "^"):
                    i += 1
                    if i >= n or tokens[i][0] != "num":
                        raise PolynomialParseError("exponent must be an integer")
                    exp_val = float(tokens[i][1])
                    if exp_val != int(exp_val) or exp_val < 0:
                        raise PolynomialParseError(f"bad exponent {tokens[i][1]!r}")
                    exp = int(exp_val)
                    i += 1
                factors.append((val, exp))
                consumed += 1
                expect_factor = False
            elif kind == "op" and val == "*":
                if expect_factor:
                    raise PolynomialParseError("'*' without a preceding factor")
                i += 1
                expect_factor = True
            else:
                raise PolynomialParseError(f"unexpected token {val!r}")
        if consumed == 0:
            raise PolynomialParseError("empty term")
        if expect_factor:
            raise PolynomialParseError("dangling operator at end of term")
        terms.append((coeff, factors))
    return terms


def _point_to_array(
    point: "Mapping[str, float] | Sequence[float] | np.ndarray", vars: tuple[str, ...]
) -> np.ndarray:
    if isinstance(point, Mapping):
        try:
            return np.array([float(point[v]) for v in vars])
        except KeyError as exc:
            raise VariableMismatchError(f"point lacks value for {exc.args[0]!r}") from exc
    arr = np.asarray(point, dtype=float)
    if arr.shape != (len(vars),):
        raise VariableMismatchError(
            f"point has shape {arr.shape}, ambient has {len(vars)} variables"
        )
    return arr


class PolynomialVector:
    """A fixed-length tuple of polynomials over one shared ambient tuple."""

    __slots__ = ("entries", "vars")

    def __init__(self, entries: Sequence[Polynomial], vars: "Sequence[str] | None" = None):
        items = tuple(entries)
        if vars is None:
            if not items:
                raise ValueError("empty vector requires explicit variables")
            vt = items[0].vars
        else:
            vt = tuple(vars)
        for p in items:
            if p.vars != vt:
                raise VariableMismatchError("vector entries disagree on ambient variables")
        object.__setattr__(self, "entries", items)
        object.__setattr__(self, "vars", vt)

    def __setattr__(self, name, value):  # pragma: no cover - guard rail
        raise AttributeError("PolynomialVector is immutable")

    def __len__(self) -> int:
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    def __getitem__(self, k: int) -> Polynomial:
        return self.entries[k]

    def __eq__(self, other) -> bool:
        if not isinstance(other, PolynomialVector):
            return NotImplemented
        return self.vars == other.vars and self.entries == other.entries

    def __add__(self, other: "PolynomialVector") -> "PolynomialVector":
        if len(self) != len(other):
            raise ValueError("vector length mismatch")
        return PolynomialVector(
            tuple(a + b for a, b in zip(self.entries, other.entries)), self.vars
        )

    def embed(self, vars: Sequence[str]) -> "PolynomialVector":
        return PolynomialVector(tuple(p.embed(vars) for p in self.entries), vars)

    def evaluate(self, point) -> np.ndarray:
        values = _point_to_array(point, self.vars)
        return np.array([p.evaluate(values) for p in self.entries])

    def linear_coefficients(self) -> np.ndarray:
        """Jacobian at the origin: entry (k, l) is the coefficient of variable l in entry k."""
        n = len(self.vars)
        A = np.zeros((len(self.entries), n))
        for k, p in enumerate(self.entries):
            for l in range(n):
                exps = [0] * n
                exps[l] = 1
                A[k, l] = p.coefficient(Monomial(tuple(exps)))
        return A

    def __repr__(self) -> str:
        body = ", ".join(p.to_string() for p in self.entries)
        return f"PolynomialVector([{body}], vars={self.vars!r})"


def monomial_basis(vars: Sequence[str], degree: int) -> list[Monomial]:
    """All monomials of total degree <= ``degree``, graded-lex ordered."""
    if degree < 0:
        raise ValueError("degree must be non-negative")
    n = len(tuple(vars))
    basis: list[Monomial] = []
    for d in range(degree + 1):
        for combo in combinations_with_replacement(range(n), d):
            exps = [0] * n
            for idx in combo:
                exps[idx] += 1
            basis.append(Monomial(tuple(exps)))
    return basis


def poly_grad(p: Polynomial) -> PolynomialVector:
    """Gradient of ``p`` as a vector over the same ambient variables."""
    return p.gradient()


def lie_derivative(V: Polynomial, field: PolynomialVector) -> Polynomial:
    """Derivative of ``V`` along the vector field, ``sum_k dV/dx_k * field_k``.

    ``V`` may live on a sub-tuple of the field's ambient variables; its
    gradient is zero-padded on the rest.  The field must supply exactly one
    entry per ambient variable.
    """
    if len(field) != len(field.vars):
        raise VariableMismatchError(
            f"field has {len(field)} entries for {len(field.vars)} ambient variables"
        )
    Ve = V.embed(field.vars)
    total = Polynomial.zero(field.vars)
    for k, name in enumerate(field.vars):
        dk = Ve.partial(name)
        if dk.is_zero:
            continue
        total = total + dk * field[k]
    return total
