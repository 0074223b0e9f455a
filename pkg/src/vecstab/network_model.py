"""Decomposed nonlinear networks: subsystems, interactions, neighborhoods.

A network is a list of subsystems, each owning a few state variables,
an isolated vector field f_i over its own states, and an interaction
term g_i over the full ambient state that vanishes whenever every
variable outside the subsystem is zero.  Neighborhoods are derived
symbolically from which foreign variables each g_i actually touches.

State overlap between subsystems is representable; when a variable has
several owners their defining equations must agree symbolically, and
the assembled ambient field uses that single agreed equation.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from vecstab import _jsonio
from vecstab.polynomials import Polynomial, PolynomialVector

__all__ = [
    "NetworkStructureError",
    "Subsystem",
    "NetworkModel",
    "derive_neighborhoods",
    "generate_vdp_network",
    "assemble_closed_loop",
    "VDP_TOPOLOGY",
]


class NetworkStructureError(ValueError):
    """Structural defect in a network, policy set, or serialized form."""


@dataclass(frozen=True)
class Subsystem:
    """One node: states, isolated dynamics, interaction, control mask."""

    index: int
    states: tuple[str, ...]
    f: PolynomialVector
    g: PolynomialVector
    controlled: tuple[bool, ...]

    def __post_init__(self):
        n = len(self.states)
        if len(self.f) != n or len(self.g) != n or len(self.controlled) != n:
            raise NetworkStructureError(
                f"subsystem {self.index}: f, g and controlled mask must have "
                f"one entry per state"
            )
        if self.f.vars != self.states:
            raise NetworkStructureError(
                f"subsystem {self.index}: isolated dynamics must be over the "
                f"subsystem states {self.states}"
            )
        origin = {v: 0.0 for v in self.states}
        for k, p in enumerate(self.f.entries):
            if p.evaluate(origin) != 0.0:
                raise NetworkStructureError(
                    f"subsystem {self.index}: f[{k}] does not vanish at the origin"
                )

    @property
    def n_states(self) -> int:
        return len(self.states)


class NetworkModel:
    """Immutable collection of subsystems over a shared ambient state."""

    def __init__(
        self,
        subsystems: Sequence[Subsystem],
        seed: int | None = None,
        params: dict | None = None,
    ) -> None:
        if len(subsystems) == 0:
            raise NetworkStructureError("network needs at least one subsystem")
        indices = [s.index for s in subsystems]
        if len(set(indices)) != len(indices):
            raise NetworkStructureError(f"duplicate subsystem indices in {indices}")
        self.subsystems: tuple[Subsystem, ...] = tuple(
            sorted(subsystems, key=lambda s: s.index)
        )
        ambient: list[str] = []
        for sub in self.subsystems:
            for v in sub.states:
                if v not in ambient:
                    ambient.append(v)
        self.ambient: tuple[str, ...] = tuple(ambient)
        self.seed = seed
        self.params = params
        self._by_index = {s.index: s for s in self.subsystems}

        for sub in self.subsystems:
            if sub.g.vars != self.ambient:
                raise NetworkStructureError(
                    f"subsystem {sub.index}: interaction terms must be over the "
                    f"ambient variables"
                )
            outside = [v for v in self.ambient if v not in sub.states]
            for k, p in enumerate(sub.g.entries):
                if not p.set_zero(outside).is_zero:
                    raise NetworkStructureError(
                        f"subsystem {sub.index}: g[{k}] does not vanish when "
                        f"foreign variables are zero"
                    )

        self.neighborhoods: dict[int, tuple[int, ...]] = derive_neighborhoods(self)

    @property
    def m(self) -> int:
        return len(self.subsystems)

    def subsystem(self, index: int) -> Subsystem:
        try:
            return self._by_index[index]
        except KeyError:
            raise NetworkStructureError(f"no subsystem with index {index}") from None

    def owners(self, var: str) -> list[int]:
        return [s.index for s in self.subsystems if var in s.states]

    def neighborhood_states(self, index: int) -> tuple[str, ...]:
        """Ambient-ordered union of states over the neighborhood."""
        members = set(self.neighborhoods[index])
        keep = set()
        for j in members:
            keep.update(self.subsystem(j).states)
        return tuple(v for v in self.ambient if v in keep)

    def split_state(self, x0: Sequence[float]) -> dict[int, np.ndarray]:
        """Partition an ambient vector onto each subsystem's states."""
        x = np.asarray(x0, dtype=float).reshape(-1)
        if x.shape[0] != len(self.ambient):
            raise NetworkStructureError(
                f"state vector length {x.shape[0]} != ambient dimension "
                f"{len(self.ambient)}"
            )
        pos = {v: k for k, v in enumerate(self.ambient)}
        return {
            s.index: np.array([x[pos[v]] for v in s.states])
            for s in self.subsystems
        }

    def open_loop_field(self) -> PolynomialVector:
        return assemble_closed_loop(self, None)

    # -- serialization ---------------------------------------------------------

    def to_json(self) -> dict:
        data = {
            "subsystems": [
                {
                    "index": s.index,
                    "states": list(s.states),
                    "f": [p.to_string() for p in s.f.entries],
                    "g": [p.to_string() for p in s.g.entries],
                    "controlled": list(s.controlled),
                }
                for s in self.subsystems
            ]
        }
        if self.seed is not None:
            data["seed"] = self.seed
        if self.params is not None:
            data["params"] = self.params
        return data

    @classmethod
    def from_json(cls, data: Mapping) -> "NetworkModel":
        try:
            raw = data["subsystems"]
        except (KeyError, TypeError):
            raise NetworkStructureError("network JSON lacks a 'subsystems' list")
        ambient: list[str] = []
        for entry in raw:
            for v in entry["states"]:
                if v not in ambient:
                    ambient.append(v)
        subs = []
        for entry in raw:
            states = tuple(entry["states"])
            try:
                f = PolynomialVector(
                    tuple(Polynomial.parse(t, states) for t in entry["f"]), states
                )
                g = PolynomialVector(
                    tuple(Polynomial.parse(t, tuple(ambient)) for t in entry["g"]),
                    tuple(ambient),
                )
            except ValueError as exc:
                raise NetworkStructureError(
                    f"subsystem {entry.get('index')}: {exc}"
                ) from exc
            subs.append(
                Subsystem(
                    index=int(entry["index"]),
                    states=states,
                    f=f,
                    g=g,
                    controlled=tuple(bool(b) for b in entry["controlled"]),
                )
            )
        return cls(subs, seed=data.get("seed"), params=data.get("params"))

    def save(self, path) -> None:
        _jsonio.dump_json(self.to_json(), path)

    @classmethod
    def load(cls, path) -> "NetworkModel":
        return cls.from_json(_jsonio.load_json(path))

    def content_hash(self) -> str:
        return _jsonio.content_hash(self.to_json())


def derive_neighborhoods(net) -> dict[int, tuple[int, ...]]:
    """Index sets: j is a neighbor of i when g_i touches a state of j.

    Always contains i itself; listed with i first, then ascending.
    """
    subsystems = net.subsystems if isinstance(net, NetworkModel) else tuple(net)
    var_owners: dict[str, set[int]] = {}
    for sub in subsystems:
        for v in sub.states:
            var_owners.setdefault(v, set()).add(sub.index)
    out: dict[int, tuple[int, ...]] = {}
    for sub in subsystems:
        members: set[int] = set()
        for p in sub.g.entries:
            for v in p.variables_used():
                members.update(var_owners.get(v, ()))
        members.discard(sub.index)
        out[sub.index] = (sub.index, *sorted(members))
    return out


# Fixed interaction topology of the 9-oscillator benchmark: i -> neighbors.
VDP_TOPOLOGY: dict[int, tuple[int, ...]] = {
    1: (2, 5, 9),
    2: (1, 3),
    3: (2, 8),
    4: (6, 7),
    5: (1, 6),
    6: (4, 5),
    7: (4, 8, 9),
    8: (3, 7),
    9: (1, 7),
}


def generate_vdp_network(seed: int) -> NetworkModel:
    """Nine coupled Van der Pol oscillators with seeded parameters.

    Subsystem i has states (x_i_1, x_i_2) with

        d/dt x_i_1 = x_i_2
        d/dt x_i_2 = alpha_i x_i_2 (1 - x_i_1^2) - x_i_1
                     + x_i_1 * sum_k beta_ik x_k_2

    over the fixed symmetric topology above.  alpha_i is uniform on
    [-2, -1], beta_ik uniform on [-0.8, 0.8]; both are rounded to nine
    decimals so serialized coefficients round-trip exactly.  The first
    channel admits no control, the second does.
    """
    rng = np.random.default_rng(seed)
    indices = sorted(VDP_TOPOLOGY)
    alphas = {i: round(float(rng.uniform(-2.0, -1.0)), 9) for i in indices}
    betas = {
        (i, k): round(float(rng.uniform(-0.8, 0.8)), 9)
        for i in indices
        for k in VDP_TOPOLOGY[i]
    }

    ambient = tuple(f"x_{i}_{c}" for i in indices for c in (1, 2))
    subs = []
    for i in indices:
        states = (f"x_{i}_1", f"x_{i}_2")
        x1 = Polynomial.variable(states[0], states)
        x2 = Polynomial.variable(states[1], states)
        a = alphas[i]
        f = PolynomialVector((x2, a * x2 * (1.0 - x1 * x1) - x1), states)
        x1_amb = Polynomial.variable(states[0], ambient)
        coupling = Polynomial.zero(ambient)
        for k in VDP_TOPOLOGY[i]:
            xk2 = Polynomial.variable(f"x_{k}_2", ambient)
            coupling = coupling + betas[(i, k)] * xk2
        g = PolynomialVector((Polynomial.zero(ambient), x1_amb * coupling), ambient)
        subs.append(
            Subsystem(index=i, states=states, f=f, g=g, controlled=(False, True))
        )

    params = {
        "alpha": [alphas[i] for i in indices],
        "beta": {f"{i},{k}": betas[(i, k)] for i, k in sorted(betas)},
    }
    return NetworkModel(subs, seed=seed, params=params)


def assemble_closed_loop(
    net: NetworkModel,
    policies: Mapping[int, PolynomialVector] | None,
) -> PolynomialVector:
    """Full ambient vector field f + u + g, one entry per ambient variable.

    ``policies`` maps subsystem index to a control vector over that
    subsystem's states; missing entries mean zero control.  A policy must
    be identically zero on every uncontrolled channel.  Variables with
    several owners must receive symbolically identical equations.
    """
    policies = dict(policies or {})
    for idx, pol in policies.items():
        sub = net.subsystem(idx)
        if pol.vars != sub.states:
            raise NetworkStructureError(
                f"policy for subsystem {idx} must be over its states {sub.states}"
            )
        if len(pol) != sub.n_states:
            raise NetworkStructureError(
                f"policy for subsystem {idx} has {len(pol)} entries, "
                f"expected {sub.n_states}"
            )
        for k, (flag, p) in enumerate(zip(sub.controlled, pol.entries)):
            if not flag and not p.is_zero:
                raise NetworkStructureError(
                    f"policy for subsystem {idx} drives uncontrolled channel {k}"
                )

    equations: dict[str, tuple[int, Polynomial]] = {}
    for sub in net.subsystems:
        pol = policies.get(sub.index)
        for k, v in enumerate(sub.states):
            rhs = sub.f.entries[k].embed(net.ambient) + sub.g.entries[k]
            if pol is not None:
                rhs = rhs + pol.entries[k].embed(net.ambient)
            if v in equations:
                owner, existing = equations[v]
                if existing != rhs:
                    raise NetworkStructureError(
                        f"state {v!r} is defined differently by subsystems "
                        f"{owner} and {sub.index}"
                    )
            else:
                equations[v] = (sub.index, rhs)

    return PolynomialVector(
        tuple(equations[v][1] for v in net.ambient), net.ambient
    )
