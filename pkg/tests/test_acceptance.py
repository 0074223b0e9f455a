"""Acceptance suite: one test per shipped acceptance criterion.

Run with ``pytest tests/test_acceptance.py -v`` for one pass/fail line per
criterion; add ``-s`` to see the printed detail lines.  Budgets are asserted
inside the tests that carry one.
"""

import time
from pathlib import Path

import numpy as np
import pytest
from scipy.linalg import expm

from vecstab import _jsonio
from vecstab.comparison_analysis import (
    comparison_report,
    gershgorin_hurwitz,
    invariance_check,
    is_metzler,
    spectral_abscissa,
)
from vecstab.control_synthesis import (
    SynthesisOptions,
    run_algorithm,
    verify_synthesis,
)
from vecstab.network_model import assemble_closed_loop, generate_vdp_network
from vecstab.polynomials import (
    Polynomial,
    PolynomialVector,
    monomial_basis,
    poly_grad,
)
from vecstab.roa_certification import (
    ExpandOptions,
    expanding_interior,
    verify_certificate,
)
from vecstab.simulation import (
    integrate,
    integrate_batch,
    lyapunov_traces,
    verify_exponential_bound,
)
from vecstab.sos_core import check_sos

INSTANCE = Path(__file__).parent / "fixtures" / "regression" / "instance.json"


def announce(n: int, detail: str) -> None:
    print(f"criterion {n}: PASS ({detail})")


def random_in_basis(rng, vars, degree, scale=1.0):
    basis = monomial_basis(vars, degree)
    coeffs = rng.uniform(-scale, scale, size=len(basis))
    return Polynomial(vars, dict(zip(basis, coeffs)))


@pytest.fixture(scope="module")
def regression():
    """The committed end-to-end instance, run once and shared by 5/6/8."""
    t0 = time.monotonic()
    spec = _jsonio.load_json(INSTANCE)
    net = generate_vdp_network(seed=spec["network_seed"])
    x0 = np.array(spec["x0"], dtype=float)

    open_traj = integrate(net.open_loop_field(), x0, T=30.0, dt=1e-2)

    out = run_algorithm(net, x0, SynthesisOptions(jobs=2))
    assert not out["failures"], out["failures"]

    policies = {i: r.u for i, r in out["results"].items()}
    closed = assemble_closed_loop(net, policies)
    traj = integrate(closed, x0, T=20.0, dt=1e-3)
    traces = lyapunov_traces(traj, out["certs"])
    bound = verify_exponential_bound(traces, out["A"], out["levels"])

    return {
        "expected": spec["expected"],
        "net": net,
        "x0": x0,
        "open_diverged": open_traj.diverged,
        "closed_traj": traj,
        "bound": bound,
        "elapsed": time.monotonic() - t0,
        **out,
    }


def test_criterion_1_sos_oracle():
    t0 = time.monotonic()
    rng = np.random.default_rng(101)
    vars2 = ("x", "y")
    worst = 0.0
    for _ in range(200):
        q1 = random_in_basis(rng, vars2, 2)
        q2 = random_in_basis(rng, vars2, 2)
        res = check_sos(q1 * q1 + q2 * q2)
        assert res.ok, res.reason
        worst = max(worst, res.max_coefficient_error)
    assert worst <= 1e-6

    motzkin = Polynomial.parse("x^4*y^2 + x^2*y^4 - 3*x^2*y^2 + 1", vars2)
    assert not check_sos(motzkin).ok

    elapsed = time.monotonic() - t0
    assert elapsed < 30.0
    announce(1, f"200 accepts, worst error {worst:.2e}, "
                f"Motzkin rejected, {elapsed:.1f}s")


def test_criterion_2_comparison_principle():
    t0 = time.monotonic()
    rng = np.random.default_rng(202)
    worst_excess = -np.inf
    for _ in range(100):
        m = int(rng.integers(1, 5))
        A = rng.uniform(0.0, 1.0, (m, m))
        np.fill_diagonal(A, 0.0)
        A += np.diag(-(A.sum(axis=1) + rng.uniform(0.1, 2.0, m)))
        assert is_metzler(A)

        v0 = rng.uniform(0.0, 1.0, m)
        slack = rng.uniform(0.05, 0.5, m)
        names = tuple(f"v{k + 1}" for k in range(m))
        entries = []
        for i in range(m):
            terms = {(0,) * m: -slack[i]}
            for j in range(m):
                e = [0] * m
                e[j] = 1
                terms[tuple(e)] = A[i, j]
            entries.append(Polynomial(names, terms))
        traj = integrate(PolynomialVector(entries, names), v0, T=10.0, dt=1e-2)
        assert not traj.diverged

        E = expm(A * 1e-2)
        R = np.empty_like(traj.states)
        R[0] = v0
        for k in range(1, len(traj.times)):
            R[k] = E @ R[k - 1]
        excess = float((traj.states - R).max())
        worst_excess = max(worst_excess, excess)
        assert excess <= 1e-6

    elapsed = time.monotonic() - t0
    assert elapsed < 60.0
    announce(2, f"100 systems, worst violation {worst_excess:.2e}, "
                f"{elapsed:.1f}s")


def test_criterion_3_gershgorin_sufficiency():
    rng = np.random.default_rng(303)
    abscissas = []
    for _ in range(1000):
        m = int(rng.integers(1, 7))
        A = rng.uniform(-1.0, 1.0, (m, m))
        np.fill_diagonal(A, 0.0)
        radii = np.abs(A).sum(axis=1)
        A += np.diag(-(radii + rng.uniform(0.01, 1.0, m)))
        assert gershgorin_hurwitz(A)
        abscissas.append(spectral_abscissa(A))
    assert max(abscissas) < 0.0

    witness = np.array([[-1.0, 2.0], [0.0, -1.0]])
    assert not gershgorin_hurwitz(witness)
    assert spectral_abscissa(witness) < 0.0
    announce(3, f"1000 matrices, max abscissa {max(abscissas):.3g}, "
                f"witness confirms non-necessity")


def test_criterion_4_roa_certification():
    t0 = time.monotonic()
    sub = generate_vdp_network(seed=4).subsystem(1)
    f = sub.f

    cert = expanding_interior(f, degree=2, index=sub.index)
    assert cert.degree == 2
    report = verify_certificate(cert, f)
    assert report["passed"], report["failures"]

    history = cert.beta_history
    assert all(b2 >= b1 - 1e-12 for b1, b2 in zip(history, history[1:]))

    # sample a 50x50 grid over the bounding box of {V <= 1} and keep the
    # points inside; for quadratic x'Qx the box half-width is sqrt(inv(Q)_kk)
    n = len(f.vars)
    Q = np.zeros((n, n))
    for k in range(n):
        for l in range(n):
            e = [0] * n
            e[k] += 1
            e[l] += 1
            c = cert.V.coefficient(tuple(e))
            Q[k, l] = c if k == l else c / 2.0
    half = np.sqrt(np.diag(np.linalg.inv(Q)))
    axes = [np.linspace(-h, h, 50) for h in half]
    G1, G2 = np.meshgrid(*axes)
    grid = np.column_stack([G1.ravel(), G2.ravel()])
    inside = grid[np.einsum("ij,jk,ik->i", grid, Q, grid) <= 1.0]
    assert len(inside) > 1000

    finals, diverged = integrate_batch(f, inside, T=50.0, dt=1e-2)
    assert not diverged.any()
    terminal = np.linalg.norm(finals, axis=1)
    assert terminal.max() < 1e-3

    cert4 = expanding_interior(
        f, degree=4, opts=ExpandOptions(initial_V=cert.V), index=sub.index
    )
    assert cert4.beta_history[-1] >= cert.beta_history[-1] - 1e-9

    elapsed = time.monotonic() - t0
    assert elapsed < 300.0
    announce(4, f"{len(inside)} grid points converge, beta "
                f"{cert.beta_history[-1]:.4f} -> {cert4.beta_history[-1]:.4f} "
                f"at degree 4, {elapsed:.1f}s")


def test_criterion_5_end_to_end_regression(regression):
    expected = regression["expected"]
    assert regression["open_diverged"] == expected["open_loop_diverges"]

    A = regression["A"]
    levels = regression["levels"]
    assert is_metzler(A)
    assert gershgorin_hurwitz(A)
    assert invariance_check(A, levels)
    max_row = float(np.asarray(A).sum(axis=1).max())
    assert max_row <= expected["max_row_sum_at_most"]

    assert regression["bound"]["passed"], regression["bound"]
    assert not regression["closed_traj"].diverged

    uncontrolled = sorted(
        i for i, r in regression["results"].items()
        if max(r.bounds, default=0.0) <= 1e-6
    )
    controlled = sorted(set(regression["results"]) - set(uncontrolled))
    assert uncontrolled, "every subsystem needed control"
    assert uncontrolled == expected["uncontrolled"]
    assert controlled == expected["controlled"]

    assert regression["elapsed"] < 600.0
    announce(5, f"open loop diverges, closed loop certified, "
                f"uncontrolled {uncontrolled}, max row sum {max_row:.3e}, "
                f"{regression['elapsed']:.0f}s")


def test_criterion_6_back_substitution_soundness(regression):
    for idx, result in sorted(regression["results"].items()):
        rep = verify_synthesis(result, regression["inputs"][idx],
                               n_points=10_000)
        assert rep["passed"], (idx, rep["failures"])
        assert rep["checks"]["decrease_sos"]
        assert rep["checks"]["bound_sos"]
        assert rep["checks"]["bounds"]
    announce(6, f"{len(regression['results'])} rows re-verified by SOS and "
                f"10^4-point bound sampling")


def test_criterion_7_gradient_and_order():
    rng = np.random.default_rng(707)
    h = 1e-5
    worst = 0.0
    for _ in range(100):
        n = int(rng.integers(1, 4))
        names = tuple(f"x{k + 1}" for k in range(n))
        p = random_in_basis(rng, names, int(rng.integers(1, 5)), scale=2.0)
        grad = poly_grad(p)
        x = rng.uniform(-1.0, 1.0, n)
        for k in range(n):
            ek = np.zeros(n)
            ek[k] = h
            fd = (p.evaluate(x + ek) - p.evaluate(x - ek)) / (2.0 * h)
            worst = max(worst, abs(fd - grad.entries[k].evaluate(x)))
    assert worst <= 1e-6

    # fourth-order convergence: halving dt shrinks the error ~16x
    names = ("x1", "x2")
    field = PolynomialVector(
        (
            Polynomial.parse("x2", names),
            Polynomial.parse("-1*x1 - 1*x2 + 0.3*x1^3", names),
        ),
        names,
    )
    x0 = np.array([0.8, -0.2])
    ref = integrate(field, x0, T=2.0, dt=1.25e-3).final_state
    err = {
        dt: np.linalg.norm(integrate(field, x0, T=2.0, dt=dt).final_state - ref)
        for dt in (0.05, 0.025)
    }
    ratio = err[0.05] / err[0.025]
    assert 12.0 <= ratio <= 20.0
    announce(7, f"gradient worst error {worst:.2e}, RK4 order ratio "
                f"{ratio:.1f}")


def test_criterion_8_conservatism_report(regression):
    report = comparison_report(regression["A"], regression["levels"])
    assert "max_row_sum" in report
    assert "abscissa" in report
    assert report["abscissa"] <= report["max_row_sum"]
    announce(8, f"abscissa {report['abscissa']:.4g} <= max row sum "
                f"{report['max_row_sum']:.4g}")
