"""Tests for expanding-interior certification and certificate verification."""

import numpy as np
import pytest

from vecstab.polynomials import Polynomial, PolynomialVector, lie_derivative
from vecstab.roa_certification import (
    CertificationError,
    ExpandOptions,
    LyapunovCertificate,
    certify_network,
    expanding_interior,
    normalize_level,
    quadratic_form_matrix,
    verify_certificate,
)
from vecstab.sos_core import check_sos
from vecstab.simulation import CompiledField


VDP_VARS = ("x1", "x2")


def vdp_field(alpha=-1.0):
    """Isolated oscillator: x1' = x2, x2' = alpha*x2*(1 - x1^2) - x1."""
    a = float(alpha)
    return PolynomialVector(
        (
            Polynomial.parse("x2", VDP_VARS),
            Polynomial.parse(f"{a}*x2 + {-a}*x1^2*x2 - x1", VDP_VARS),
        ),
        VDP_VARS,
    )


@pytest.fixture(scope="module")
def vdp_cert():
    return expanding_interior(vdp_field(), degree=2, index=3)


class TestExpandingInterior:
    def test_scalar_hits_beta_cap(self):
        f = PolynomialVector((Polynomial.parse("-x", ("x",)),), ("x",))
        cert = expanding_interior(f, degree=2)
        assert cert.beta_history[-1] == pytest.approx(100.0, rel=1e-6)

    def test_vdp_certificate_verifies(self, vdp_cert):
        report = verify_certificate(vdp_cert, vdp_field())
        assert report["passed"], report["failures"]
        assert report["checks"]["sampling"]["n_points"] == 10_000

    def test_beta_history_non_decreasing(self, vdp_cert):
        hist = vdp_cert.beta_history
        assert len(hist) >= 2
        assert all(b - a >= -1e-9 for a, b in zip(hist, hist[1:]))

    def test_certificate_metadata(self, vdp_cert):
        assert vdp_cert.index == 3
        assert vdp_cert.degree == 2
        assert vdp_cert.V.degree == 2
        assert vdp_cert.rate_c == pytest.approx(0.01)
        assert vdp_cert.multiplier is not None

    def test_multiplier_certifies_decrease(self, vdp_cert):
        f = vdp_field()
        V, s = vdp_cert.V, vdp_cert.multiplier
        norm2 = Polynomial.parse("x1^2 + x2^2", VDP_VARS)
        expr = (
            -(lie_derivative(V, f) + vdp_cert.rate_c * V)
            - vdp_cert.epsilon * norm2
            + s * (V - 1.0)
        )
        assert check_sos(expr).ok
        assert check_sos(s).ok

    def test_degree4_warm_start_beats_degree2(self, vdp_cert):
        opts = ExpandOptions(initial_V=vdp_cert.V)
        cert4 = expanding_interior(vdp_field(), degree=4, opts=opts)
        assert cert4.degree == 4
        assert cert4.beta_history[-1] >= vdp_cert.beta_history[-1] - 1e-9
        report = verify_certificate(cert4, vdp_field())
        assert report["passed"], report["failures"]

    def test_rejects_odd_degree(self):
        with pytest.raises(ValueError):
            expanding_interior(vdp_field(), degree=3)

    def test_rejects_field_not_vanishing_at_origin(self):
        f = PolynomialVector((Polynomial.parse("1 - x", ("x",)),), ("x",))
        with pytest.raises(ValueError):
            expanding_interior(f)

    def test_non_hurwitz_linearization_refused(self):
        f = PolynomialVector((Polynomial.parse("x", ("x",)),), ("x",))
        with pytest.raises(CertificationError):
            expanding_interior(f)

    def test_marginally_stable_linearization_refused(self):
        # pure rotation: eigenvalues on the imaginary axis
        f = PolynomialVector(
            (
                Polynomial.parse("y", ("x", "y")),
                Polynomial.parse("-x", ("x", "y")),
            ),
            ("x", "y"),
        )
        with pytest.raises(CertificationError):
            expanding_interior(f)


class TestVerifyCertificate:
    def test_wrong_field_fails(self, vdp_cert):
        # same certificate checked against dynamics with the damping term
        # flipped: the decrease direction reverses and both the SOS re-run
        # and the sampled margins must notice
        wrong = vdp_field(alpha=1.0)
        report = verify_certificate(vdp_cert, wrong)
        assert not report["passed"]
        assert "sampling" in report["failures"] or "decrease_sos" in report["failures"]

    def test_missing_multiplier_fails(self, vdp_cert):
        stripped = LyapunovCertificate(
            index=vdp_cert.index,
            V=vdp_cert.V,
            degree=vdp_cert.degree,
            rate_c=vdp_cert.rate_c,
            beta_history=list(vdp_cert.beta_history),
            multiplier=None,
            epsilon=vdp_cert.epsilon,
        )
        report = verify_certificate(stripped, vdp_field())
        assert "decrease_sos" in report["failures"]

    def test_zero_rate_flagged(self, vdp_cert):
        flat = LyapunovCertificate(
            index=0,
            V=vdp_cert.V,
            degree=2,
            rate_c=0.0,
            beta_history=[1.0],
            multiplier=vdp_cert.multiplier,
            epsilon=vdp_cert.epsilon,
        )
        report = verify_certificate(flat, vdp_field())
        assert "exponential_rate" in report["failures"]

    def test_sampling_stays_in_sublevel_set(self, vdp_cert):
        report = verify_certificate(vdp_cert, vdp_field(), n_points=500, seed=7)
        pt = report["checks"]["sampling"]["worst_point"]
        val = vdp_cert.V.evaluate(dict(zip(VDP_VARS, pt)))
        assert val <= 1.0 + 1e-9


class TestNormalization:
    def test_normalize_level_rescales(self):
        V = Polynomial.parse("2*x^2 + x*y + y^2", ("x", "y"))
        W = normalize_level(V, 4.0)
        rng = np.random.default_rng(11)
        for _ in range(50):
            pt = dict(zip(("x", "y"), rng.uniform(-2, 2, 2)))
            assert W.evaluate(pt) == pytest.approx(V.evaluate(pt) / 4.0, rel=1e-12)

    def test_normalize_level_rejects_nonpositive(self):
        V = Polynomial.parse("x^2", ("x",))
        with pytest.raises(ValueError):
            normalize_level(V, 0.0)

    def test_unit_level_is_certified_region(self, vdp_cert):
        # {V <= 1} must sit inside the true ROA: simulate from boundary
        # points and watch them all decay
        from vecstab.simulation import integrate_batch

        Q = quadratic_form_matrix(vdp_cert.V)
        lam, U = np.linalg.eigh(Q)
        theta = np.linspace(0.0, 2 * np.pi, 24, endpoint=False)
        circle = np.stack([np.cos(theta), np.sin(theta)], axis=1)
        boundary = circle @ np.diag(1.0 / np.sqrt(lam)) @ U.T
        cf = CompiledField([vdp_cert.V])
        vals = cf(boundary)[:, 0]
        assert np.allclose(vals, 1.0, atol=1e-9)
        finals, diverged = integrate_batch(vdp_field(), boundary, T=30.0, dt=1e-2)
        assert not diverged.any()
        assert np.abs(finals).max() < 1e-2


class TestQuadraticFormMatrix:
    def test_roundtrip(self):
        P = np.array([[2.0, 0.5], [0.5, 1.0]])
        V = Polynomial.quadratic_form(P, ("x", "y"))
        assert np.allclose(quadratic_form_matrix(V), P)

    def test_ignores_higher_order_terms(self):
        V = Polynomial.parse("x^2 + x^4", ("x",))
        assert np.allclose(quadratic_form_matrix(V), [[1.0]])


class TestSerialization:
    def test_json_roundtrip(self, vdp_cert, tmp_path):
        path = tmp_path / "cert.json"
        vdp_cert.save(path)
        loaded = LyapunovCertificate.load(path)
        assert loaded.index == vdp_cert.index
        assert loaded.degree == vdp_cert.degree
        assert loaded.rate_c == pytest.approx(vdp_cert.rate_c)
        assert loaded.beta_history == pytest.approx(vdp_cert.beta_history)
        diff = loaded.V - vdp_cert.V
        assert max((abs(c) for c in diff.terms.values()), default=0.0) < 1e-9
        report = verify_certificate(loaded, vdp_field())
        assert report["passed"], report["failures"]


class TestCertifyNetwork:
    def test_two_subsystem_network(self):
        from vecstab.network_model import generate_vdp_network

        net = generate_vdp_network(seed=42)
        # restrict to two subsystems to keep the runtime short
        certs = {}
        for sub in net.subsystems[:2]:
            certs[sub.index] = expanding_interior(sub.f, index=sub.index)
        for idx, cert in certs.items():
            assert cert.index == idx
            sub = net.subsystem(idx)
            assert verify_certificate(cert, sub.f, n_points=2000)["passed"]

    def test_jobs_parallel_matches_serial(self):
        from vecstab.network_model import NetworkModel, Subsystem

        def node(i, rate):
            var = f"x_{i}_1"
            return Subsystem(
                index=i,
                states=(var,),
                f=PolynomialVector(
                    (Polynomial.parse(f"{rate}*{var}", (var,)),), (var,)
                ),
                g=PolynomialVector(
                    (Polynomial.zero((f"x_1_1", f"x_2_1")),),
                    (f"x_1_1", f"x_2_1"),
                ),
                controlled=(True,),
            )

        small = NetworkModel([node(1, -1.0), node(2, -2.0)])
        serial = certify_network(small)
        parallel = certify_network(small, jobs=2)
        assert set(serial) == set(parallel)
        for idx in serial:
            diff = serial[idx].V - parallel[idx].V
            assert max((abs(c) for c in diff.terms.values()), default=0.0) < 1e-7
