"""Tests for per-subsystem feedback synthesis and row assembly."""

import numpy as np
import pytest

from vecstab.comparison_analysis import (
    gershgorin_hurwitz,
    invariance_check,
    is_metzler,
)
from vecstab.control_synthesis import (
    EPSILON_MARGIN,
    SynthesisError,
    SynthesisInput,
    SynthesisOptions,
    SynthesisRefusal,
    SynthesisResult,
    _build_program,
    assemble_comparison,
    initial_levels,
    run_algorithm,
    synthesize_subsystem,
    verify_synthesis,
)
from vecstab.network_model import NetworkModel, Subsystem, generate_vdp_network
from vecstab.polynomials import Polynomial, PolynomialVector
from vecstab.roa_certification import LyapunovCertificate, certify_network

AMBIENT = ("x_1_1", "x_2_1")


def scalar_node(index, rate, g_text=None, controlled=True):
    v = f"x_{index}_1"
    f = PolynomialVector((Polynomial.parse(f"{rate}*{v}", (v,)),), (v,))
    if g_text is None:
        g = PolynomialVector((Polynomial.zero(AMBIENT),), AMBIENT)
    else:
        g = PolynomialVector((Polynomial.parse(g_text, AMBIENT),), AMBIENT)
    return Subsystem(index=index, states=(v,), f=f, g=g,
                     controlled=(controlled,))


def forcing_network():
    """Node 1 weakly damped with a destabilizing product coupling.

    On the operating region the coupling outweighs the -0.1 damping, so
    node 1 cannot satisfy its row without feedback; node 2 is isolated.
    """
    return NetworkModel((
        scalar_node(1, -0.1, "2*x_1_1*x_2_1", controlled=True),
        scalar_node(2, -1.0, controlled=False),
    ))


def quadratic_certificate(index, var, weight=1.0):
    V = Polynomial.parse(f"{weight}*{var}^2", (var,))
    return LyapunovCertificate(index=index, V=V, degree=2, rate_c=0.01)


def make_input(net, certs, levels, index, **kwargs):
    nbhd = net.neighborhoods[index]
    return SynthesisInput(
        subsystem=net.subsystem(index),
        neighborhood=nbhd,
        certificates={j: certs[j] for j in nbhd},
        levels={j: levels[j] for j in nbhd},
        local_vars=net.neighborhood_states(index),
        **kwargs,
    )


@pytest.fixture(scope="module")
def isolated_result():
    v = "x_2_1"
    f = PolynomialVector((Polynomial.parse(f"-1*{v}", (v,)),), (v,))
    g = PolynomialVector((Polynomial.zero((v,)),), (v,))
    net = NetworkModel((
        Subsystem(index=2, states=(v,), f=f, g=g, controlled=(True,)),
    ))
    certs = certify_network(net, degree=2)
    inp = make_input(net, certs, {2: 0.4}, 2)
    return inp, synthesize_subsystem(inp)


@pytest.fixture(scope="module")
def forcing_setup():
    net = forcing_network()
    certs = certify_network(net, degree=2)
    x0 = np.array([0.5, 0.5])
    lv = initial_levels(certs, x0, net)
    levels = {idx: lv[k] for k, idx in enumerate(sorted(certs))}
    inputs = {i: make_input(net, certs, levels, i) for i in sorted(certs)}
    results = {i: synthesize_subsystem(inp) for i, inp in inputs.items()}
    return net, certs, levels, inputs, results


class TestInitialLevels:
    def test_zero_state_gives_zero_levels(self):
        certs = {
            1: quadratic_certificate(1, "a"),
            2: quadratic_certificate(2, "b"),
        }
        lv = initial_levels(certs, {"a": 0.0, "b": 0.0})
        assert lv.values == (0.0, 0.0)

    def test_round_quadratic_level(self):
        V = Polynomial.parse("x^2 + y^2", ("x", "y"))
        certs = {1: LyapunovCertificate(index=1, V=V, degree=2, rate_c=0.01)}
        lv = initial_levels(certs, {"x": 0.6, "y": 0.0})
        assert lv[0] == pytest.approx(0.36, abs=1e-12)

    def test_benchmark_ninth_node_level(self):
        # the published ninth-node function evaluated at (1, 0)
        V9 = Polynomial.parse(
            "0.595*x_9_1^2 + 0.227*x_9_1*x_9_2 + 0.520*x_9_2^2",
            ("x_9_1", "x_9_2"),
        )
        certs = {9: LyapunovCertificate(index=9, V=V9, degree=2, rate_c=0.01)}
        lv = initial_levels(certs, {"x_9_1": 1.0, "x_9_2": 0.0})
        assert lv[0] == pytest.approx(0.595, abs=1e-12)

    def test_refusal_names_offending_subsystems(self):
        certs = {
            1: quadratic_certificate(1, "a"),
            2: quadratic_certificate(2, "b", weight=4.0),
            3: quadratic_certificate(3, "c"),
        }
        state = {"a": 0.5, "b": 0.9, "c": 1.5}
        with pytest.raises(SynthesisRefusal) as exc:
            initial_levels(certs, state)
        assert exc.value.indices == (2, 3)

    def test_vector_form_needs_network(self):
        certs = {1: quadratic_certificate(1, "a")}
        with pytest.raises(ValueError, match="ordering"):
            initial_levels(certs, np.array([0.1]))

    def test_vector_form_matches_mapping(self):
        net = forcing_network()
        certs = {
            1: quadratic_certificate(1, "x_1_1"),
            2: quadratic_certificate(2, "x_2_1", weight=0.5),
        }
        by_vec = initial_levels(certs, np.array([0.3, 0.4]), net)
        by_map = initial_levels(certs, {"x_1_1": 0.3, "x_2_1": 0.4})
        assert by_vec.values == pytest.approx(by_map.values)

    def test_ordering_is_ascending_index(self):
        certs = {
            5: quadratic_certificate(5, "a", weight=0.25),
            2: quadratic_certificate(2, "b", weight=0.5),
        }
        lv = initial_levels(certs, {"a": 1.0, "b": 1.0})
        assert lv.values == pytest.approx((0.5, 0.25))


class TestSynthesizeIsolated:
    def test_no_interaction_means_no_control(self, isolated_result):
        _, res = isolated_result
        assert max(res.bounds) <= 1e-6
        assert res.policy() == "---"

    def test_diagonal_strictly_negative(self, isolated_result):
        _, res = isolated_result
        assert res.row[2] <= -EPSILON_MARGIN
        assert res.row_sum <= -EPSILON_MARGIN

    def test_feedback_is_zero_polynomial_in_effect(self, isolated_result):
        inp, res = isolated_result
        pts = np.linspace(-1.0, 1.0, 11)
        V = inp.certificates[2].V
        for x in pts:
            if V.evaluate([x]) > inp.levels[2]:
                continue
            assert abs(res.u[0].evaluate([x])) <= 1e-6

    def test_verifies(self, isolated_result):
        inp, res = isolated_result
        report = verify_synthesis(res, inp, n_points=2000)
        assert report["passed"], report["failures"]


class TestSynthesizeForced:
    def test_coupling_forces_feedback(self, forcing_setup):
        _, _, _, _, results = forcing_setup
        assert max(results[1].bounds) > 0.01
        assert results[1].policy() != "---"

    def test_isolated_neighbor_stays_uncontrolled(self, forcing_setup):
        _, _, _, _, results = forcing_setup
        assert max(results[2].bounds, default=0.0) == 0.0
        assert results[2].policy() == "---"

    def test_rows_satisfy_invariants(self, forcing_setup):
        _, _, levels, _, results = forcing_setup
        for res in results.values():
            assert res.row_sum <= -EPSILON_MARGIN
            assert res.row_gamma_sum <= 1e-9
            for j, a in res.row.items():
                if j != res.index:
                    assert a >= -1e-9

    def test_both_verify(self, forcing_setup):
        _, _, _, inputs, results = forcing_setup
        for i, res in results.items():
            report = verify_synthesis(res, inputs[i], n_points=2000)
            assert report["passed"], (i, report["failures"])

    def test_uncontrolled_channel_never_driven(self, forcing_setup):
        _, _, _, _, results = forcing_setup
        res = results[2]
        assert res.u[0].is_zero
        assert res.bounds == (0.0,)

    def test_zero_neighbor_levels_remove_control(self, forcing_setup):
        net, certs, _, _, _ = forcing_setup
        levels = {1: 0.0, 2: 0.0}
        res = synthesize_subsystem(make_input(net, certs, levels, 1))
        assert max(res.bounds) <= 1e-6

    def test_objective_monotone_in_neighbor_level(self, forcing_setup):
        net, certs, levels, _, results = forcing_setup
        baseline = results[1].bound_total
        smaller = dict(levels)
        smaller[2] = 0.25 * levels[2]
        res = synthesize_subsystem(make_input(net, certs, smaller, 1))
        assert res.bound_total <= baseline + 1e-9

    def test_own_zero_level_with_positive_neighbor(self, forcing_setup):
        net, certs, levels, _, _ = forcing_setup
        mixed = {1: 0.0, 2: levels[2]}
        res = synthesize_subsystem(make_input(net, certs, mixed, 1))
        # the level condition pins the neighbor weight to zero
        assert res.row[2] <= 1e-9
        assert res.row_gamma_sum <= 1e-9

    def test_infeasible_when_feedback_cannot_reach(self):
        # coupling enters through a term feedback on x_1_1 cannot cancel:
        # u depends on own states only, the offending monomial does not
        net = NetworkModel((
            scalar_node(1, -0.1, "3*x_1_1*x_2_1^2", controlled=True),
            scalar_node(2, -1.0, controlled=False),
        ))
        certs = {
            1: quadratic_certificate(1, "x_1_1"),
            2: quadratic_certificate(2, "x_2_1", weight=1e-4),
        }
        levels = {1: 0.9, 2: 0.9}
        with pytest.raises(SynthesisError, match="degree"):
            synthesize_subsystem(make_input(net, certs, levels, 1))


class TestFixedBounds:
    def test_caps_are_respected_and_reported(self, forcing_setup):
        net, certs, levels, _, free_results = forcing_setup
        cap = float(free_results[1].bounds[0]) * 2.0
        inp = make_input(net, certs, levels, 1, fixed_bounds=(cap,))
        res = synthesize_subsystem(inp)
        assert res.bounds == (cap,)
        report = verify_synthesis(res, inp, n_points=2000)
        assert report["passed"], report["failures"]

    def test_too_small_cap_is_infeasible(self, forcing_setup):
        net, certs, levels, _, free_results = forcing_setup
        cap = float(free_results[1].bounds[0]) * 1e-3
        inp = make_input(net, certs, levels, 1, fixed_bounds=(cap,))
        with pytest.raises(SynthesisError):
            synthesize_subsystem(inp)

    def test_cap_on_uncontrolled_channel_rejected(self, forcing_setup):
        net, certs, levels, _, _ = forcing_setup
        with pytest.raises(ValueError, match="uncontrolled"):
            make_input(net, certs, levels, 2, fixed_bounds=(0.5,))


class TestDecentralization:
    def test_compiled_program_stays_local(self):
        net = generate_vdp_network(seed=3)
        idx = 1
        nbhd = net.neighborhoods[idx]
        local = net.neighborhood_states(idx)
        certs = {}
        for j in nbhd:
            v1, v2 = net.subsystem(j).states
            V = Polynomial.parse(f"0.6*{v1}^2 + 0.1*{v1}*{v2} + 0.5*{v2}^2",
                                 (v1, v2))
            certs[j] = LyapunovCertificate(index=j, V=V, degree=2, rate_c=0.01)
        inp = SynthesisInput(
            subsystem=net.subsystem(idx),
            neighborhood=nbhd,
            certificates=certs,
            levels={j: 0.3 for j in nbhd},
            local_vars=local,
        )
        prog, _, _, _, _ = _build_program(inp)
        allowed = set(local)
        grams = prog.compile().constraint_grams
        assert grams
        for _, used, _, _ in grams:
            assert set(used) <= allowed

    def test_foreign_certificate_rejected(self):
        net = forcing_network()
        certs = {
            1: quadratic_certificate(1, "x_2_1"),  # wrong variables
            2: quadratic_certificate(2, "x_2_1"),
        }
        with pytest.raises(ValueError, match="outside the neighborhood"):
            SynthesisInput(
                subsystem=net.subsystem(2),
                neighborhood=(2,),
                certificates={2: quadratic_certificate(2, "x_1_1")},
                levels={2: 0.2},
                local_vars=("x_2_1",),
            )


class TestSynthesisInputValidation:
    def test_neighborhood_must_start_with_owner(self, forcing_setup):
        net, certs, levels, _, _ = forcing_setup
        with pytest.raises(ValueError, match="owner"):
            SynthesisInput(
                subsystem=net.subsystem(1),
                neighborhood=(2, 1),
                certificates=certs,
                levels=levels,
                local_vars=AMBIENT,
            )

    def test_missing_certificate(self, forcing_setup):
        net, certs, levels, _, _ = forcing_setup
        with pytest.raises(ValueError, match="certificate"):
            SynthesisInput(
                subsystem=net.subsystem(1),
                neighborhood=(1, 2),
                certificates={1: certs[1]},
                levels=levels,
                local_vars=AMBIENT,
            )

    def test_level_outside_unit_interval(self, forcing_setup):
        net, certs, _, _, _ = forcing_setup
        with pytest.raises(ValueError, match="outside"):
            make_input(net, certs, {1: 1.2, 2: 0.1}, 1)

    def test_odd_multiplier_degree_rejected(self, forcing_setup):
        net, certs, levels, _, _ = forcing_setup
        with pytest.raises(ValueError, match="multiplier degree"):
            make_input(net, certs, levels, 1, multiplier_degree=3)


class TestSynthesisResult:
    def test_json_round_trip(self, forcing_setup):
        _, _, _, inputs, results = forcing_setup
        res = results[1]
        clone = SynthesisResult.from_json(res.to_json())
        assert clone.row == pytest.approx(res.row)
        assert clone.bounds == pytest.approx(res.bounds)
        assert clone.levels == res.levels
        # serialization keeps 12 significant digits
        for mono, c in res.u[0].terms.items():
            assert clone.u[0].terms[mono] == pytest.approx(c, rel=1e-11)
        report = verify_synthesis(clone, inputs[1], n_points=500)
        assert report["passed"], report["failures"]

    def test_save_load(self, forcing_setup, tmp_path):
        _, _, _, _, results = forcing_setup
        path = tmp_path / "row.json"
        results[1].save(path)
        again = SynthesisResult.load(path)
        assert again.row == pytest.approx(results[1].row)

    def test_table_shape(self, forcing_setup):
        _, _, _, _, results = forcing_setup
        data = results[1].to_json()
        for key in ("i", "gamma_0", "row_sum", "row_gamma_sum", "U_bar",
                    "policy", "u", "row", "status"):
            assert key in data

    def test_rejects_positive_row_sum(self):
        u = PolynomialVector((Polynomial.zero(("x",)),), ("x",))
        with pytest.raises(ValueError, match="row sum"):
            SynthesisResult(index=1, u=u, bounds=(0.0,),
                            row={1: 0.5}, levels={1: 0.1})

    def test_rejects_negative_off_diagonal(self):
        u = PolynomialVector((Polynomial.zero(("x",)),), ("x",))
        with pytest.raises(ValueError, match="< 0"):
            SynthesisResult(index=1, u=u, bounds=(0.0,),
                            row={1: -1.0, 2: -0.5}, levels={1: 0.1, 2: 0.1})

    def test_rejects_positive_level_sum(self):
        u = PolynomialVector((Polynomial.zero(("x",)),), ("x",))
        with pytest.raises(ValueError, match="level-weighted"):
            SynthesisResult(index=1, u=u, bounds=(0.0,),
                            row={1: -0.1, 2: 0.09}, levels={1: 0.0, 2: 1.0})


class TestAssembleComparison:
    def test_dense_matrix_with_zero_fill(self, forcing_setup):
        _, _, levels, _, results = forcing_setup
        A = assemble_comparison([results[1], results[2]])
        assert A.shape == (2, 2)
        assert A[0, 1] == results[1].row[2]
        assert A[1, 0] == 0.0  # node 2 has no neighbor entry for node 1
        gams = np.array([levels[1], levels[2]])
        assert is_metzler(A)
        assert gershgorin_hurwitz(A)
        assert invariance_check(A, gams)

    def test_duplicate_rows_rejected(self, forcing_setup):
        _, _, _, _, results = forcing_setup
        with pytest.raises(ValueError, match="duplicate"):
            assemble_comparison([results[1], results[1]])

    def test_wrong_count_rejected(self, forcing_setup):
        _, _, _, _, results = forcing_setup
        with pytest.raises(ValueError, match="expected"):
            assemble_comparison([results[1]], m=2)

    def test_level_mismatch_names_row(self, forcing_setup):
        _, _, _, _, results = forcing_setup
        altered = SynthesisResult.from_json(results[2].to_json())
        altered.levels[2] = 0.9 * altered.levels[2] + 0.01
        with pytest.raises(ValueError, match="row 1"):
            assemble_comparison([results[1], altered])

    def test_gershgorin_failure_names_row(self):
        u = PolynomialVector((Polynomial.zero(("x",)),), ("x",))
        # both rows pass their own sum test, row 2 fails dominance
        r1 = SynthesisResult(index=1, u=u, bounds=(0.0,),
                             row={1: -1.0}, levels={1: 0.1, 2: 0.1})
        r2 = SynthesisResult(index=2, u=u, bounds=(0.0,),
                             row={2: -1.0, 1: 0.999999}, levels={1: 0.1, 2: 0.1})
        r2.row[1] = 1.5  # post-hoc corruption: dominance now fails
        r2.row[2] = -1.4999999
        with pytest.raises(ValueError, match="row 2"):
            assemble_comparison([r1, r2])


class TestRunAlgorithm:
    def test_full_pipeline_on_forcing_network(self, tmp_path):
        net = forcing_network()
        x0 = np.array([0.5, 0.5])
        out = run_algorithm(net, x0,
                            SynthesisOptions(cache_dir=tmp_path))
        assert not out["failures"]
        assert out["A"] is not None
        assert out["report"]["metzler"]
        assert out["report"]["gershgorin"]
        assert out["report"]["invariance"]
        assert out["report"]["abscissa"] < 0.0
        assert set(out["results"]) == {1, 2}

    def test_cache_reused(self, tmp_path):
        net = forcing_network()
        x0 = np.array([0.3, 0.3])
        opts = SynthesisOptions(cache_dir=tmp_path)
        first = run_algorithm(net, x0, opts)
        cache_files = sorted(p.name for p in tmp_path.rglob("cert_*.json"))
        assert cache_files == ["cert_1.json", "cert_2.json"]
        stamps = {p: p.stat().st_mtime_ns for p in tmp_path.rglob("cert_*.json")}
        second = run_algorithm(net, x0, opts)
        assert {p: p.stat().st_mtime_ns for p in tmp_path.rglob("cert_*.json")} \
            == stamps
        for i in (1, 2):
            before, after = first["certs"][i].V, second["certs"][i].V
            for mono, c in before.terms.items():
                assert after.terms[mono] == pytest.approx(c, rel=1e-11)

    def test_refusal_propagates(self, tmp_path):
        net = forcing_network()
        opts = SynthesisOptions(cache_dir=tmp_path)
        with pytest.raises(SynthesisRefusal):
            run_algorithm(net, np.array([200.0, 200.0]), opts)

    def test_partial_failure_keeps_other_rows(self, tmp_path):
        # the quartic coupling outranks every multiplier product, so no
        # choice of feedback in the node's own state can close the row
        net = NetworkModel((
            scalar_node(1, -0.1, "3*x_1_1*x_2_1^4", controlled=True),
            scalar_node(2, -1.0, controlled=False),
        ))
        out = run_algorithm(net, np.array([0.9, 0.9]),
                            SynthesisOptions(cache_dir=tmp_path))
        assert 1 in out["failures"]
        assert 2 in out["results"]
        assert out["A"] is None

    def test_parallel_matches_serial(self, tmp_path):
        net = forcing_network()
        x0 = np.array([0.4, 0.4])
        serial = run_algorithm(net, x0, SynthesisOptions(cache_dir=tmp_path))
        parallel = run_algorithm(net, x0,
                                 SynthesisOptions(cache_dir=tmp_path, jobs=2))
        assert np.allclose(serial["A"], parallel["A"], atol=1e-7)
