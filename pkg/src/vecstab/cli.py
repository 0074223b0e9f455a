"""Batch pipeline driver exposing the toolchain as composable subcommands.

Every artifact is a plain file: networks, certificates, synthesis rows,
comparison matrices and reports are canonical JSON (floats rounded to 12
decimals, keys sorted), trajectories are CSV.  Identical inputs therefore
produce byte-identical outputs.

Exit codes: 0 on success, 2 when the mathematics refuses (initial state
outside the certified region, infeasible synthesis, failed verification),
1 on usage errors.
"""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

import numpy as np

from vecstab import _jsonio
from vecstab.comparison_analysis import comparison_report, comparison_trajectory
from vecstab.control_synthesis import (
    SynthesisError,
    SynthesisOptions,
    SynthesisRefusal,
    SynthesisResult,
    assemble_comparison,
    initial_levels,
    make_inputs,
    synthesize_subsystem,
    verify_synthesis,
)
from vecstab.network_model import (
    NetworkModel,
    NetworkStructureError,
    assemble_closed_loop,
    generate_vdp_network,
)
from vecstab.roa_certification import (
    CertificationError,
    ExpandOptions,
    LyapunovCertificate,
    certify_network,
)
from vecstab.sdp_backend import SdpSettings
from vecstab.simulation import (
    export_csv,
    integrate,
    lyapunov_traces,
    verify_exponential_bound,
)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_REFUSED = 2

ENV_BACKEND = "VECSTAB_SDP_BACKEND"
ENV_JOBS = "VECSTAB_JOBS"


class UsageError(RuntimeError):
    """Malformed arguments discovered after argparse."""


class PipelineError(RuntimeError):
    """Domain-level refusal: the mathematics said no."""


class _Parser(argparse.ArgumentParser):
    # the contract reserves exit status 2 for domain refusals
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _env_sdp() -> SdpSettings | None:
    backend = os.environ.get(ENV_BACKEND, "").strip()
    if not backend:
        return None
    if backend not in ("cvxopt", "reference"):
        raise UsageError(
            f"{ENV_BACKEND} must be 'cvxopt' or 'reference', got {backend!r}"
        )
    return SdpSettings(backend=backend)


def _env_jobs() -> int:
    raw = os.environ.get(ENV_JOBS, "").strip()
    if not raw:
        return 1
    try:
        jobs = int(raw)
    except ValueError:
        raise UsageError(f"{ENV_JOBS} must be an integer, got {raw!r}") from None
    if jobs < 1:
        raise UsageError(f"{ENV_JOBS} must be at least 1")
    return jobs


def _apply_config(args: argparse.Namespace) -> None:
    """Fill arguments still at None from the JSON config file, if any."""
    path = getattr(args, "config", None)
    if path is None:
        return
    data = _jsonio.load_json(path)
    if not isinstance(data, dict):
        raise UsageError(f"config {path} must hold a JSON object")
    for key, value in data.items():
        attr = key.replace("-", "_")
        if not hasattr(args, attr):
            raise UsageError(f"config {path}: unknown setting {key!r}")
        if getattr(args, attr) is None:
            setattr(args, attr, value)


def parse_x0(spec: str, net: NetworkModel) -> np.ndarray:
    """Initial-state formats accepted everywhere an x0 is needed.

    'zero', 'sample:SEED[:SCALE]' (uniform in [-scale, scale]^n),
    '@file.json' (bare list or {"x0": [...]}), or comma-separated floats.
    """
    n = len(net.ambient)
    if spec == "zero":
        return np.zeros(n)
    if spec.startswith("sample:"):
        parts = spec.split(":")
        if len(parts) not in (2, 3):
            raise UsageError(f"bad sample spec {spec!r}, want sample:SEED[:SCALE]")
        try:
            seed = int(parts[1])
            scale = float(parts[2]) if len(parts) == 3 else 0.5
        except ValueError:
            raise UsageError(f"bad sample spec {spec!r}") from None
        return np.random.default_rng(seed).uniform(-scale, scale, size=n)
    if spec.startswith("@"):
        data = _jsonio.load_json(spec[1:])
        if isinstance(data, dict):
            data = data.get("x0")
        if not isinstance(data, list):
            raise UsageError(f"{spec[1:]} holds no x0 list")
        values = [float(v) for v in data]
    else:
        try:
            values = [float(tok) for tok in spec.split(",")]
        except ValueError:
            raise UsageError(f"cannot parse x0 {spec!r}") from None
    if len(values) != n:
        raise UsageError(
            f"x0 has {len(values)} entries, network has {n} state variables"
        )
    return np.array(values)


def _load_network(path: str) -> NetworkModel:
    return NetworkModel.load(path)


def _load_certs(directory: str | Path) -> dict[int, LyapunovCertificate]:
    certs = {}
    for path in sorted(Path(directory).glob("cert_*.json")):
        cert = LyapunovCertificate.load(path)
        certs[cert.index] = cert
    if not certs:
        raise PipelineError(f"no cert_*.json files under {directory}")
    return certs


def _load_rows(directory: str | Path) -> dict[int, SynthesisResult]:
    rows = {}
    for path in sorted(Path(directory).glob("row_*.json")):
        row = SynthesisResult.load(path)
        rows[row.index] = row
    if not rows:
        raise PipelineError(f"no row_*.json files under {directory}")
    return rows


def _run_paths(run_dir: str | Path) -> dict[str, Path]:
    run = Path(run_dir)
    return {
        "run": run,
        "network": run / "network.json",
        "certs": run / "certs",
        "rows": run / "rows",
        "levels": run / "levels.json",
        "comparison": run / "comparison.json",
        "failures": run / "failures.json",
        "verify": run / "verify.json",
    }


# -- subcommands ---------------------------------------------------------------


def cmd_gen_network(args) -> int:
    net = generate_vdp_network(seed=args.seed)
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    net.save(args.out)
    print(f"wrote {args.out} ({net.m} subsystems, hash {net.content_hash()[:12]})")
    return EXIT_OK


def cmd_certify(args) -> int:
    net = _load_network(args.network)
    jobs = args.jobs if args.jobs is not None else _env_jobs()
    sdp = _env_sdp()
    opts = ExpandOptions(sdp=sdp) if sdp is not None else None
    try:
        certs = certify_network(net, degree=args.degree, opts=opts, jobs=jobs)
    except CertificationError as exc:
        raise PipelineError(f"certification failed: {exc}") from exc
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for idx, cert in sorted(certs.items()):
        cert.save(out / f"cert_{idx}.json")
    _jsonio.dump_json(
        {"network_hash": net.content_hash(), "degree": args.degree},
        out / "meta.json",
    )
    betas = {i: c.beta_history[-1] for i, c in sorted(certs.items())}
    print(f"wrote {len(certs)} certificates to {out}")
    for i, b in betas.items():
        print(f"  subsystem {i}: final beta {b:.6g}")
    return EXIT_OK


def cmd_synthesize(args) -> int:
    net = _load_network(args.network)
    certs = _load_certs(args.certs)
    missing = [s.index for s in net.subsystems if s.index not in certs]
    if missing:
        raise PipelineError(f"certificates missing for subsystems {missing}")
    meta_path = Path(args.certs) / "meta.json"
    if meta_path.is_file():
        meta = _jsonio.load_json(meta_path)
        if meta.get("network_hash") not in (None, net.content_hash()):
            raise PipelineError(
                f"certificates under {args.certs} were computed for a "
                f"different network (hash mismatch)"
            )

    x0 = parse_x0(args.x0, net)
    try:
        level_vec = initial_levels(certs, x0, net)
    except SynthesisRefusal as exc:
        raise PipelineError(str(exc)) from exc
    order = sorted(certs)
    levels = {idx: float(level_vec[k]) for k, idx in enumerate(order)}

    jobs = args.jobs if args.jobs is not None else _env_jobs()
    opts = SynthesisOptions(
        control_degree=args.control_degree,
        multiplier_degree=args.multiplier_degree,
        jobs=jobs,
        sdp=_env_sdp(),
    )
    inputs = make_inputs(net, certs, levels, opts)

    paths = _run_paths(args.out_dir)
    paths["run"].mkdir(parents=True, exist_ok=True)
    paths["rows"].mkdir(exist_ok=True)
    paths["certs"].mkdir(exist_ok=True)
    net.save(paths["network"])
    for idx, cert in sorted(certs.items()):
        cert.save(paths["certs"] / f"cert_{idx}.json")
    _jsonio.dump_json(
        {
            "x0": [float(v) for v in x0],
            "levels": {str(i): g for i, g in sorted(levels.items())},
        },
        paths["levels"],
    )

    results: dict[int, SynthesisResult] = {}
    failures: dict[int, str] = {}
    for idx in order:
        try:
            results[idx] = synthesize_subsystem(inputs[idx])
        except SynthesisError as exc:
            failures[idx] = str(exc)
    for idx, res in sorted(results.items()):
        res.save(paths["rows"] / f"row_{idx}.json")

    if failures:
        _jsonio.dump_json(
            {str(i): msg for i, msg in sorted(failures.items())},
            paths["failures"],
        )
        for i, msg in sorted(failures.items()):
            print(f"subsystem {i}: {msg}", file=sys.stderr)
        raise PipelineError(
            f"synthesis failed for {len(failures)} of {net.m} subsystems "
            f"(rows for the others were kept)"
        )

    A = assemble_comparison([results[idx] for idx in order])
    report = comparison_report(A, level_vec)
    _jsonio.dump_json(
        {
            "indices": order,
            "A": [[float(a) for a in row] for row in A],
            "levels": [float(level_vec[k]) for k in range(len(order))],
            "report": report,
            "network_hash": net.content_hash(),
        },
        paths["comparison"],
    )
    controlled = [i for i in order if max(results[i].bounds, default=0.0) > 1e-6]
    print(
        f"synthesized {len(order)} rows into {paths['run']}; "
        f"controlled subsystems: {controlled or 'none'}"
    )
    print(
        f"max row sum {report['max_row_sum']:.6g}, "
        f"abscissa {report['abscissa']:.6g}"
    )
    return EXIT_OK


def _resolve_policy_dir(path: str) -> Path:
    """Accept either a run directory or a bare rows directory."""
    p = Path(path)
    if (p / "rows").is_dir():
        return p / "rows"
    return p


def cmd_simulate(args) -> int:
    net = _load_network(args.network)
    x0 = parse_x0(args.x0, net)
    if args.policies is not None:
        rows = _load_rows(_resolve_policy_dir(args.policies))
        policies = {i: r.u for i, r in rows.items()}
        field = assemble_closed_loop(net, policies)
        kind = "closed-loop"
    else:
        field = net.open_loop_field()
        kind = "open-loop"

    if args.comparison is not None and args.certs is None:
        raise UsageError("--comparison needs --certs for the level traces")

    traj = integrate(field, x0, T=args.T, dt=args.dt)
    traces = None
    bounds = None
    if args.certs is not None:
        certs = _load_certs(args.certs)
        traces = lyapunov_traces(traj, certs)
        if args.comparison is not None:
            comp = _jsonio.load_json(args.comparison)
            A = np.array(comp["A"])
            levels = np.array(comp["levels"])
            bounds = comparison_trajectory(A, levels, traj.times)
    export_csv(args.out, traj, traces=traces, bounds=bounds)
    status = "diverged" if traj.diverged else "completed"
    print(
        f"{kind} simulation {status} at t={traj.final_time:.6g}, "
        f"final |x|={float(np.linalg.norm(traj.final_state)):.6g}; "
        f"wrote {args.out}"
    )
    return EXIT_OK


def cmd_verify(args) -> int:
    paths = _run_paths(args.run)
    net = _load_network(paths["network"])
    certs = _load_certs(paths["certs"])
    rows = _load_rows(paths["rows"])
    level_data = _jsonio.load_json(paths["levels"])
    levels = {int(i): float(g) for i, g in level_data["levels"].items()}
    x0 = np.array([float(v) for v in level_data["x0"]])
    comp = _jsonio.load_json(paths["comparison"])
    A = np.array(comp["A"])
    level_vec = np.array(comp["levels"])

    inputs = make_inputs(net, certs, levels)
    row_reports = {}
    for idx, row in sorted(rows.items()):
        row_reports[idx] = verify_synthesis(
            row, inputs[idx], n_points=args.n_points
        )

    policies = {i: r.u for i, r in rows.items()}
    closed = assemble_closed_loop(net, policies)
    traj = integrate(closed, x0, T=args.T, dt=args.dt)
    traces = lyapunov_traces(traj, certs)
    bound_report = verify_exponential_bound(traces, A, level_vec, tol=args.tol)

    open_traj = integrate(net.open_loop_field(), x0, T=args.T, dt=args.dt)

    passed = (
        all(r["passed"] for r in row_reports.values())
        and bound_report["passed"]
        and not traj.diverged
    )
    summary = {
        "passed": passed,
        "rows": {str(i): r for i, r in sorted(row_reports.items())},
        "exponential_bound": bound_report,
        "closed_loop_diverged": traj.diverged,
        "open_loop_diverged": open_traj.diverged,
    }
    _jsonio.dump_json(summary, paths["verify"])
    if args.json:
        print(_jsonio.canonical_dumps(summary))
    else:
        for idx, rep in sorted(row_reports.items()):
            state = "ok" if rep["passed"] else f"FAILED {rep['failures']}"
            print(f"row {idx}: {state}")
        print(f"exponential bound: {'ok' if bound_report['passed'] else 'FAILED'}")
        print(f"closed loop diverged: {traj.diverged}")
        print(f"open loop diverged: {open_traj.diverged}")
    if not passed:
        raise PipelineError("verification failed (details above)")
    return EXIT_OK


def _policy_text(row: SynthesisResult) -> str:
    policy = row.policy()
    if policy == "---":
        return policy
    # Table style wants the expression of the (single) active channel
    active = [p.to_string() for k, p in enumerate(row.u.entries)
              if row.bounds[k] > 1e-6]
    return "; ".join(active) if active else "---"


def _bound_column(row: SynthesisResult) -> float:
    # the benchmark drives channel 2; fall back to the largest bound
    if len(row.bounds) >= 2:
        return float(row.bounds[1])
    return float(max(row.bounds, default=0.0))


def cmd_report(args) -> int:
    paths = _run_paths(args.run)
    rows = _load_rows(paths["rows"])
    comp = _jsonio.load_json(paths["comparison"])
    report = comp["report"]

    table = []
    for idx, row in sorted(rows.items()):
        table.append(
            {
                "i": idx,
                "gamma_0": row.level,
                "row_sum": row.row_sum,
                "row_gamma_sum": row.row_gamma_sum,
                "U_2": _bound_column(row),
                "policy": _policy_text(row),
            }
        )
    payload = {
        "table": table,
        "max_row_sum": report["max_row_sum"],
        "abscissa": report["abscissa"],
    }

    if args.csv is not None:
        lines = ["i,gamma_0,row_sum,row_gamma_sum,U_2,policy"]
        for entry in table:
            lines.append(
                "%d,%.12g,%.12g,%.12g,%.12g,%s"
                % (
                    entry["i"],
                    entry["gamma_0"],
                    entry["row_sum"],
                    entry["row_gamma_sum"],
                    entry["U_2"],
                    entry["policy"].replace(",", ";"),
                )
            )
        Path(args.csv).write_text("\n".join(lines) + "\n")

    if args.json:
        print(_jsonio.canonical_dumps(payload))
        return EXIT_OK

    print(f"{'i':>3} {'gamma_0':>9} {'sum_a':>10} {'sum_a_gamma':>12} "
          f"{'U_2':>8}  policy")
    for entry in table:
        print(
            f"{entry['i']:>3} {entry['gamma_0']:>9.3f} "
            f"{entry['row_sum']:>10.4f} {entry['row_gamma_sum']:>12.4f} "
            f"{entry['U_2']:>8.3f}  {entry['policy']}"
        )
    print(
        f"max row sum {report['max_row_sum']:.6g}; "
        f"spectral abscissa {report['abscissa']:.6g} "
        f"(row test is the conservative bound)"
    )
    return EXIT_OK


# -- wiring ----------------------------------------------------------------------


def build_parser() -> _Parser:
    parser = _Parser(
        prog="vecstab",
        description="Certify subsystem stability and synthesize distributed "
        "bounded controllers for polynomial networks.",
    )
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")
    sub.required = True

    g = sub.add_parser("gen-network", parents=[], help="generate the seeded "
                       "nine-oscillator benchmark network")
    g.add_argument("--seed", type=int, required=True)
    g.add_argument("--out", default="network.json")
    g.set_defaults(func=cmd_gen_network)

    c = sub.add_parser("certify", help="compute per-subsystem attraction "
                       "certificates")
    c.add_argument("--network", required=True)
    c.add_argument("--out-dir", required=True)
    c.add_argument("--degree", type=int, default=2)
    c.add_argument("--jobs", type=int, default=None)
    c.set_defaults(func=cmd_certify)

    s = sub.add_parser("synthesize", help="solve the per-subsystem control "
                       "programs and assemble the comparison matrix")
    s.add_argument("--config", default=None, help="JSON file with defaults "
                   "for the options below")
    s.add_argument("--network", default=None)
    s.add_argument("--certs", default=None)
    s.add_argument("--x0", default=None)
    s.add_argument("--out-dir", default=None)
    s.add_argument("--control-degree", type=int, default=None)
    s.add_argument("--multiplier-degree", type=int, default=None)
    s.add_argument("--jobs", type=int, default=None)
    s.set_defaults(func=cmd_synthesize)

    m = sub.add_parser("simulate", help="integrate the network and export a "
                       "trajectory CSV")
    m.add_argument("--config", default=None)
    m.add_argument("--network", default=None)
    m.add_argument("--policies", default=None, help="run directory or rows "
                   "directory; omitted means open loop")
    m.add_argument("--x0", default=None)
    m.add_argument("--certs", default=None, help="adds V_i columns")
    m.add_argument("--comparison", default=None, help="adds r_i columns "
                   "(needs --certs)")
    m.add_argument("--T", type=float, default=None)
    m.add_argument("--dt", type=float, default=None)
    m.add_argument("--out", default=None)
    m.set_defaults(func=cmd_simulate)

    v = sub.add_parser("verify", help="re-verify a synthesis run from its "
                       "artifacts")
    v.add_argument("--run", required=True)
    v.add_argument("--n-points", type=int, default=10_000)
    v.add_argument("--tol", type=float, default=1e-4)
    v.add_argument("--T", type=float, default=20.0)
    v.add_argument("--dt", type=float, default=1e-3)
    v.add_argument("--json", action="store_true")
    v.set_defaults(func=cmd_verify)

    r = sub.add_parser("report", help="print the per-subsystem results table")
    r.add_argument("--run", required=True)
    r.add_argument("--json", action="store_true")
    r.add_argument("--csv", default=None, help="also write the table as CSV")
    r.set_defaults(func=cmd_report)

    return parser


_REQUIRED = {
    cmd_synthesize: ("network", "certs", "x0", "out_dir"),
    cmd_simulate: ("network", "x0", "out"),
}

_DEFAULTS = {
    cmd_synthesize: {"control_degree": 1, "multiplier_degree": 2},
    cmd_simulate: {"T": 20.0, "dt": 1e-3},
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        _apply_config(args)
        required = _REQUIRED.get(args.func, ())
        missing = [name for name in required if getattr(args, name) is None]
        if missing:
            flags = ", ".join("--" + n.replace("_", "-") for n in missing)
            raise UsageError(f"missing required options: {flags}")
        for name, value in _DEFAULTS.get(args.func, {}).items():
            if getattr(args, name) is None:
                setattr(args, name, value)
        return args.func(args)
    except UsageError as exc:
        print(f"vecstab: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except PipelineError as exc:
        print(f"vecstab: refused: {exc}", file=sys.stderr)
        return EXIT_REFUSED
    except (NetworkStructureError, FileNotFoundError) as exc:
        print(f"vecstab: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
