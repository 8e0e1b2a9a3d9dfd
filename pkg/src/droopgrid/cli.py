"""Command-line interface: ``droopgrid <command> ...``.

Exit codes: 0 success, 1 negative analysis verdict, 2 input or usage error,
3 numerical failure.  Diagnostics go to standard error prefixed with
``droopgrid: error[input]:``, ``droopgrid: error[numerical]:`` or
``droopgrid: verdict:``.

Parameter precedence is flags > case file > builtin defaults.
"""
from __future__ import annotations

import argparse
import datetime as _dt
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .case_io import BUILTIN_ALIASES, CaseError, builtin_reference_state, gen_lossy_variant, load_case, \
    serialize_case
from .dynamics import ModelError, build_model
from .equilibrium import CalibrationError, Equilibrium, EquilibriumError, calibrate_references, \
    max_line_angle_diff, solve_equilibrium
from .netgraph import NetworkError
from .simulate import DisturbanceSpec, SimulationError, SweepPlan, apply_disturbance, integrate, sweep, \
    sweep_summary_csv
from .smallsignal import assemble_jacobian, coupling_measure, finite_difference_jacobian, relative_error, \
    write_matrix_csv
from .stability import SpectrumError, analyze

EXIT_OK, EXIT_VERDICT, EXIT_INPUT, EXIT_NUMERICAL = 0, 1, 2, 3


class InputError(Exception):
    pass


def _alpha(text: str):
    if text in ("auto", "traditional"):
        return text
    try:
        return float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"alpha must be 'auto', 'traditional' or radians, got {text!r}") from None


def _values(text: str):
    try:
        vals = tuple(float(v) for v in text.split(",") if v.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"--values needs comma-separated numbers, got {text!r}") from None
    if not vals:
        raise argparse.ArgumentTypeError("--values is empty")
    return vals


def _emit(text: str, out) -> None:
    if out is None or str(out) == "-":
        sys.stdout.write(text)
    else:
        Path(out).write_text(text, encoding="utf-8")


def _report_json(doc: dict, args) -> str:
    if not args.deterministic:
        doc = {**doc, "meta": {"tool": "droopgrid", "version": __version__,
                               "created": _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")}}
    return json.dumps(doc, indent=2) + "\n"


def _load_eq(path) -> Equilibrium:
    try:
        return Equilibrium.from_json(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise InputError(f"{path}: not valid JSON ({exc})") from None
    except ValueError as exc:
        raise InputError(f"{path}: {exc}") from None


def _overrides(args) -> dict:
    return {k: getattr(args, k) for k in ("d1", "d2", "t1", "t2") if getattr(args, k, None) is not None}


def _prepare(args, *, solve=True):
    """Load the case, apply flag overrides, calibrate if needed and solve the operating point.

    ``--eq`` serves as calibration target for uncalibrated references and as
    the Newton starting point; builtin cases fall back to their bundled
    reference state.
    """
    case = load_case(args.case)
    ov = _overrides(args)
    if ov:
        case = case.with_params(**ov)
    target = _load_eq(args.eq) if getattr(args, "eq", None) else None
    if target is None and str(args.case) in BUILTIN_ALIASES:
        target = builtin_reference_state(BUILTIN_ALIASES[str(args.case)])
    calibrated_from = None
    if not case.calibrated:
        if target is None:
            raise InputError("case has uncalibrated references; pass --eq (or --calibrate-from) with a target state")
        case = calibrate_references(case, target, alpha=args.alpha)
        calibrated_from = target
    model = build_model(case, alpha=args.alpha)
    eq = solve_equilibrium(case, model=model, guess=target) if solve else None
    return case, model, eq, calibrated_from


def cmd_case_validate(args) -> int:
    case = load_case(args.file)
    missing = [b.id for b in case.buses if not b.calibrated]
    print(f"ok: {case.name}: {case.n} buses ({int(case.inverter_mask.sum())} inverters), {len(case.lines)} lines"
          + (f"; uncalibrated references on buses {missing}" if missing else ""))
    return EXIT_OK


def cmd_case_gen(args) -> int:
    base = load_case(args.base)
    out = gen_lossy_variant(base, args.rx_mean, args.rx_std, args.seed)
    for w in out.meta.get("warnings", []):
        print(f"droopgrid: warning: {w}", file=sys.stderr)
    _emit(serialize_case(out), args.output)
    return EXIT_OK


def cmd_equilibrium(args) -> int:
    if args.calibrate_from:
        args.eq = args.calibrate_from
    case, model, eq, _ = _prepare(args)
    doc = eq.to_dict()
    angle, line = max_line_angle_diff(eq, case.lines)
    doc["max_line_angle_diff_deg"] = float(f"{angle:.12g}")
    doc["max_line_angle_line"] = list(line) if line else None
    doc["iterations"] = eq.iterations
    _emit(_report_json(doc, args), args.output)
    return EXIT_OK


def cmd_smallsignal(args) -> int:
    case, model, eq, _ = _prepare(args)
    ss = assemble_jacobian(model, eq)
    fd = finite_difference_jacobian(model, eq.state())
    doc = {
        "case": case.name,
        "n": case.n,
        "alpha": model.alpha.tolist(),
        "edges": [[i + 1, k + 1] for i, k in model.inc.edge_order],
        "U_s": ss.U_s.tolist(),
        "W1": ss.W1.tolist(),
        "W2": ss.W2.tolist(),
        "P_hat": ss.P_hat.tolist(),
        "Q_hat": ss.Q_hat.tolist(),
        "coupling": coupling_measure(ss),
        "fd_relative_error": relative_error(ss.J, fd),
    }
    if args.dump_matrices:
        d = Path(args.dump_matrices)
        d.mkdir(parents=True, exist_ok=True)
        for name, M in ss.matrices().items():
            write_matrix_csv(d / f"{name}.csv", name, M)
    _emit(_report_json(doc, args), args.output)
    return EXIT_OK


def cmd_stability(args) -> int:
    case, model, eq, _ = _prepare(args)
    report = analyze(case, eq, args.alpha, model=model)
    _emit(_report_json(report.to_dict(), args), args.output)
    if args.output not in (None, "-"):
        sys.stdout.write(report.render_table())
    if args.plot:
        from .plotting import plot_spectrum
        plot_spectrum(report.full_spectrum, args.plot, title=case.name)
    for d in report.disagreements:
        print(f"droopgrid: warning: {d}", file=sys.stderr)
    if not (report.certified and report.stable):
        print("droopgrid: verdict: stability certificate withheld or spectrum unstable", file=sys.stderr)
        return EXIT_VERDICT
    return EXIT_OK


def _disturbance(args, case) -> DisturbanceSpec:
    if not args.perturb:
        return DisturbanceSpec.default(case)
    try:
        doc = json.loads(Path(args.perturb).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise InputError(f"{args.perturb}: not valid JSON ({exc})") from None
    return DisturbanceSpec.from_dict(doc)


def cmd_simulate(args) -> int:
    case, model, eq, _ = _prepare(args)
    x0 = apply_disturbance(eq, _disturbance(args, case))
    traj = integrate(model, x0, args.t_end, args.dt, args.method, output_dt=args.output_dt)
    traj.metadata["frame_omega"] = eq.omega_s
    _emit(traj.to_csv(), args.output)
    if args.plot:
        from .plotting import plot_trajectory
        plot_trajectory(traj, args.plot)
    if traj.diverged:
        print(f"droopgrid: verdict: trajectory diverged at t = {traj.t[-1]:.6g} s", file=sys.stderr)
        return EXIT_VERDICT
    return EXIT_OK


def cmd_sweep(args) -> int:
    case, model, eq, target = _prepare(args)
    if target is not None:
        case = load_case(args.case)
        ov = _overrides(args)
        if ov:
            case = case.with_params(**ov)
    plan = SweepPlan(param=args.param.upper(), values=tuple(sorted(args.values)),
                     overrides={k: v for k, v in _overrides(args).items() if k != args.param.lower()},
                     disturbance=_disturbance(args, case), alpha=args.alpha, t_end=args.t_end, dt=args.dt,
                     output_dt=args.output_dt, method=args.method)
    runs = sweep(case, plan, target=target)
    _emit(sweep_summary_csv(runs), args.output)
    if args.traj_dir:
        d = Path(args.traj_dir)
        d.mkdir(parents=True, exist_ok=True)
        for run in runs:
            (d / f"{plan.param}_{run.value:g}.csv").write_text(run.trajectory.to_csv(), encoding="utf-8")
    if args.plot:
        from .plotting import plot_sweep
        inv = [k for k, b in enumerate(case.buses) if b.is_inverter]
        plot_sweep(runs, args.plot, plan.param, buses=inv[:2])
    unsettled = [r.value for r in runs if r.stable and not r.settled]
    if unsettled:
        print(f"droopgrid: warning: runs {unsettled} have signals that did not settle by --t-end; "
              "their settling times are left empty", file=sys.stderr)
    bad = [r.value for r in runs if not r.stable]
    if bad:
        print(f"droopgrid: verdict: runs {bad} diverged", file=sys.stderr)
        return EXIT_VERDICT
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    fmt = argparse.ArgumentDefaultsHelpFormatter
    p = argparse.ArgumentParser(prog="droopgrid", formatter_class=fmt,
                                description="Generalized-droop lossy microgrid analysis.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("--deterministic", action="store_true", help="omit timestamps from JSON reports")
    sub = p.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("case", help="builtin name (ieee9) or path to a case JSON file")
    common.add_argument("--alpha", type=_alpha, default="auto", help="auto, traditional or radians")
    for k, desc in (("d1", "inverse P droop gain"), ("d2", "inverse Q droop gain"),
                    ("t1", "angle filter constant (s)"), ("t2", "voltage filter constant (s)")):
        common.add_argument(f"--{k}", type=float, help=f"override {desc} on every inverter")
    common.add_argument("-o", "--output", default=None, help="output file (default stdout)")
    common.add_argument("--deterministic", action="store_true", default=argparse.SUPPRESS,
                        help="omit timestamps from JSON reports")
    with_eq = argparse.ArgumentParser(add_help=False)
    with_eq.add_argument("--eq", help="equilibrium JSON: calibration target and Newton start "
                                      "(builtin cases default to their bundled state)")
    integ = argparse.ArgumentParser(add_help=False)
    integ.add_argument("--perturb", help="disturbance JSON {theta:{bus:rad}, v:{bus:pu}, random:{magnitude,seed,angles}}"
                                         "; default +0.01 p.u. on every inverter voltage")
    integ.add_argument("--t-end", type=float, default=30.0, help="simulated time (s)")
    integ.add_argument("--dt", type=float, default=1e-4, help="RK4 step / RK45 output grid (s)")
    integ.add_argument("--output-dt", type=float, default=1e-3, help="sample spacing of saved trajectories (s)")
    integ.add_argument("--method", choices=("rk4", "rk45"), default="rk4")
    integ.add_argument("--plot", help="also write a figure to this path")

    case_p = sub.add_parser("case", help="case file utilities", formatter_class=fmt)
    case_sub = case_p.add_subparsers(dest="case_command", required=True)
    v = case_sub.add_parser("validate", help="check a case file", formatter_class=fmt)
    v.add_argument("file")
    v.set_defaults(func=cmd_case_validate)
    g = case_sub.add_parser("gen", help="redraw line R/X ratios of a base case", formatter_class=fmt)
    g.add_argument("--base", default="ieee9", help="builtin name or case file")
    g.add_argument("--rx-mean", type=float, default=0.7)
    g.add_argument("--rx-std", type=float, default=0.02)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("-o", "--output", default=None)
    g.set_defaults(func=cmd_case_gen)

    e = sub.add_parser("equilibrium", parents=[common], help="solve the operating point", formatter_class=fmt)
    e.add_argument("--calibrate-from", help="equilibrium JSON whose state fills uncalibrated references")
    e.set_defaults(func=cmd_equilibrium, eq=None)

    s = sub.add_parser("smallsignal", parents=[common, with_eq], help="Jacobian, edge weights, coupling",
                       formatter_class=fmt)
    s.add_argument("--dump-matrices", help="directory for J, L1, L2, L_lp, J_A, J_V CSV dumps")
    s.set_defaults(func=cmd_smallsignal)

    st = sub.add_parser("stability", parents=[common, with_eq], help="assumption checks and certificates",
                        formatter_class=fmt)
    st.add_argument("--plot", help="also write the spectrum figure to this path")
    st.set_defaults(func=cmd_stability)

    sim = sub.add_parser("simulate", parents=[common, with_eq, integ], help="transient response CSV",
                         formatter_class=fmt)
    sim.set_defaults(func=cmd_simulate)

    sw = sub.add_parser("sweep", parents=[common, with_eq, integ], help="settling times over a parameter sweep",
                        formatter_class=fmt)
    sw.add_argument("--param", type=str.upper, choices=("T1", "T2", "D1", "D2"), required=True)
    sw.add_argument("--values", type=_values, required=True, help="comma-separated values")
    sw.add_argument("--traj-dir", help="directory for per-run trajectory CSVs")
    sw.set_defaults(func=cmd_sweep)
    return p


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code in (0, None) else EXIT_INPUT
    try:
        return args.func(args)
    except (CaseError, NetworkError, CalibrationError, ModelError, InputError, KeyError, ValueError,
            FileNotFoundError, IsADirectoryError, json.JSONDecodeError) as exc:
        msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        print(f"droopgrid: error[input]: {msg}", file=sys.stderr)
        return EXIT_INPUT
    except (EquilibriumError, SpectrumError, SimulationError, np.linalg.LinAlgError, FloatingPointError) as exc:
        print(f"droopgrid: error[numerical]: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
