"""Command-line entry point ``pmsm-pi``.

Exit status: 0 success, 1 configuration or input error, 2 divergence (``run``)
or a monitor outside tolerance (``check``).
"""

from __future__ import annotations

import argparse
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np

from .analysis import certify, failing_monitors
from .config import ConfigError, RunConfig, load_config, parse_motor
from .gains import (
    BracketError,
    closed_loop_jacobian,
    equilibrium,
    kp_min_general,
    kp_min_nonsalient,
    kp_stability_boundary,
    passivity_margin,
)
from .io import TrajectoryFormatError, format_report, read_trajectory, write_plotdata, write_trajectory
from .motor import TABLE1
from .sim import run_scenario

OK, INPUT_ERROR, FAILED = 0, 1, 2


def _err(msg: str) -> None:
    print(f"error: {msg}", file=sys.stderr)


def report_path(csv_path: Path) -> Path:
    return csv_path.with_suffix(".report.txt")


def _output_for(cfg_path: Path, cfg: RunConfig, out: str | None, batch: bool) -> Path:
    if batch:
        return Path(out or ".") / f"{cfg_path.stem}.csv"
    if out:
        return Path(out)
    if cfg.output_path:
        return Path(cfg.output_path)
    return Path(f"{cfg_path.stem}.csv")


def _run_one(cfg_path: str, out: str | None, decimation: int | None, plotdata: bool, batch: bool) -> tuple[int, str]:
    """Run one config; returns (exit status, message).  Executed in worker processes for --jobs."""
    try:
        cfg = load_config(cfg_path)
    except ConfigError as exc:
        return INPUT_ERROR, f"error: {exc}"
    if decimation is not None:
        cfg = replace(cfg, decimation=decimation)
    sc = cfg.scenario()
    traj = run_scenario(sc, cfg.motor)
    csv_path = _output_for(Path(cfg_path), cfg, out, batch)
    csv_path.parent.mkdir(parents=True, exist_ok=True)
    write_trajectory(traj, csv_path)
    lines = [f"trajectory = {csv_path}"]
    if plotdata:
        lines += [f"plotdata = {p}" for p in write_plotdata(traj, csv_path)]
    if cfg.report:
        report = certify(traj, sc, cfg.motor)
        rp = report_path(csv_path)
        rp.write_text(format_report(report, failing_monitors(report, sc.dt)))
        lines.append(f"report = {rp}")
    if traj.diverged:
        lines.append(f"diverged at t = {traj.divergence_time!r}")
        return FAILED, "\n".join(lines)
    return OK, "\n".join(lines)


def cmd_run(args) -> int:
    configs = args.config or []
    if not configs:
        _err("run needs at least one --config")
        return INPUT_ERROR
    batch = len(configs) > 1
    jobs = max(1, args.jobs or 1)
    work = [(c, args.out, args.decimation, args.plotdata, batch) for c in configs]
    if jobs > 1 and batch:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_run_one, *zip(*work)))
    else:
        results = [_run_one(*w) for w in work]
    status = OK
    for code, msg in results:
        print(msg, file=sys.stderr if code == INPUT_ERROR else sys.stdout)
        if code == INPUT_ERROR:
            status = INPUT_ERROR
        elif code == FAILED and status == OK:
            status = FAILED
    return status


def _single_config(args) -> RunConfig | None:
    if not args.config or len(args.config) != 1:
        _err("exactly one --config is required")
        return None
    try:
        return load_config(args.config[0])
    except ConfigError as exc:
        _err(str(exc))
        return None


def cmd_gainbound(args) -> int:
    p = TABLE1
    if args.config:
        path = Path(args.config[0])
        try:
            p = parse_motor(path.read_text(), str(path))
        except OSError as exc:
            _err(f"{path}: cannot read: {exc.strerror}")
            return INPUT_ERROR
        except ConfigError as exc:
            _err(str(exc))
            return INPUT_ERROR
    if args.tau_max < 0:
        _err("--tau-max must be >= 0")
        return INPUT_ERROR
    cert = kp_min_general(args.omega, args.tau_max, p)
    eps = passivity_margin(equilibrium(args.omega, args.tau_max, p), p)
    closed = "not applicable" if p.salient else repr(kp_min_nonsalient(args.omega, args.tau_max, p))
    print(f"kp_min = {cert.kp_min!r}")
    print(f"kp_min_recommended = {cert.kp_min + args.margin!r}")
    print(f"kp_min_closed_form = {closed}")
    print(f"passivity_margin = {eps!r}")
    print(f"x2_worst = {cert.x2_worst!r}")
    return OK


def cmd_linearize(args) -> int:
    cfg = _single_config(args)
    if cfg is None:
        return INPUT_ERROR
    if cfg.scenario_id != "C1":
        _err(f"linearize needs a C1 config, got scenario.id = {cfg.scenario_id}")
        return INPUT_ERROR
    eq = equilibrium(cfg.speed(0.0), cfg.load(0.0), cfg.motor)
    KI = cfg.ki * np.eye(2)
    eigs = np.linalg.eigvals(closed_loop_jacobian(cfg.kp, KI, eq, cfg.motor))
    eigs = eigs[np.lexsort((eigs.imag, eigs.real))]
    print(f"kp = {cfg.kp!r}")
    for k, lam in enumerate(eigs, 1):
        print(f"eig_{k} = {float(lam.real)!r} {float(lam.imag):+.17g}j")
    print(f"hurwitz = {'true' if np.max(eigs.real) < 0 else 'false'}")
    if args.bracket is not None:
        lo, hi = args.bracket
        try:
            kb = kp_stability_boundary(KI, eq, cfg.motor, (lo, hi))
        except BracketError as exc:
            _err(str(exc))
            return INPUT_ERROR
        print(f"stability_boundary = {kb!r}")
    return OK


def cmd_check(args) -> int:
    cfg = _single_config(args)
    if cfg is None:
        return INPUT_ERROR
    sc = cfg.scenario()
    try:
        traj = read_trajectory(args.trajectory, sc, cfg.motor)
    except TrajectoryFormatError as exc:
        _err(str(exc))
        return INPUT_ERROR
    report = certify(traj, sc, cfg.motor)
    failed = failing_monitors(report, sc.dt)
    print(format_report(report, failed), end="")
    if failed:
        print(f"failing monitor: {', '.join(failed)}")
        return FAILED
    return OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pmsm-pi", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", action="append", metavar="PATH", help="run configuration file")

    run = sub.add_parser("run", help="simulate a scenario and write the trajectory CSV")
    common(run)
    run.add_argument("--out", metavar="PATH", help="CSV path (a directory when several configs are given)")
    run.add_argument("--decimation", type=int, metavar="N", help="record every N-th step")
    run.add_argument("--jobs", type=int, default=1, metavar="N", help="run several configs in N processes")
    run.add_argument("--plotdata", action="store_true", help="also write per-panel column subsets")
    run.set_defaults(func=cmd_run)

    gb = sub.add_parser("gainbound", help="minimal proportional gain for an operating range")
    common(gb)
    gb.add_argument("--omega", type=float, required=True, help="reference speed (rad/s)")
    gb.add_argument("--tau-max", type=float, required=True, help="largest load torque magnitude (N m)")
    gb.add_argument("--margin", type=float, default=1e-3, help="added to kp_min for the recommended gain (Ohm)")
    gb.set_defaults(func=cmd_gainbound)

    lin = sub.add_parser("linearize", help="closed-loop eigenvalues of the C1 loop")
    common(lin)
    lin.add_argument("--bracket", type=float, nargs=2, metavar=("LO", "HI"), help="bisect the stability boundary")
    lin.set_defaults(func=cmd_linearize)

    chk = sub.add_parser("check", help="recompute the certificate report from a trajectory CSV")
    common(chk)
    chk.add_argument("trajectory", help="trajectory CSV written by run")
    chk.set_defaults(func=cmd_check)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return OK if exc.code == 0 else INPUT_ERROR
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
