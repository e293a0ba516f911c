"""Command line entry point: ``chlog run | convergence | sweep | inspect``.

Exit codes: 0 success, 1 configuration (or input) error, 2 guard abort.
"""
from __future__ import annotations

import argparse
import csv
import logging
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from .config import ConfigError, RunConfig, load_config
from .convergence_lab import ConvergenceStudy, StudyError, curve_rows, error_curve, observed_order
from .diagnostics import CSV_COLUMNS, separation_report
from .snapshot import SnapshotError, load_snapshot, save_snapshot
from .stepper import SimState, run

log = logging.getLogger("chlog")

EXIT_OK, EXIT_CONFIG, EXIT_GUARD = 0, 1, 2


def fmt(x) -> str:
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return f"{x:.17g}"


class CSVSink:
    """Row writer that flushes after every row, so aborted runs keep their data."""

    def __init__(self, path, columns, append=False):
        exists = append and os.path.exists(path) and os.path.getsize(path) > 0
        self.fh = open(path, "a" if exists else "w", newline="", encoding="utf-8")
        self.writer = csv.writer(self.fh, lineterminator="\n")
        self.columns = columns
        if not exists:
            self.writer.writerow(columns)

    def write(self, row: dict) -> None:
        self.writer.writerow([fmt(row[c]) for c in self.columns])
        self.fh.flush()

    def close(self):
        self.fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def execute_run(cfg: RunConfig, snapshot_every: int | None = None, resume: str | None = None,
                force: bool = False) -> int:
    os.makedirs(cfg.out_dir, exist_ok=True)
    scheme = cfg.scheme_config()
    target = cfg.total_steps()
    if resume:
        snap = load_snapshot(resume)
        mismatch = []
        if snap.params != cfg.params:
            mismatch.append(f"params {snap.params} vs config {cfg.params}")
        if snap.tau != cfg.tau:
            mismatch.append(f"tau {snap.tau} vs config {cfg.tau}")
        if snap.n != cfg.grid_n:
            mismatch.append(f"n {snap.n} vs config {cfg.grid_n}")
        if snap.n != cfg.grid_n or (mismatch and not force):
            raise ConfigError("snapshot does not match config: " + "; ".join(mismatch)
                              + ("" if snap.n != cfg.grid_n else " (use --force to override)"))
        start = snap.state
        if snap.tau != cfg.tau:
            start = SimState.initial(start.u, cfg.tau, step=start.step)
    else:
        start = cfg.initial_field()
    first_step = start.step if resume else 0
    n_steps = max(0, target - first_step)

    csv_path = os.path.join(cfg.out_dir, "diagnostics.csv")
    with CSVSink(csv_path, CSV_COLUMNS, append=bool(resume)) as sink:
        def write_row(state, rec):
            if resume and rec.step == first_step:
                return
            sink.write(rec.csv_row())

        hooks = [write_row]
        if snapshot_every:
            def snap_hook(state, rec):
                if state.step % snapshot_every == 0 and state.step != first_step:
                    save_snapshot(state, cfg.params,
                                  os.path.join(cfg.out_dir, f"snapshot_{state.step:08d}.chlog"))
            hooks.append(snap_hook)
        # snapshots need a record at every multiple of snapshot_every
        cadence = cfg.cadence if not snapshot_every else math.gcd(cfg.cadence, snapshot_every)
        result = run(start, scheme, n_steps, hooks=hooks, cadence=cadence)

    save_snapshot(result.state, cfg.params, os.path.join(cfg.out_dir, "final.chlog"))
    if result.records:
        rep = separation_report(result.records)
        print(f"steps={result.state.step} energy={fmt(result.records[-1].energy)} "
              f"min_margin={fmt(rep.min_margin)} monotone_energy={rep.monotone_energy}")
    if result.aborted:
        print(f"guard abort: {result.error}", file=sys.stderr)
        return EXIT_GUARD
    return EXIT_OK


def cmd_run(args) -> int:
    cfg = load_config(args.config)
    return execute_run(cfg, args.snapshot_every, args.resume, args.force)


def _floats(text: str) -> list[float]:
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise ConfigError(f"cannot parse {text!r} as a comma-separated list of numbers") from None


def cmd_convergence(args) -> int:
    cfg = load_config(args.config)
    try:
        study = ConvergenceStudy(
            params=cfg.params, init=cfg.init, seed=cfg.seed, n=cfg.grid_n,
            t_final=args.t_final, taus=_floats(args.taus), tau_ref=args.tau_ref,
            scheme=cfg.scheme if cfg.scheme != "galerkin" else "semi_implicit",
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    try:
        error_curve(study, workers=args.workers)
    except StudyError as exc:
        print(f"study invalid: {exc}", file=sys.stderr)
        return EXIT_GUARD
    os.makedirs(cfg.out_dir, exist_ok=True)
    with CSVSink(os.path.join(cfg.out_dir, "convergence.csv"),
                 ("tau", "error", "log_tau", "log_error")) as sink:
        for row in curve_rows(study):
            sink.write(row)
    try:
        fit = observed_order(study.errors)
    except StudyError as exc:
        print(f"no fit: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    study.fit = fit
    with CSVSink(os.path.join(cfg.out_dir, "convergence_summary.csv"),
                 ("p", "fit_residual", "tau_ref", "t_final")) as sink:
        sink.write({"p": fit.p, "fit_residual": fit.fit_residual,
                    "tau_ref": study.tau_ref, "t_final": study.t_final})
    for t, e in study.errors:
        print(f"tau={fmt(t)} error={fmt(e)}")
    print(f"p={fmt(fit.p)} fit_residual={fmt(fit.fit_residual)}")
    return EXIT_OK


def _sweep_one(job):
    cfg, snapshot_every = job
    try:
        return execute_run(cfg, snapshot_every)
    except (ConfigError, SnapshotError) as exc:
        print(f"{cfg.out_dir}: {exc}", file=sys.stderr)
        return EXIT_CONFIG


def cmd_sweep(args) -> int:
    cfg = load_config(args.config)
    key, sep, values = args.vary.partition("=")
    if not sep or not values:
        raise ConfigError(f"--vary expects key=v1,v2,..., got {args.vary!r}")
    if key == "out_dir":
        raise ConfigError("out_dir cannot be swept")
    jobs = []
    for v in (s.strip() for s in values.split(",")):
        sub = cfg.with_override(key, v)
        sub = sub.with_override("out_dir", os.path.join(cfg.out_dir, f"{key}={v}"))
        jobs.append((sub, args.snapshot_every))
    if args.workers > 1:
        with ProcessPoolExecutor(args.workers) as pool:
            codes = list(pool.map(_sweep_one, jobs))
    else:
        codes = [_sweep_one(j) for j in jobs]
    for (sub, _), code in zip(jobs, codes):
        print(f"{sub.out_dir}: exit {code}")
    return max(codes)


def cmd_inspect(args) -> int:
    snap = load_snapshot(args.snapshot)
    v = snap.state.u.values
    p = snap.params
    print(f"version={snap.version}")
    print(f"n={snap.n}")
    print(f"step={snap.state.step}")
    print(f"tau={fmt(snap.tau)}")
    print(f"time={fmt(snap.state.time)}")
    print(f"nu={fmt(p.nu)} theta={fmt(p.theta)} theta_c={fmt(p.theta_c)}")
    print(f"min={fmt(float(v.min()))}")
    print(f"max={fmt(float(v.max()))}")
    print(f"mean={fmt(float(np.mean(v)))}")
    print(f"margin={fmt(1.0 - float(np.max(np.abs(v))))}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="chlog", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run one simulation and write diagnostics.csv")
    r.add_argument("--config", required=True)
    r.add_argument("--snapshot-every", type=int, default=None, metavar="K")
    r.add_argument("--resume", default=None, metavar="SNAPSHOT")
    r.add_argument("--force", action="store_true",
                   help="resume even if snapshot parameters differ from the config")
    r.set_defaults(func=cmd_run)

    c = sub.add_parser("convergence", help="temporal convergence study")
    c.add_argument("--config", required=True)
    c.add_argument("--taus", required=True, help="comma-separated, decreasing")
    c.add_argument("--tau-ref", type=float, required=True)
    c.add_argument("--t-final", type=float, required=True)
    c.add_argument("--workers", type=int, default=1)
    c.set_defaults(func=cmd_convergence)

    s = sub.add_parser("sweep", help="independent runs varying one config key")
    s.add_argument("--config", required=True)
    s.add_argument("--vary", required=True, metavar="KEY=V1,V2,...")
    s.add_argument("--workers", type=int, default=1)
    s.add_argument("--snapshot-every", type=int, default=None, metavar="K")
    s.set_defaults(func=cmd_sweep)

    i = sub.add_parser("inspect", help="print a snapshot header and field summary")
    i.add_argument("--snapshot", required=True)
    i.set_defaults(func=cmd_inspect)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if getattr(args, "snapshot_every", None) is not None and args.snapshot_every < 1:
        print("error: --snapshot-every must be >= 1", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return args.func(args)
    except (ConfigError, SnapshotError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
