"""Command line entry point: ``rdelab {simulate,attractor,sweep,verify}``."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from rdelab import attractor as att
from rdelab.harness import (ConfigError, ExperimentConfig, calibrate_M, run_sweep, run_verify,
                            summarize)
from rdelab.noise import ou_from_path
from rdelab.spde import trajectory_rows, write_trajectory_csv


def _load_config(args) -> ExperimentConfig:
    config = ExperimentConfig.load(args.config) if args.config else ExperimentConfig()
    doc = config.to_dict()
    if args.seed is not None:
        doc["seeds"] = [args.seed]
    if args.out is not None:
        doc["output_dir"] = args.out
    return ExperimentConfig.from_dict(doc)


def cmd_simulate(args, config: ExperimentConfig) -> int:
    seed = config.seeds[0]
    spec = config.problem(args.epsilon)
    omega = config.path(seed, forward=args.time)
    u0 = config.grid.zeros()
    rows = trajectory_rows(spec, config.solver, args.time, omega, u0, every=args.every)
    out = Path(config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    dest = out / f"trajectory_eps{args.epsilon:g}_seed{seed}.csv"
    write_trajectory_csv(rows, dest)
    print(dest)
    return 0


def cmd_attractor(args, config: ExperimentConfig) -> int:
    seed = config.seeds[0]
    M = calibrate_M(config)
    if args.epsilon == 0:
        cloud = att.global_attractor(config.problem(0.0), config.solver, config.T_pullback,
                                     config.ensemble_count, config.dedup_tol,
                                     ball=att.AbsorbingBall(M, 0.0, 0.0))
    else:
        omega = config.path(seed)
        r_hat = ou_from_path(omega, config.lam, 4.0).r_hat
        cloud = att.pullback_attractor(config.problem(args.epsilon), config.solver, omega,
                                       config.T_pullback, config.ensemble_count,
                                       config.dedup_tol,
                                       ball=att.AbsorbingBall(M, args.epsilon, r_hat), seed=seed)
    out = Path(config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    dest = out / f"attractor_eps{args.epsilon:g}_seed{seed}.json"
    cloud.save(dest)
    print(f"{dest}: {len(cloud)} point(s), resolution {cloud.resolution:.3g}")
    return 0


def cmd_sweep(args, config: ExperimentConfig) -> int:
    result = run_sweep(config, jobs=args.jobs)
    failed = [r for r in result.rows if r.failed]
    for eps, med in sorted(result.medians().items(), reverse=True):
        print(f"eps={eps:<10g} median dist(A_eps, A_0) = {med:.6g}")
    if failed:
        print(f"{len(failed)} cell(s) failed; see sweep_meta.json", file=sys.stderr)
    return 1 if failed else 0


def cmd_verify(args, config: ExperimentConfig) -> int:
    summary = summarize(run_verify(config, jobs=args.jobs))
    for r in summary:
        print(f"{'PASS' if r.pass_flag else 'FAIL'}  {r.check:<24} {r.quantity_name} = {r.value:.4g}")
    return 0 if all(r.pass_flag for r in summary) else 1


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="rdelab", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", help="experiment config (JSON)")
        sp.add_argument("--seed", type=int, help="override the seed list with one seed")
        sp.add_argument("--jobs", type=int, default=1, help="max parallel worker processes")
        sp.add_argument("--out", help="override output_dir")
        return sp

    s = common(sub.add_parser("simulate", help="one trajectory, dumps a time series"))
    s.add_argument("--epsilon", type=float, default=1.0)
    s.add_argument("--time", type=float, default=10.0)
    s.add_argument("--every", type=int, default=100, help="record every n-th step")
    s.set_defaults(func=cmd_simulate)

    s = common(sub.add_parser("attractor", help="one attractor cloud, dumps JSON"))
    s.add_argument("--epsilon", type=float, default=1.0)
    s.set_defaults(func=cmd_attractor)

    common(sub.add_parser("sweep", help="eps-sweep of dist(A_eps, A_0)")).set_defaults(func=cmd_sweep)
    common(sub.add_parser("verify", help="run the check inventory")).set_defaults(func=cmd_verify)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        config = _load_config(args)
    except (ConfigError, OSError, ValueError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    return args.func(args, config)


if __name__ == "__main__":
    sys.exit(main())
