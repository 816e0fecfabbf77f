"""Command-line entry point ``clvda``.

Failures print a one-line JSON object on stderr and exit nonzero
(2 for invalid input, 1 for numerical or I/O failures).
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from clvda.errors import ClvdaError, ValidationError
from clvda.harness import experiment as ex
from clvda.harness import io
from clvda.harness.config import load_config
from clvda.harness.seeds import fmt_param


def _global_flags(p: argparse.ArgumentParser, suppress: bool) -> None:
    d = (lambda v: argparse.SUPPRESS) if suppress else (lambda v: v)
    p.add_argument("--config", default=d(None), help="experiment config (INI)")
    p.add_argument("--seed", type=int, default=d(None), help="master seed, overrides the config")
    p.add_argument("--out", default=d(None), help="output directory")
    p.add_argument("--threads", type=int, default=d(None), help="worker threads for grid points")
    p.add_argument("-v", "--verbose", action="store_true", default=d(False))


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="clvda", description=__doc__.splitlines()[0])
    _global_flags(parser, suppress=False)
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, help_):
        p = sub.add_parser(name, help=help_)
        _global_flags(p, suppress=True)
        return p

    add("trajectory", "integrate the spun-up truth trajectory (truth.traj)")

    p = add("lyapunov", "Ginelli sweeps on a trajectory file")
    p.add_argument("--traj", required=True)
    p.add_argument("--start", type=int, default=0, help="first sample of the schedule window")
    p.add_argument("--name", default=None, help="output file name (default: <traj stem>.lyap)")

    p = add("observe", "synthetic observations of a truth trajectory")
    p.add_argument("--traj", required=True)
    p.add_argument("--mu", type=float, required=True, help="observation noise std")

    p = add("assimilate", "EnKF run over an observation file")
    p.add_argument("--traj", required=True, help="truth trajectory")
    p.add_argument("--obs", required=True)

    p = add("perturb", "Gaussian-perturbed copy of a trajectory")
    p.add_argument("--traj", required=True)
    p.add_argument("--sigma", type=float, required=True)
    p.add_argument("--replicate", type=int, default=0)
    p.add_argument("--start", type=int, default=0, help="drop samples before this index")

    p = add("angles", "vector angles and principal angles between two Lyapunov sets")
    p.add_argument("--ref", required=True)
    p.add_argument("--other", required=True)
    p.add_argument("--source", default="other", help="source label written to the tables")
    p.add_argument("--param", type=float, default=0.0, help="parameter value written to the tables")
    p.add_argument("--dims", default=None, help="comma-separated subspace dims (default: config)")

    add("experiment", "full config-driven pipeline")
    add("validate", "run the invariant suite")
    return parser


def _emit(obj) -> None:
    print(json.dumps(obj, sort_keys=True, default=io.json_default))


def _need_config(args):
    if not args.config:
        raise ValidationError(f"'{args.command}' needs --config")
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg = cfg.with_seed(args.seed)
    return cfg


def _out_dir(args, cfg=None) -> Path:
    out = Path(args.out or (cfg.output if cfg is not None and cfg.output else "."))
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_trajectory(args):
    cfg = _need_config(args)
    truth = ex.make_truth(cfg)
    path = _out_dir(args, cfg) / "truth.traj"
    io.save_trajectory(path, truth)
    _emit({"written": str(path), "samples": truth.n_samples})


def cmd_lyapunov(args):
    cfg = _need_config(args)
    traj = io.load_trajectory(args.traj)
    if traj.model != cfg.model:
        raise ValidationError("trajectory model does not match the config model")
    ly = ex.lyapunov_stage(cfg, traj, args.start)
    path = _out_dir(args, cfg) / (args.name or Path(args.traj).with_suffix(".lyap").name)
    io.save_lyapunov(path, ly)
    _emit({"written": str(path), "exponents": ly.exponents})


def cmd_observe(args):
    cfg = _need_config(args)
    if cfg.assimilated is None:
        raise ValidationError("config has no [assimilated] section")
    obs = ex.observe_stage(cfg, io.load_trajectory(args.traj), args.mu)
    path = _out_dir(args, cfg) / f"observations-mu{fmt_param(args.mu)}.obs"
    io.save_observations(path, obs)
    _emit({"written": str(path), "n_obs": obs.values.shape[0]})


def cmd_assimilate(args):
    cfg = _need_config(args)
    if cfg.assimilated is None:
        raise ValidationError("config has no [assimilated] section")
    truth = io.load_trajectory(args.traj)
    obs = io.load_observations(args.obs)
    run, free = ex.assimilate_stage(cfg, truth, obs)
    mu = obs.obs_model.noise_std
    path = _out_dir(args, cfg) / f"assimilated-mu{fmt_param(mu)}.traj"
    io.save_trajectory(path, run.as_trajectory())
    _emit({"written": str(path), "rmse_mean": run.rmse_mean, "spread_mean": run.spread_mean,
           "free_run_rmse": free.rmse_mean, "diverged": run.diverged})


def cmd_perturb(args):
    cfg = _need_config(args)
    traj = ex.perturb_stage(cfg, io.load_trajectory(args.traj), args.sigma, args.replicate,
                            args.start)
    path = _out_dir(args, cfg) / f"perturbed-sigma{fmt_param(args.sigma)}-r{args.replicate}.traj"
    io.save_trajectory(path, traj)
    _emit({"written": str(path)})


def cmd_angles(args):
    ref = io.load_lyapunov(args.ref)
    other = io.load_lyapunov(args.other)
    if args.dims is not None:
        dims = tuple(int(v) for v in args.dims.split(",") if v.strip())
        eid = "adhoc"
        cfg = None
    else:
        cfg = _need_config(args)
        dims = cfg.metrics.subspace_dims
        eid = cfg.experiment_id()
    res = ex.SourceResult(args.source, args.param, [other])
    angles, pas, exps = ex.pair_tables(eid, ref, res, dims)
    out = _out_dir(args, cfg)
    meta = {"experiment_id": eid, "ref": str(args.ref), "other": str(args.other),
            "units": ex.UNITS}
    io.write_table(out / "angles.csv", ex.ANGLE_COLUMNS, angles, meta)
    io.write_table(out / "exponents.csv", ex.EXPONENT_COLUMNS, exps, meta)
    written = ["angles.csv", "exponents.csv"]
    if dims:
        io.write_table(out / "principal_angles.csv", ex.PA_COLUMNS, pas, meta)
        written.append("principal_angles.csv")
    _emit({"written": [str(out / w) for w in written]})


def cmd_experiment(args):
    cfg = _need_config(args)
    out = _out_dir(args, cfg)
    tables = ex.run_experiment(cfg, out, args.threads)
    _emit({"experiment_id": cfg.experiment_id(), "out": str(out),
           "tables": {k: len(v) for k, v in tables.items()}})


def cmd_validate(args):
    from clvda.harness.validate import run_suite

    checks = run_suite(args.seed or 0)
    for c in checks:
        print(c.line())
    failed = [c.name for c in checks if not c.passed]
    print(f"{len(checks) - len(failed)}/{len(checks)} checks passed")
    return 1 if failed else 0


COMMANDS = {
    "trajectory": cmd_trajectory, "lyapunov": cmd_lyapunov, "observe": cmd_observe,
    "assimilate": cmd_assimilate, "perturb": cmd_perturb, "angles": cmd_angles,
    "experiment": cmd_experiment, "validate": cmd_validate,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.threads is not None and args.threads < 1:
        parser.error("--threads must be >= 1")
    try:
        return COMMANDS[args.command](args) or 0
    except (ClvdaError, ValueError, OSError, KeyError) as exc:
        code = 2 if isinstance(exc, (ValidationError, KeyError)) else 1
        err = {"error": type(exc).__name__, "message": str(exc), "command": args.command}
        print(json.dumps(err, sort_keys=True), file=sys.stderr)
        return code


if __name__ == "__main__":
    sys.exit(main())
