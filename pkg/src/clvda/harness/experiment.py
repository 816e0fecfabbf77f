"""Config-driven pipeline: truth, perturbed and assimilated sources, metrics, tables.

Each stage below is also reachable from its own CLI subcommand, so chaining
the subcommands by hand on the same seed reproduces ``run_experiment``.
"""
from __future__ import annotations

import json
import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from clvda import enkf, metrics
from clvda.ginelli import LyapunovSet, compute_lyapunov, kaplan_yorke
from clvda.harness import io
from clvda.harness.config import ExperimentConfig
from clvda.harness.seeds import derived_seed, fmt_param, stream
from clvda.models import Trajectory, integrate_trajectory, random_initial_state
from clvda.perturb import PerturbationSpec, perturb_trajectory

log = logging.getLogger(__name__)

ANGLE_COLUMNS = ("experiment_id", "source", "param_value", "vector_kind", "vector_index",
                 "median_deg", "p25_deg", "p75_deg", "n_samples")
PA_COLUMNS = ("experiment_id", "source", "param_value", "subspace_dim", "pa_index",
              "median_deg", "p25_deg", "p75_deg")
EXPONENT_COLUMNS = ("experiment_id", "source", "param_value", "exp_index", "lambda",
                    "abs_error_vs_truth")
RMSE_COLUMNS = ("experiment_id", "source", "param_value", "rmse_mean", "spread_mean",
                "free_run_rmse", "diverged")
GEOMETRY_COLUMNS = ("experiment_id", "source", "param_value", "sample_index", "time",
                    "state_first", "state_last", "clv1_first", "clv1_last", "clvm_first",
                    "clvm_last", "cos_clv1_clv2")
SUMMARY_COLUMNS = ("experiment_id", "source", "param_value", "n_positive", "kaplan_yorke",
                   "exponent_sum")

UNITS = {"median_deg": "degree", "p25_deg": "degree", "p75_deg": "degree",
         "lambda": "1/time", "abs_error_vs_truth": "1/time", "time": "model time",
         "rmse_mean": "state units", "spread_mean": "state units",
         "free_run_rmse": "state units"}


def code_version() -> str:
    try:
        from importlib.metadata import version
        return version("artifact")
    except Exception:  # noqa: BLE001 - metadata is absent in a bare source tree
        return "unknown"


# stages ---------------------------------------------------------------------

def make_truth(cfg: ExperimentConfig) -> Trajectory:
    """Spun-up reference trajectory long enough for burn-in plus the schedule."""
    t = cfg.trajectory
    x0 = random_initial_state(cfg.model, stream(cfg.seed, "trajectory/initial-state"))
    traj = integrate_trajectory(cfg.model, x0, t.spinup, cfg.total_time, t.dt, t.save_interval)
    return Trajectory(traj.model, traj.t0, traj.dt, traj.save_interval, traj.states,
                      meta={"source": "truth", "seed": cfg.seed})


def lyapunov_stage(cfg: ExperimentConfig, traj: Trajectory, start: int = 0) -> LyapunovSet:
    """Ginelli on samples ``start : start + required`` of ``traj``."""
    sched = cfg.schedule()
    win = traj.window(start, start + sched.required_samples)
    return compute_lyapunov(win, sched, m=cfg.m, seed=derived_seed(cfg.seed, "ginelli/backward"))


def perturb_stage(cfg: ExperimentConfig, truth: Trajectory, sigma: float, replicate: int = 0,
                  start: int = 0) -> Trajectory:
    rng = stream(cfg.seed, f"perturb/sigma={fmt_param(sigma)}", replicate)
    return perturb_trajectory(truth.window(start), PerturbationSpec(sigma), rng=rng)


def observation_model(cfg: ExperimentConfig, mu: float) -> enkf.ObservationModel:
    return enkf.ObservationModel.preset(cfg.assimilated.operator, cfg.model.dimension, mu,
                                        cfg.obs_interval)


def observe_stage(cfg: ExperimentConfig, truth: Trajectory, mu: float) -> enkf.ObservationSet:
    return enkf.generate_observations(truth, observation_model(cfg, mu),
                                      stream(cfg.seed, f"observe/mu={fmt_param(mu)}"))


def enkf_config(cfg: ExperimentConfig, mu: float) -> enkf.EnkfConfig:
    a = cfg.assimilated
    return enkf.EnkfConfig(ensemble_size=a.ensemble_size, initial_mean_offset=a.initial_offset,
                           initial_cov_scale=a.initial_cov,
                           localization_radius=a.localization_radius, inflation=a.inflation,
                           burn_in=a.burn_in, seed=derived_seed(cfg.seed, f"enkf/mu={fmt_param(mu)}"))


def assimilate_stage(cfg: ExperimentConfig, truth: Trajectory, obs: enkf.ObservationSet,
                     free_run: bool = True):
    """Filter run and, optionally, the matching free run (same initial ensemble)."""
    mu = obs.obs_model.noise_std
    ecfg = enkf_config(cfg, mu)
    run = enkf.run_filter(truth, obs, ecfg)
    free = enkf.run_filter(truth, obs, ecfg, assimilate=False) if free_run else None
    return run, free


# metrics --------------------------------------------------------------------

@dataclass
class SourceResult:
    source: str
    param: float
    lyaps: list


def _angle_rows(eid, ref: LyapunovSet, res: SourceResult):
    rows = []
    for kind in ("BLV", "CLV"):
        series = np.concatenate([metrics.vector_angle_series(ref, ly, kind) for ly in res.lyaps])
        for i in range(series.shape[1]):
            s = metrics.summarize(series[:, i])
            rows.append((eid, res.source, res.param, kind, i + 1, s.median, s.p25, s.p75, s.n))
    return rows


def _pa_rows(eid, ref: LyapunovSet, res: SourceResult, dims):
    rows = []
    for k in dims:
        series = np.concatenate([metrics.principal_angle_series(ref, ly, k) for ly in res.lyaps])
        for i in range(k):
            s = metrics.summarize(series[:, i])
            rows.append((eid, res.source, res.param, k, i + 1, s.median, s.p25, s.p75))
    return rows


def _exponent_rows(eid, ref: LyapunovSet, res: SourceResult):
    lam = np.mean([ly.exponents for ly in res.lyaps], axis=0)
    return [(eid, res.source, res.param, i + 1, float(lam[i]), float(abs(lam[i] - ref.exponents[i])))
            for i in range(lam.size)]


def _summary_row(eid, res: SourceResult):
    lam = np.sort(np.mean([ly.exponents for ly in res.lyaps], axis=0))[::-1]
    try:
        ky = kaplan_yorke(lam)
    except Exception:  # noqa: BLE001 - a truncated spectrum has no KY dimension
        ky = -1.0
    return (eid, res.source, res.param, int(np.sum(lam > 0)), float(ky), float(lam.sum()))


def _geometry_rows(eid, res: SourceResult, traj: Trajectory):
    ly = res.lyaps[0]
    rows = []
    C = ly.clv
    for n, j in enumerate(ly.sample_indices):
        x = traj.states[j]
        cos12 = float(abs(C[n, :, 0] @ C[n, :, 1])) if ly.m > 1 else 1.0
        rows.append((eid, res.source, res.param, int(j), float(ly.times[n] + traj.t0),
                     float(x[0]), float(x[-1]), float(C[n, 0, 0]), float(C[n, -1, 0]),
                     float(C[n, 0, -1]), float(C[n, -1, -1]), cos12))
    return rows


def random_baseline_rows(cfg: ExperimentConfig, eid, ref: LyapunovSet):
    rows = []
    for k in cfg.metrics.subspace_dims:
        rng = stream(cfg.seed, f"random/k={k}")
        pas = metrics.random_baseline(ref, k, cfg.metrics.random_realizations, rng)
        for i in range(k):
            s = metrics.summarize(pas[:, i])
            rows.append((eid, "random", 0.0, k, i + 1, s.median, s.p25, s.p75))
    return rows


def pair_tables(eid, ref: LyapunovSet, res: SourceResult, dims=()):
    """Angle, principal-angle and exponent rows for one source against the truth."""
    return _angle_rows(eid, ref, res), _pa_rows(eid, ref, res, dims), _exponent_rows(eid, ref, res)


# orchestration --------------------------------------------------------------

def _write_manifest(out: Path, cfg: ExperimentConfig, status: str, files=(), error=None):
    man = {"experiment_id": cfg.experiment_id(), "config_hash": cfg.config_hash(),
           "seed": cfg.seed, "status": status, "code_version": code_version(),
           "config": cfg.to_dict(), "files": sorted(files)}
    if error is not None:
        man["error"] = error
    (out / "manifest.json").write_text(json.dumps(man, indent=2, sort_keys=True,
                                                  default=io.json_default) + "\n")


def default_threads() -> int:
    try:
        return max(1, len(os.sched_getaffinity(0)))
    except AttributeError:
        return os.cpu_count() or 1


def run_experiment(cfg: ExperimentConfig, out_dir, threads: int | None = None) -> dict:
    """Run every configured source and write the result tables to ``out_dir``.

    Returns a mapping of table name to its rows. The manifest stays
    ``incomplete`` until every table is written.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    _write_manifest(out, cfg, "incomplete")
    try:
        tables, files = _run(cfg, out, threads or default_threads())
    except Exception as exc:
        _write_manifest(out, cfg, "incomplete", error=f"{type(exc).__name__}: {exc}")
        raise
    _write_manifest(out, cfg, "complete", files)
    return tables


def _run(cfg: ExperimentConfig, out: Path, threads: int):
    eid = cfg.experiment_id()
    offset = cfg.window_offset
    files = []

    log.info("truth trajectory for %s", eid)
    truth = make_truth(cfg)
    io.save_trajectory(out / "truth.traj", truth)
    ref = lyapunov_stage(cfg, truth, offset)
    io.save_lyapunov(out / "truth.lyap", ref)
    files += ["truth.traj", "truth.lyap"]
    truth_win = truth.window(offset, offset + cfg.schedule().required_samples)

    def perturbed_task(sigma, rep):
        traj = perturb_stage(cfg, truth, sigma, rep, offset)
        return lyapunov_stage(cfg, traj), traj

    def assimilated_task(mu):
        obs = observe_stage(cfg, truth, mu)
        run, free = assimilate_stage(cfg, truth, obs)
        if run.diverged:
            log.warning("filter diverged at mu=%s", mu)
        traj = run.as_trajectory()
        return lyapunov_stage(cfg, traj), traj, run, free, obs

    with ThreadPoolExecutor(max_workers=threads) as pool:
        pert_jobs = []
        if cfg.perturbed is not None:
            for sigma in cfg.perturbed.sigmas:
                for rep in range(cfg.perturbed.replicates):
                    pert_jobs.append((sigma, rep, pool.submit(perturbed_task, sigma, rep)))
        assim_jobs = []
        if cfg.assimilated is not None:
            assim_jobs = [(mu, pool.submit(assimilated_task, mu)) for mu in cfg.assimilated.mus]
        pert_out = [(s, r, f.result()) for s, r, f in pert_jobs]
        assim_out = [(mu, f.result()) for mu, f in assim_jobs]

    # single-threaded merge in configuration order
    results = [(SourceResult("truth", 0.0, [ref]), truth_win)]
    by_sigma: dict = {}
    for sigma, rep, (ly, traj) in pert_out:
        name = f"perturbed-sigma{fmt_param(sigma)}-r{rep}.lyap"
        io.save_lyapunov(out / name, ly)
        files.append(name)
        by_sigma.setdefault(sigma, ([], traj))[0].append(ly)
    for sigma, (lys, traj) in by_sigma.items():
        results.append((SourceResult("perturbed", sigma, lys), traj))
    rmse_rows = []
    for mu, (ly, traj, run, free, obs) in assim_out:
        stem = f"assimilated-mu{fmt_param(mu)}"
        io.save_lyapunov(out / f"{stem}.lyap", ly)
        io.save_trajectory(out / f"{stem}.traj", traj)
        io.save_observations(out / f"observations-mu{fmt_param(mu)}.obs", obs)
        files += [f"{stem}.lyap", f"{stem}.traj", f"observations-mu{fmt_param(mu)}.obs"]
        results.append((SourceResult("assimilated", mu, [ly]), traj))
        rmse_rows.append((eid, "assimilated", mu, run.rmse_mean, run.spread_mean,
                          free.rmse_mean, run.diverged))

    dims = cfg.metrics.subspace_dims
    angle_rows, pa_rows, exp_rows, summary_rows, geo_rows = [], [], [], [], []
    for res, traj in results:
        exp_rows += _exponent_rows(eid, ref, res)
        summary_rows.append(_summary_row(eid, res))
        if cfg.metrics.geometry:
            geo_rows += _geometry_rows(eid, res, traj)
        if res.source == "truth":
            continue
        a, p, _ = pair_tables(eid, ref, res, dims)
        angle_rows += a
        pa_rows += p
    if dims:
        pa_rows += random_baseline_rows(cfg, eid, ref)

    meta = {"experiment_id": eid, "config_hash": cfg.config_hash(), "seed": cfg.seed,
            "code_version": code_version(), "units": UNITS,
            "seed_scheme": "SeedSequence(master, spawn_key=(crc32(component), replicate))"}
    tables = {"exponents": (EXPONENT_COLUMNS, exp_rows),
              "spectrum_summary": (SUMMARY_COLUMNS, summary_rows)}
    if len(results) > 1:
        tables["angles"] = (ANGLE_COLUMNS, angle_rows)
    if pa_rows:
        tables["principal_angles"] = (PA_COLUMNS, pa_rows)
    if rmse_rows:
        tables["rmse"] = (RMSE_COLUMNS, rmse_rows)
    if geo_rows:
        tables["clv_geometry"] = (GEOMETRY_COLUMNS, geo_rows)
    for name, (cols, rows) in tables.items():
        io.write_table(out / f"{name}.csv", cols, rows, meta)
        files += [f"{name}.csv", f"{name}.json"]
    return {name: rows for name, (_, rows) in tables.items()}, files
