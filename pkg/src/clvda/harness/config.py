"""Experiment configuration: an INI file with one section per block.

See ``docs/config.md`` for the full schema. Every validation problem is
collected and reported together before any computation starts.
"""
from __future__ import annotations

import configparser
import dataclasses
import hashlib
import math
from dataclasses import dataclass, field
from pathlib import Path

from clvda.errors import ValidationError
from clvda.ginelli import GinelliSchedule
from clvda.harness.io import canonical_json
from clvda.models import ModelSpec


@dataclass(frozen=True)
class TrajectoryBlock:
    dt: float
    save_interval: float
    spinup: float
    forward: float
    window: float
    backward: float
    total: float | None = None


@dataclass(frozen=True)
class GinelliBlock:
    l: int = 1
    m: int | None = None


@dataclass(frozen=True)
class PerturbedBlock:
    sigmas: tuple
    replicates: int = 1


@dataclass(frozen=True)
class AssimilatedBlock:
    mus: tuple
    operator: str = "y"
    obs_interval: float | None = None
    ensemble_size: int = 25
    initial_offset: float = 6.0
    initial_cov: float = 2.0
    localization_radius: float = math.inf
    inflation: float = 1.0
    burn_in: int = 0


@dataclass(frozen=True)
class MetricsBlock:
    subspace_dims: tuple = ()
    random_realizations: int = 100
    geometry: bool = False


@dataclass(frozen=True)
class ExperimentConfig:
    name: str
    seed: int
    model: ModelSpec
    trajectory: TrajectoryBlock
    ginelli: GinelliBlock
    metrics: MetricsBlock = field(default_factory=MetricsBlock)
    perturbed: PerturbedBlock | None = None
    assimilated: AssimilatedBlock | None = None
    output: str | None = None

    @property
    def m(self) -> int:
        return self.model.dimension if self.ginelli.m is None else self.ginelli.m

    @property
    def window_offset(self) -> int:
        """Samples dropped before the Lyapunov window (the filter burn-in)."""
        return self.assimilated.burn_in if self.assimilated else 0

    @property
    def obs_interval(self) -> float:
        a = self.assimilated
        return self.trajectory.save_interval if a is None or a.obs_interval is None else a.obs_interval

    def schedule(self) -> GinelliSchedule:
        t = self.trajectory
        return GinelliSchedule.from_lengths(t.forward, t.window, t.backward, t.save_interval,
                                            self.ginelli.l)

    @property
    def total_time(self) -> float:
        t = self.trajectory
        need = self.window_offset * t.save_interval + t.forward + t.window + t.backward
        return need if t.total is None else max(t.total, need)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["model"] = self.model.to_dict()
        d.pop("output")
        return d

    def config_hash(self) -> str:
        return hashlib.sha256(canonical_json(self.to_dict()).encode()).hexdigest()[:12]

    def experiment_id(self) -> str:
        return f"{self.name}-{self.config_hash()}-s{self.seed}"

    def with_seed(self, seed: int) -> "ExperimentConfig":
        return dataclasses.replace(self, seed=int(seed))


def _floats(text: str) -> tuple:
    return tuple(float(v) for v in text.replace(",", " ").split())


def _ints(text: str) -> tuple:
    return tuple(int(v) for v in text.replace(",", " ").split())


class _Reader:
    """Pulls typed values out of a ConfigParser, recording every failure."""

    def __init__(self, cp: configparser.ConfigParser):
        self.cp = cp
        self.errors: list[str] = []

    def get(self, section, key, conv, default=dataclasses.MISSING):
        if not self.cp.has_option(section, key):
            if default is dataclasses.MISSING:
                self.errors.append(f"[{section}] missing required key '{key}'")
                return None
            return default
        raw = self.cp.get(section, key)
        try:
            return conv(raw)
        except (ValueError, TypeError) as exc:
            self.errors.append(f"[{section}] {key} = {raw!r}: {exc}")
            return None


def _bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError("expected a boolean")


KNOWN = {
    "experiment": {"name", "seed", "output"},
    "model": {"kind", "dimension", "params"},
    "trajectory": {"dt", "save_interval", "spinup", "forward_transient", "window",
                   "backward_transient", "total"},
    "ginelli": {"l", "m"},
    "perturbed": {"sigmas", "replicates"},
    "assimilated": {"mus", "operator", "obs_interval", "ensemble_size", "initial_offset",
                    "initial_cov", "localization_radius", "inflation", "burn_in"},
    "metrics": {"subspace_dims", "random_realizations", "geometry"},
}


def parse_config(text: str) -> ExperimentConfig:
    cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ValidationError(f"malformed config: {exc}") from exc
    r = _Reader(cp)
    for sec in cp.sections():
        if sec not in KNOWN:
            r.errors.append(f"unknown section [{sec}]")
            continue
        for key in cp[sec]:
            if key not in KNOWN[sec]:
                r.errors.append(f"[{sec}] unknown key '{key}'")
    for sec in ("experiment", "model", "trajectory", "ginelli"):
        if not cp.has_section(sec):
            r.errors.append(f"missing section [{sec}]")
            cp.add_section(sec)

    name = r.get("experiment", "name", str, "experiment")
    seed = r.get("experiment", "seed", int, 0)
    output = r.get("experiment", "output", str, None)

    model = None
    kind = r.get("model", "kind", str)
    dim = r.get("model", "dimension", int, 3 if kind == "L63" else 40)
    params = r.get("model", "params", _floats, (10.0, 28.0, 8.0 / 3.0) if kind == "L63" else (8.0,))
    if kind is not None and dim is not None and params is not None:
        try:
            model = ModelSpec(kind, dim, params)
        except ValidationError as exc:
            r.errors.append(f"[model] {exc}")

    traj = TrajectoryBlock(
        dt=r.get("trajectory", "dt", float),
        save_interval=r.get("trajectory", "save_interval", float),
        spinup=r.get("trajectory", "spinup", float, 0.0),
        forward=r.get("trajectory", "forward_transient", float),
        window=r.get("trajectory", "window", float),
        backward=r.get("trajectory", "backward_transient", float),
        total=r.get("trajectory", "total", float, None),
    )
    gin = GinelliBlock(l=r.get("ginelli", "l", int, 1), m=r.get("ginelli", "m", int, None))

    pert = None
    if cp.has_section("perturbed"):
        pert = PerturbedBlock(sigmas=r.get("perturbed", "sigmas", _floats),
                              replicates=r.get("perturbed", "replicates", int, 1))
    assim = None
    if cp.has_section("assimilated"):
        assim = AssimilatedBlock(
            mus=r.get("assimilated", "mus", _floats),
            operator=r.get("assimilated", "operator", str, "y"),
            obs_interval=r.get("assimilated", "obs_interval", float, None),
            ensemble_size=r.get("assimilated", "ensemble_size", int, 25),
            initial_offset=r.get("assimilated", "initial_offset", float, 6.0),
            initial_cov=r.get("assimilated", "initial_cov", float, 2.0),
            localization_radius=r.get("assimilated", "localization_radius", float, math.inf),
            inflation=r.get("assimilated", "inflation", float, 1.0),
            burn_in=r.get("assimilated", "burn_in", int, 0),
        )
    metrics = MetricsBlock()
    if cp.has_section("metrics"):
        metrics = MetricsBlock(
            subspace_dims=r.get("metrics", "subspace_dims", _ints, ()),
            random_realizations=r.get("metrics", "random_realizations", int, 100),
            geometry=r.get("metrics", "geometry", _bool, False),
        )
    if r.errors:
        raise ValidationError("invalid config:\n  " + "\n  ".join(r.errors))
    cfg = ExperimentConfig(name, seed, model, traj, gin, metrics, pert, assim, output)
    validate_config(cfg)
    return cfg


def validate_config(cfg: ExperimentConfig) -> None:
    """Raise one ValidationError listing every semantic problem."""
    errors = []
    t = cfg.trajectory
    if not (t.dt and t.dt > 0 and t.save_interval and t.save_interval > 0):
        errors.append("dt and save_interval must be positive")
    else:
        k = round(t.save_interval / t.dt)
        if k < 1 or abs(k * t.dt - t.save_interval) > 1e-9:
            errors.append("save_interval must be an integer multiple of dt")
        try:
            cfg.schedule()
        except ValidationError as exc:
            errors.append(str(exc))
    if t.spinup < 0:
        errors.append("spinup must be nonnegative")
    if cfg.ginelli.l < 1:
        errors.append("ginelli l must be >= 1")
    if not 1 <= cfg.m <= cfg.model.dimension:
        errors.append(f"ginelli m must lie in [1, {cfg.model.dimension}]")
    if cfg.perturbed is not None:
        if not cfg.perturbed.sigmas:
            errors.append("perturbed sigmas grid is empty")
        if any(s < 0 for s in cfg.perturbed.sigmas):
            errors.append("perturbation sigmas must be nonnegative")
        if cfg.perturbed.replicates < 1:
            errors.append("perturbed replicates must be >= 1")
    a = cfg.assimilated
    if a is not None:
        if not a.mus:
            errors.append("assimilated mus grid is empty")
        if any(m <= 0 for m in a.mus):
            errors.append("observation noise levels must be positive")
        if a.obs_interval is not None and abs(a.obs_interval - t.save_interval) > 1e-12:
            errors.append("obs_interval must equal the trajectory save_interval so that analysis "
                          "means align with the truth samples")
        if a.ensemble_size < 2:
            errors.append("ensemble_size must be >= 2")
        if not a.localization_radius > 0:
            errors.append("localization_radius must be positive or inf")
        if a.inflation < 1:
            errors.append("inflation must be >= 1")
        if a.burn_in < 0:
            errors.append("burn_in must be nonnegative")
        if a.operator not in ("y", "x+z", "even", "all"):
            errors.append(f"unknown observation operator {a.operator!r}")
        if a.operator in ("y", "x+z") and cfg.model.kind != "L63":
            errors.append(f"operator {a.operator!r} is defined for L63 only")
    for k in cfg.metrics.subspace_dims:
        if not 1 <= k <= cfg.m:
            errors.append(f"subspace dimension {k} outside [1, {cfg.m}]")
    if cfg.metrics.subspace_dims and cfg.metrics.random_realizations < 1:
        errors.append("random_realizations must be >= 1")
    if errors:
        raise ValidationError("invalid config:\n  " + "\n  ".join(errors))


def load_config(path) -> ExperimentConfig:
    return parse_config(Path(path).read_text(encoding="utf-8"))
