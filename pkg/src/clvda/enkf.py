"""Twin-experiment machinery: synthetic observations and a stochastic EnKF.

The filter is the perturbed-observation variant with Gaspari-Cohn covariance
localization and multiplicative anomaly inflation. Its analysis means form a
pseudo-trajectory that can be fed to the Lyapunov vector computation.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from clvda._backend import kernels
from clvda.errors import BlowUpError, FilterError, ValidationError
from clvda.models import ModelSpec, Trajectory, steps_per_interval


@dataclass(frozen=True)
class ObservationModel:
    """Linear observation operator ``H`` with Gaussian noise of std ``noise_std``."""

    H: np.ndarray
    noise_std: float
    obs_interval: float

    def __post_init__(self):
        H = np.array(self.H, dtype=np.float64, ndmin=2)
        if H.shape[0] > H.shape[1]:
            raise ValidationError("more observations than state components")
        if not self.noise_std > 0:
            raise ValidationError("observation noise std must be positive")
        if not self.obs_interval > 0:
            raise ValidationError("observation interval must be positive")
        H.flags.writeable = False
        object.__setattr__(self, "H", H)

    @classmethod
    def select(cls, d: int, indices, noise_std: float, obs_interval: float):
        """Observe the listed state components directly."""
        indices = list(indices)
        H = np.zeros((len(indices), d))
        H[np.arange(len(indices)), indices] = 1.0
        return cls(H, noise_std, obs_interval)

    @classmethod
    def preset(cls, name: str, d: int, noise_std: float, obs_interval: float):
        """Named operators: ``y`` (L63 second component), ``x+z`` (L63 row
        ``[1, 0, 1]``), ``even`` (components 0, 2, 4, ...), ``all``."""
        if name == "y":
            return cls.select(d, [1], noise_std, obs_interval)
        if name == "x+z":
            if d != 3:
                raise ValidationError("the x+z operator is defined for L63 only")
            return cls(np.array([[1.0, 0.0, 1.0]]), noise_std, obs_interval)
        if name == "even":
            return cls.select(d, range(0, d, 2), noise_std, obs_interval)
        if name == "all":
            return cls.select(d, range(d), noise_std, obs_interval)
        raise ValidationError(f"unknown observation operator {name!r}")

    @property
    def p(self) -> int:
        return self.H.shape[0]


@dataclass
class ObservationSet:
    times: np.ndarray
    values: np.ndarray
    obs_model: ObservationModel
    truth_indices: np.ndarray
    seed: int | None = None


@dataclass
class EnkfConfig:
    ensemble_size: int = 25
    initial_mean_offset: float | np.ndarray = 6.0
    initial_cov_scale: float = 2.0
    localization_radius: float = math.inf
    inflation: float = 1.0
    burn_in: int = 0
    seed: int = 0

    def __post_init__(self):
        if self.ensemble_size < 2:
            raise ValidationError("ensemble size must be at least 2")
        if not self.localization_radius > 0:
            raise ValidationError("localization radius must be positive (or inf)")
        if not self.inflation >= 1.0:
            raise ValidationError("inflation factor must be >= 1")
        if self.initial_cov_scale < 0:
            raise ValidationError("initial covariance scale must be nonnegative")
        if self.burn_in < 0:
            raise ValidationError("burn-in must be nonnegative")


@dataclass
class FilterRun:
    """Analysis means (after burn-in) and per-step diagnostics (all steps)."""

    model: ModelSpec
    dt: float
    obs_interval: float
    times: np.ndarray
    analysis_means: np.ndarray
    spread: np.ndarray
    rmse: np.ndarray
    burn_in: int
    diverged: bool
    config: EnkfConfig
    observations: ObservationSet = field(repr=False, default=None)

    @property
    def rmse_mean(self) -> float:
        return float(self.rmse[self.burn_in:].mean())

    @property
    def spread_mean(self) -> float:
        return float(self.spread[self.burn_in:].mean())

    def as_trajectory(self) -> Trajectory:
        """Analysis means as a (non-dynamical) pseudo-trajectory."""
        return Trajectory(self.model, float(self.times[0]), self.dt, self.obs_interval,
                          self.analysis_means, dynamical=False,
                          meta={"source": "assimilated", "burn_in": self.burn_in})


def generate_observations(truth: Trajectory, obs_model: ObservationModel,
                          seed: int | np.random.Generator = 0) -> ObservationSet:
    """``y_j = H x_j + eta_j`` at every observation time along ``truth``."""
    if obs_model.H.shape[1] != truth.model.dimension:
        raise ValidationError("observation operator does not match the model dimension")
    try:
        stride = steps_per_interval(truth.save_interval, obs_model.obs_interval)
    except ValidationError as exc:
        raise ValidationError("observation interval must be a multiple of the save interval") from exc
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    idx = np.arange(0, truth.n_samples, stride)
    x = truth.states[idx]
    noise = obs_model.noise_std * rng.standard_normal((idx.size, obs_model.p))
    values = x @ obs_model.H.T + noise
    return ObservationSet(truth.times[idx], values, obs_model, idx,
                          None if isinstance(seed, np.random.Generator) else seed)


def forecast_step(model: ModelSpec, ensemble, n_steps: int, dt: float) -> np.ndarray:
    """Integrate every member independently for ``n_steps`` RK4 steps."""
    E = np.asarray(ensemble, dtype=np.float64)
    if E.ndim != 2 or E.shape[1] != model.dimension:
        raise ValidationError("ensemble must be N x d")
    out = kernels.rk4(model.code, model.param_array, E, int(n_steps), dt)
    if not np.all(np.isfinite(out)):
        raise BlowUpError("ensemble member blew up during the forecast")
    return out


def gaspari_cohn(distance, radius: float):
    """Fifth-order piecewise rational taper with compact support ``2 * radius``."""
    if not radius > 0:
        raise ValidationError("taper radius must be positive")
    r = np.abs(np.asarray(distance, dtype=np.float64)) / radius
    out = np.zeros_like(r)
    inner = r <= 1.0
    outer = (r > 1.0) & (r < 2.0)
    a = r[inner]
    out[inner] = (((-0.25 * a + 0.5) * a + 0.625) * a - 5.0 / 3.0) * a**2 + 1.0
    b = r[outer]
    out[outer] = ((((b / 12.0 - 0.5) * b + 0.625) * b + 5.0 / 3.0) * b - 5.0) * b \
        + 4.0 - 2.0 / (3.0 * b)
    out = np.clip(out, 0.0, 1.0)
    return out if out.ndim else float(out)


def grid_distance(d: int, cyclic: bool) -> np.ndarray:
    i = np.arange(d)
    dist = np.abs(i[:, None] - i[None, :])
    if cyclic:
        dist = np.minimum(dist, d - dist)
    return dist.astype(np.float64)


def localization_taper(model: ModelSpec, radius: float) -> np.ndarray | None:
    """State-space taper matrix, or None when localization is disabled."""
    if math.isinf(radius):
        return None
    return gaspari_cohn(grid_distance(model.dimension, model.kind == "L96"), radius)


def kalman_gain(ensemble, obs_model: ObservationModel, inflation: float = 1.0,
                taper: np.ndarray | None = None) -> np.ndarray:
    """Gain from the (inflated, tapered) ensemble covariance, solved in observation space."""
    E = np.asarray(ensemble, dtype=np.float64)
    N = E.shape[0]
    A = inflation * (E - E.mean(axis=0))
    P = A.T @ A / max(N - 1, 1)
    if taper is not None:
        P = taper * P
    H = obs_model.H
    PHt = P @ H.T
    S = H @ PHt + obs_model.noise_std**2 * np.eye(obs_model.p)
    try:
        return scipy.linalg.solve(S, PHt.T, assume_a="pos").T
    except (np.linalg.LinAlgError, ValueError) as exc:
        raise FilterError("singular innovation covariance") from exc


def analysis_update(ensemble, y, obs_model: ObservationModel, config: EnkfConfig,
                    rng: np.random.Generator, taper: np.ndarray | None = None,
                    obs_perturbations=None) -> np.ndarray:
    """Stochastic EnKF analysis: each member assimilates ``y + eta_i``.

    Anomalies are inflated by ``config.inflation`` before the gain is formed.
    ``obs_perturbations`` (``N x p``) overrides the random draws.
    """
    E = np.asarray(ensemble, dtype=np.float64)
    if not np.all(np.isfinite(E)):
        raise FilterError("ensemble contains non-finite values")
    xf = E.mean(axis=0)
    if config.inflation != 1.0:
        E = xf + config.inflation * (E - xf)
    K = kalman_gain(E, obs_model, 1.0, taper)
    if obs_perturbations is None:
        eta = obs_model.noise_std * rng.standard_normal((E.shape[0], obs_model.p))
    else:
        eta = np.asarray(obs_perturbations, dtype=np.float64)
    Y = np.asarray(y, dtype=np.float64) + eta
    return E + (Y - E @ obs_model.H.T) @ K.T


def rmse(estimate, truth):
    """Per-step ``sqrt(|x_est - x|^2 / d)`` and its time mean."""
    est = np.atleast_2d(np.asarray(estimate, dtype=np.float64))
    tru = np.atleast_2d(np.asarray(truth, dtype=np.float64))
    if est.shape != tru.shape:
        raise ValidationError(f"misaligned sequences {est.shape} vs {tru.shape}")
    per_step = np.sqrt(np.mean((est - tru) ** 2, axis=1))
    return per_step, float(per_step.mean())


def climatological_spread(truth: Trajectory) -> float:
    return float(np.sqrt(truth.states.var(axis=0).mean()))


def initial_ensemble(x0, config: EnkfConfig, rng: np.random.Generator) -> np.ndarray:
    d = x0.shape[0]
    mean = x0 + np.broadcast_to(np.asarray(config.initial_mean_offset, dtype=np.float64), (d,))
    return mean + math.sqrt(config.initial_cov_scale) * rng.standard_normal((config.ensemble_size, d))


DIVERGENCE_FACTOR = 5.0
DIVERGENCE_STEPS = 100


def run_filter(truth: Trajectory, obs: ObservationSet, config: EnkfConfig,
               assimilate: bool = True) -> FilterRun:
    """Cycle forecast and analysis over every observation.

    The truth is used only to place the initial ensemble and to score RMSE.
    With ``assimilate=False`` the same initial ensemble runs freely, giving
    the no-assimilation baseline.
    """
    model = truth.model
    obs_model = obs.obs_model
    n_obs = obs.values.shape[0]
    if config.burn_in >= n_obs:
        raise ValidationError("burn-in removes every analysis step")
    stride = steps_per_interval(truth.save_interval, obs_model.obs_interval)
    n_steps = stride * truth.steps_per_save
    rng = np.random.default_rng(config.seed)
    taper = localization_taper(model, config.localization_radius)

    E = initial_ensemble(truth.states[obs.truth_indices[0]], config, rng)
    means = np.empty((n_obs, model.dimension))
    spread = np.empty(n_obs)
    for n in range(n_obs):
        if n > 0:
            E = forecast_step(model, E, n_steps, truth.dt)
        if assimilate:
            E = analysis_update(E, obs.values[n], obs_model, config, rng, taper)
        means[n] = E.mean(axis=0)
        spread[n] = math.sqrt(E.var(axis=0, ddof=1).mean())
    err, _ = rmse(means, truth.states[obs.truth_indices])

    limit = DIVERGENCE_FACTOR * climatological_spread(truth)
    run = 0
    diverged = False
    for e in err:
        run = run + 1 if e > limit else 0
        if run >= DIVERGENCE_STEPS:
            diverged = True
            break
    b = config.burn_in
    return FilterRun(model, truth.dt, obs_model.obs_interval, obs.times[b:], means[b:],
                     spread, err, b, diverged, config, obs)
