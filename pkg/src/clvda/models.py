"""Lorenz-63 and Lorenz-96 vector fields, Jacobians and RK4 trajectories."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from clvda import _pykernels
from clvda._backend import kernels
from clvda.errors import BlowUpError, ValidationError

KINDS = {"L63": _pykernels.L63, "L96": _pykernels.L96}


@dataclass(frozen=True)
class ModelSpec:
    """A model family with its dimension and parameters.

    ``params`` is ``(sigma, rho, beta)`` for ``L63`` and ``(F,)`` for ``L96``.
    """

    kind: str
    dimension: int
    params: tuple

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValidationError(f"unknown model kind {self.kind!r}")
        object.__setattr__(self, "params", tuple(float(p) for p in self.params))
        if self.kind == "L63":
            if self.dimension != 3:
                raise ValidationError("L63 dimension must be 3")
            if len(self.params) != 3:
                raise ValidationError("L63 needs (sigma, rho, beta)")
        else:
            if int(self.dimension) < 4:
                raise ValidationError("L96 dimension must be >= 4")
            if len(self.params) != 1:
                raise ValidationError("L96 needs a single forcing F")
        if not all(math.isfinite(p) for p in self.params):
            raise ValidationError("model parameters must be finite")
        object.__setattr__(self, "dimension", int(self.dimension))

    @classmethod
    def lorenz63(cls, sigma=10.0, rho=28.0, beta=8.0 / 3.0) -> "ModelSpec":
        return cls("L63", 3, (sigma, rho, beta))

    @classmethod
    def lorenz96(cls, n=40, forcing=8.0) -> "ModelSpec":
        return cls("L96", n, (forcing,))

    @property
    def code(self) -> int:
        return KINDS[self.kind]

    @property
    def param_array(self) -> np.ndarray:
        return np.asarray(self.params, dtype=np.float64)

    @property
    def jacobian_trace(self) -> float:
        """Phase-space divergence, constant for both models."""
        if self.kind == "L63":
            s, _, b = self.params
            return -(s + 1.0 + b)
        return -float(self.dimension)

    def to_dict(self) -> dict:
        return {"kind": self.kind, "dimension": self.dimension, "params": list(self.params)}

    @classmethod
    def from_dict(cls, d: dict) -> "ModelSpec":
        return cls(d["kind"], int(d["dimension"]), tuple(d["params"]))


def steps_per_interval(dt: float, interval: float) -> int:
    """Number of solver steps in ``interval``; it must be an exact multiple of ``dt``."""
    if not dt > 0 or not interval > 0:
        raise ValidationError("time steps must be positive")
    k = round(interval / dt)
    if k < 1 or abs(k * dt - interval) > 1e-9 * max(1.0, interval):
        raise ValidationError(f"interval {interval} is not an integer multiple of {dt}")
    return k


@dataclass(frozen=True)
class Trajectory:
    """States sampled every ``save_interval`` starting at ``t0``.

    ``dynamical`` is False for pseudo-trajectories (perturbed states, filter
    analysis means) that do not solve the model equations.
    """

    model: ModelSpec
    t0: float
    dt: float
    save_interval: float
    states: np.ndarray
    dynamical: bool = True
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        states = np.array(self.states, dtype=np.float64, copy=True)
        if states.ndim != 2 or states.shape[0] == 0:
            raise ValidationError("trajectory needs a nonempty (samples, d) array")
        if states.shape[1] != self.model.dimension:
            raise ValidationError("state dimension does not match the model")
        if not np.all(np.isfinite(states)):
            raise ValidationError("trajectory states must be finite")
        steps_per_interval(self.dt, self.save_interval)
        states.flags.writeable = False
        object.__setattr__(self, "states", states)

    @property
    def steps_per_save(self) -> int:
        return steps_per_interval(self.dt, self.save_interval)

    @property
    def n_samples(self) -> int:
        return self.states.shape[0]

    @property
    def times(self) -> np.ndarray:
        return self.t0 + self.save_interval * np.arange(self.n_samples)

    def window(self, start: int, stop: int | None = None) -> "Trajectory":
        """Sub-trajectory of samples ``start:stop`` with the time origin shifted."""
        states = self.states[start:stop]
        return Trajectory(self.model, self.t0 + start * self.save_interval, self.dt,
                          self.save_interval, states, self.dynamical, dict(self.meta))


def _check_state(model: ModelSpec, x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (model.dimension,):
        raise ValidationError(f"expected a state of dimension {model.dimension}, got {x.shape}")
    if not np.all(np.isfinite(x)):
        raise ValidationError("state must be finite")
    return x


def vector_field(model: ModelSpec, x) -> np.ndarray:
    x = _check_state(model, x)
    return _pykernels.field(model.code, model.param_array, x)


def jacobian(model: ModelSpec, x) -> np.ndarray:
    """Analytic Jacobian ``J[i, j] = d f_i / d x_j``."""
    x = _check_state(model, x)
    d = model.dimension
    if model.kind == "L63":
        s, r, b = model.params
        X, Y, Z = x
        return np.array([[-s, s, 0.0], [r - Z, -1.0, -X], [Y, X, -b]])
    J = np.zeros((d, d))
    k = np.arange(d)
    km1, km2, kp1 = (k - 1) % d, (k - 2) % d, (k + 1) % d
    J[k, km1] = x[kp1] - x[km2]
    J[k, kp1] = x[km1]
    J[k, km2] = -x[km1]
    J[k, k] = -1.0
    return J


def rk4_step(model: ModelSpec, x, dt: float) -> np.ndarray:
    """One classical RK4 step."""
    x = _check_state(model, x)
    if not dt > 0:
        raise ValidationError("dt must be positive")
    out = kernels.rk4(model.code, model.param_array, x, 1, dt)
    if not np.all(np.isfinite(out)):
        raise BlowUpError(f"RK4 step of size {dt} blew up")
    return out


def advance(model: ModelSpec, x, n_steps: int, dt: float) -> np.ndarray:
    """Advance a state, or an ``N x d`` stack of states, by ``n_steps`` RK4 steps."""
    out = kernels.rk4(model.code, model.param_array, np.asarray(x, dtype=np.float64),
                      int(n_steps), dt)
    if not np.all(np.isfinite(out)):
        raise BlowUpError("integration blew up")
    return out


def random_initial_state(model: ModelSpec, rng: np.random.Generator) -> np.ndarray:
    return rng.standard_normal(model.dimension)


def integrate_trajectory(model: ModelSpec, x0, spinup_T: float, total_T: float,
                         dt: float, save_interval: float) -> Trajectory:
    """Spin up from ``x0`` for ``spinup_T``, then save every ``save_interval``.

    The first saved state is the post-spin-up state, so the result holds
    ``total_T / save_interval + 1`` samples.
    """
    x0 = _check_state(model, x0)
    per_save = steps_per_interval(dt, save_interval)
    if total_T < save_interval - 1e-12:
        raise ValidationError("total_T must be at least one save interval")
    n_saves = round(total_T / save_interval)
    if abs(n_saves * save_interval - total_T) > 1e-9 * max(1.0, total_T):
        raise ValidationError("total_T must be a multiple of the save interval")
    if spinup_T < 0:
        raise ValidationError("spinup_T must be nonnegative")
    x = x0
    if spinup_T > 0:
        x = advance(model, x0, steps_per_interval(dt, spinup_T), dt)
    states = kernels.integrate(model.code, model.param_array, x, n_saves, per_save, dt)
    if not np.all(np.isfinite(states)):
        raise BlowUpError("trajectory integration blew up")
    return Trajectory(model, 0.0, dt, save_interval, states)
