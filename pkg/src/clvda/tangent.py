"""Tangent linear propagation along stored trajectories."""
from __future__ import annotations

import numpy as np

from clvda._backend import kernels
from clvda.errors import BlowUpError, ValidationError
from clvda.models import ModelSpec, Trajectory, _check_state


def _as_block(model: ModelSpec, B) -> np.ndarray:
    B = np.asarray(B, dtype=np.float64)
    if B.ndim != 2 or B.shape[0] != model.dimension:
        raise ValidationError(f"tangent block must be ({model.dimension}, m), got {B.shape}")
    if not 1 <= B.shape[1] <= model.dimension:
        raise ValidationError("tangent block needs 1 <= m <= d columns")
    if not np.all(np.isfinite(B)):
        raise ValidationError("tangent block must be finite")
    return B


def propagate_tangent(model: ModelSpec, x, B, steps: int, dt: float):
    """Integrate ``(x, B)`` jointly for ``steps`` RK4 steps.

    Returns the end state and ``M B`` where ``M`` is the tangent linear
    propagator over the interval.
    """
    x = _check_state(model, x)
    B = _as_block(model, B)
    if steps < 0:
        raise ValidationError("steps must be nonnegative")
    x1, MB = kernels.tangent_rk4(model.code, model.param_array, x, B, int(steps), dt)
    if not (np.all(np.isfinite(x1)) and np.all(np.isfinite(MB))):
        raise BlowUpError("tangent integration blew up")
    return x1, MB


def finite_time_propagator(model: ModelSpec, x, steps: int, dt: float) -> np.ndarray:
    """Full ``d x d`` propagator from ``x`` over ``steps`` solver steps."""
    return propagate_tangent(model, x, np.eye(model.dimension), steps, dt)[1]


def propagate_segment(traj: Trajectory, j: int, B, n_gaps: int) -> np.ndarray:
    """Apply ``M_{j, j+n_gaps}`` to ``B`` along a stored trajectory.

    The state is restarted from every stored sample, so each saved gap uses
    the tangent dynamics about that sample; for pseudo-trajectories this is
    what ties the propagator to the estimated states.
    """
    model = traj.model
    if j < 0 or j + n_gaps >= traj.n_samples:
        raise ValidationError("segment runs past the end of the trajectory")
    steps = traj.steps_per_save
    params = model.param_array
    states = traj.states
    B = np.array(B, dtype=np.float64, order="C")
    for i in range(j, j + n_gaps):
        _, B = kernels.tangent_rk4(model.code, params, states[i], B, steps, traj.dt)
    if not np.all(np.isfinite(B)):
        raise BlowUpError("tangent integration blew up")
    return B


def segment_propagator(traj: Trajectory, j: int, n_gaps: int) -> np.ndarray:
    """Full propagator matrix ``M_{j, j+n_gaps}`` along a stored trajectory."""
    return propagate_segment(traj, j, np.eye(traj.model.dimension), n_gaps)
