"""Noisy pseudo-trajectories: i.i.d. Gaussian noise added to every saved state."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from clvda.errors import ValidationError
from clvda.models import Trajectory

L63_SIGMAS = (0.1, 0.2, 0.3, 0.4, 0.5, 1.0, 2.0, 3.0, 4.0, 5.0)
L96_SIGMAS = (0.1, 0.2, 0.3, 0.4, 0.5)


@dataclass(frozen=True)
class PerturbationSpec:
    sigma: float
    seed: int = 0

    def __post_init__(self):
        if not self.sigma >= 0:
            raise ValidationError("perturbation std must be nonnegative")


def perturb_trajectory(truth: Trajectory, spec: PerturbationSpec,
                       rng: np.random.Generator | None = None) -> Trajectory:
    """Add ``N(0, sigma^2 I)`` noise to each saved state independently.

    Noise is never injected inside solver sub-steps, so the result is marked
    non-dynamical.
    """
    if rng is None:
        rng = np.random.default_rng(spec.seed)
    if spec.sigma == 0:
        noisy = truth.states
    else:
        noisy = truth.states + spec.sigma * rng.standard_normal(truth.states.shape)
    meta = dict(truth.meta, source="perturbed", sigma=spec.sigma)
    return Trajectory(truth.model, truth.t0, truth.dt, truth.save_interval, noisy,
                      dynamical=spec.sigma == 0 and truth.dynamical, meta=meta)
