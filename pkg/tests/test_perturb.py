import numpy as np
import pytest

from clvda.errors import ValidationError
from clvda.models import ModelSpec, integrate_trajectory
from clvda.perturb import PerturbationSpec, perturb_trajectory


@pytest.fixture(scope="module")
def truth():
    return integrate_trajectory(ModelSpec.lorenz96(20), np.arange(20.0) / 10, 5.0, 50.0, 0.01, 0.05)


def test_zero_sigma_is_identity(truth):
    p = perturb_trajectory(truth, PerturbationSpec(0.0))
    np.testing.assert_array_equal(p.states, truth.states)
    assert p.dynamical


def test_noise_moments(truth):
    p = perturb_trajectory(truth, PerturbationSpec(0.3, seed=4))
    noise = p.states - truth.states
    assert not p.dynamical and p.meta["sigma"] == 0.3
    assert abs(noise.mean()) < 0.01
    assert noise.std() == pytest.approx(0.3, rel=0.02)
    # independent across components and samples
    c = np.corrcoef(noise[:-1].ravel(), noise[1:].ravel())[0, 1]
    assert abs(c) < 0.03


def test_seeded_reproducibility(truth):
    a = perturb_trajectory(truth, PerturbationSpec(0.2, seed=9))
    b = perturb_trajectory(truth, PerturbationSpec(0.2, seed=9))
    c = perturb_trajectory(truth, PerturbationSpec(0.2, seed=10))
    assert np.array_equal(a.states, b.states) and not np.array_equal(a.states, c.states)


def test_negative_sigma_rejected():
    with pytest.raises(ValidationError):
        PerturbationSpec(-0.1)
