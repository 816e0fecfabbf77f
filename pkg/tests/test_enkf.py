import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from clvda.enkf import (EnkfConfig, ObservationModel, analysis_update, gaspari_cohn,
                        generate_observations, grid_distance, kalman_gain, localization_taper,
                        rmse, run_filter)
from clvda.errors import ValidationError
from clvda.models import ModelSpec, integrate_trajectory

L63 = ModelSpec.lorenz63()


def test_scalar_gain_formula(rng):
    E = rng.standard_normal((30, 3)) * [1.0, 2.0, 3.0]
    om = ObservationModel.select(3, [1], 0.5, 0.01)
    A = E - E.mean(axis=0)
    P = A.T @ A / 29
    K = kalman_gain(E, om)
    expect = P[:, 1] / (P[1, 1] + 0.25)
    np.testing.assert_allclose(K[:, 0], expect, rtol=1e-12)


def test_inflation_scales_covariance_by_square(rng):
    E = rng.standard_normal((10, 3))
    om = ObservationModel.select(3, [0, 2], 0.3, 0.01)
    xm = E.mean(axis=0)
    np.testing.assert_allclose(kalman_gain(E, om, inflation=1.1),
                               kalman_gain(xm + 1.1 * (E - xm), om), rtol=1e-12)


def test_gaspari_cohn_landmarks():
    assert gaspari_cohn(0.0, 4.0) == 1.0
    assert gaspari_cohn(4.0, 4.0) == pytest.approx(5 / 24)
    assert gaspari_cohn(8.0, 4.0) == 0.0
    assert gaspari_cohn(100.0, 4.0) == 0.0


@given(st.floats(0.1, 10), st.lists(st.floats(0, 30), min_size=2, max_size=20))
def test_gaspari_cohn_monotone_and_bounded(radius, dists):
    d = np.sort(dists)
    g = gaspari_cohn(d, radius)
    assert np.all(np.diff(g) <= 1e-12)
    assert np.all((g >= 0) & (g <= 1))


def test_gaspari_cohn_continuous_at_radius():
    eps = 1e-9
    assert gaspari_cohn(1 - eps, 1.0) == pytest.approx(gaspari_cohn(1 + eps, 1.0), abs=1e-7)


def test_cyclic_distance():
    D = grid_distance(40, cyclic=True)
    assert D[0, 39] == 1 and D[0, 20] == 20 and D[3, 38] == 5
    assert grid_distance(5, cyclic=False)[0, 4] == 4
    assert localization_taper(ModelSpec.lorenz96(40), math.inf) is None
    T = localization_taper(ModelSpec.lorenz96(40), 4.0)
    assert T[0, 39] == T[0, 1] and T[0, 20] == 0.0


def test_analysis_moments_match_linear_gaussian_update():
    rng = np.random.default_rng(7)
    N = 40000
    P = np.diag([4.0, 1.0, 2.0])
    E = rng.multivariate_normal([1.0, 2.0, 3.0], P, size=N)
    om = ObservationModel.select(3, [0], 1.0, 0.01)
    cfg = EnkfConfig(ensemble_size=N)
    Ea = analysis_update(E, np.array([3.0]), om, cfg, rng)
    # exact posterior for a Gaussian prior: mean 1 + 4/5 * 2, var 4 * 1/5
    assert Ea.mean(axis=0)[0] == pytest.approx(1 + 0.8 * 2, abs=0.03)
    assert Ea[:, 0].var() == pytest.approx(0.8, rel=0.03)
    assert Ea[:, 1].var() == pytest.approx(1.0, rel=0.03)


def test_observations_have_requested_noise(rng):
    tr = integrate_trajectory(L63, np.ones(3), 5.0, 50.0, 0.01, 0.01)
    om = ObservationModel.preset("x+z", 3, 0.7, 0.02)
    obs = generate_observations(tr, om, rng)
    assert obs.values.shape == (2501, 1)
    resid = obs.values[:, 0] - (tr.states[::2, 0] + tr.states[::2, 2])
    assert resid.std() == pytest.approx(0.7, rel=0.05)


def test_filter_beats_free_run():
    tr = integrate_trajectory(L63, np.ones(3), 10.0, 20.0, 0.01, 0.01)
    om = ObservationModel.preset("y", 3, 0.3, 0.01)
    obs = generate_observations(tr, om, 1)
    cfg = EnkfConfig(burn_in=500, seed=2)
    run = run_filter(tr, obs, cfg)
    free = run_filter(tr, obs, cfg, assimilate=False)
    assert run.rmse_mean < 0.2 < free.rmse_mean
    assert not run.diverged
    traj = run.as_trajectory()
    assert traj.n_samples == 2001 - 500 and not traj.dynamical
    assert traj.t0 == pytest.approx(tr.times[500])


def test_rmse():
    per, mean = rmse([[0.0, 0.0], [3.0, 4.0]], [[0.0, 0.0], [0.0, 0.0]])
    np.testing.assert_allclose(per, [0.0, math.sqrt(12.5)])
    with pytest.raises(ValidationError):
        rmse(np.zeros((2, 3)), np.zeros((3, 3)))


@pytest.mark.parametrize("kw", [dict(ensemble_size=1), dict(inflation=0.9),
                                dict(localization_radius=0.0), dict(burn_in=-1)])
def test_config_validation(kw):
    with pytest.raises(ValidationError):
        EnkfConfig(**kw)


def test_operator_presets():
    assert ObservationModel.preset("even", 40, 1.0, 0.05).p == 20
    np.testing.assert_array_equal(ObservationModel.preset("y", 3, 1.0, 0.01).H, [[0, 1, 0]])
    with pytest.raises(ValidationError):
        ObservationModel.preset("x+z", 40, 1.0, 0.05)
