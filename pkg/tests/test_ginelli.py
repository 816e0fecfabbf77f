import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from clvda.errors import RankCollapseError, ValidationError
from clvda.ginelli import (GinelliSchedule, backward_sweep, clv_growth_check, compute_lyapunov,
                           covariance_cosines, forward_sweep, kaplan_yorke, qr_positive)
from clvda.metrics import column_angles
from clvda.models import ModelSpec, integrate_trajectory, jacobian, vector_field

L63 = ModelSpec.lorenz63()


@pytest.fixture(scope="module")
def l63_case():
    tr = integrate_trajectory(L63, np.array([1.0, 1.0, 1.0]), 50.0, 60.0, 0.01, 0.01)
    sched = GinelliSchedule.from_lengths(20.0, 20.0, 20.0, 0.01, 1)
    return tr, sched, compute_lyapunov(tr, sched, seed=3)


def benettin_reference(traj, n_qr):
    """Plain Benettin loop with its own RK4 on the joint state/tangent system."""
    model = traj.model
    B = np.eye(model.dimension)
    logs = np.zeros(model.dimension)
    h = traj.dt
    for k in range(n_qr):
        x = traj.states[k].copy()
        for _ in range(traj.steps_per_save):
            def rhs(x, B):
                return vector_field(model, x), jacobian(model, x) @ B
            k1 = rhs(x, B)
            k2 = rhs(x + h / 2 * k1[0], B + h / 2 * k1[1])
            k3 = rhs(x + h / 2 * k2[0], B + h / 2 * k2[1])
            k4 = rhs(x + h * k3[0], B + h * k3[1])
            x = x + h / 6 * (k1[0] + 2 * k2[0] + 2 * k3[0] + k4[0])
            B = B + h / 6 * (k1[1] + 2 * k2[1] + 2 * k3[1] + k4[1])
        Q, R = np.linalg.qr(B)
        s = np.sign(np.diag(R))
        B, R = Q * s, R * s[:, None]
        logs += np.log(np.diag(R))
    return logs


def test_log_growth_matches_independent_benettin_loop(rng):
    tr = integrate_trajectory(L63, rng.standard_normal(3), 10.0, 3.0, 0.005, 0.01)
    sched = GinelliSchedule(1, 100, 100, 100, 0.01)
    qr, exps = forward_sweep(tr, sched)
    ref = benettin_reference(tr, 300)
    # the sweep averages only over [I, E]
    ref_window = ref - benettin_reference(tr, 100)
    np.testing.assert_allclose(exps * sched.averaging_time, ref_window, rtol=1e-9, atol=1e-9)


@given(arrays(np.float64, (6, 3), elements=st.floats(-5, 5)))
def test_qr_positive_reconstructs(A):
    try:
        Q, R = qr_positive(A)
    except RankCollapseError:
        return
    assert np.all(np.diag(R) > 0)
    np.testing.assert_allclose(Q @ R, A, atol=1e-10 * max(1, np.abs(A).max()))
    np.testing.assert_allclose(Q.T @ Q, np.eye(3), atol=1e-12)


def test_rank_collapse_detected():
    A = np.ones((4, 2))
    with pytest.raises(RankCollapseError):
        qr_positive(A)


def test_schedule_arithmetic():
    s = GinelliSchedule.from_lengths(400, 200, 400, 0.05, 5)
    assert (s.n_0I, s.n_IF, s.n_FE) == (1600, 800, 1600)
    assert s.required_samples == 4000 * 5 + 1
    assert s.window_sample_indices[0] == 8000
    assert s.averaging_time == pytest.approx(600.0)
    with pytest.raises(ValidationError):
        GinelliSchedule.from_lengths(1.0, 0.03, 1.0, 0.01, 2)


def test_short_trajectory_rejected():
    tr = integrate_trajectory(L63, np.ones(3), 0.0, 0.01, 0.01, 0.01)
    with pytest.raises(ValidationError, match="samples"):
        compute_lyapunov(tr, GinelliSchedule(1, 1, 1, 1, 0.01))


def test_exponent_sum_equals_trace(l63_case):
    _, _, ly = l63_case
    # RK4 at step 0.01 shifts the log-determinant by about 1e-4
    assert ly.exponents.sum() == pytest.approx(-41 / 3, abs=1e-3)


def test_blvs_orthonormal_and_clvs_unit(l63_case):
    _, _, ly = l63_case
    G = np.swapaxes(ly.blv, 1, 2) @ ly.blv
    assert np.abs(G - np.eye(3)).max() < 1e-12
    np.testing.assert_allclose(np.linalg.norm(ly.clv, axis=1), 1.0, atol=1e-12)
    assert np.all(np.tril(ly.coeffs, -1) == 0)
    np.testing.assert_allclose(ly.blv @ ly.coeffs, ly.clv, atol=1e-13)


def test_first_clv_equals_first_blv(l63_case):
    _, _, ly = l63_case
    assert column_angles(ly.blv[..., :1], ly.clv[..., :1]).max() < 1e-10


def test_neutral_clv_aligns_with_flow(l63_case):
    tr, _, ly = l63_case
    f = np.stack([vector_field(L63, tr.states[j]) for j in ly.sample_indices])
    ang = column_angles(ly.clv[:, :, 1:2], f[:, :, None])
    assert np.median(ang) < 1.0


def test_clvs_are_covariant_and_grow_at_their_rates(l63_case):
    tr, _, ly = l63_case
    cos = covariance_cosines(ly, tr)
    assert np.median(cos, axis=0).min() > 0.999
    rates = clv_growth_check(ly, tr)
    np.testing.assert_allclose(rates, ly.exponents, atol=0.3)


def test_backward_sweep_forgets_its_seed(l63_case):
    tr, sched, _ = l63_case
    qr, _ = forward_sweep(tr, sched)
    C1 = qr.B[0] @ backward_sweep(qr, seed=1)[0]
    C2 = qr.B[0] @ backward_sweep(qr, seed=99)[0]
    assert column_angles(C1, C2).max() < 0.01


def test_backward_sweep_rejects_bad_seed_matrix(l63_case):
    tr, sched, _ = l63_case
    qr, _ = forward_sweep(tr, GinelliSchedule(1, 10, 10, 10, 0.01))
    with pytest.raises(ValidationError):
        backward_sweep(qr, U_E=np.ones((3, 3)))


def test_convergence_diagnostic_reported():
    tr = integrate_trajectory(L63, np.ones(3), 20.0, 30.0, 0.01, 0.01)
    qr, _ = forward_sweep(tr, GinelliSchedule(1, 1000, 1000, 1000, 0.01), check_convergence=True)
    assert qr.diagnostics["blv_convergence_deg"] < 1e-3


def test_partial_frame():
    tr = integrate_trajectory(ModelSpec.lorenz96(10), np.arange(10.0), 5.0, 6.0, 0.01, 0.05)
    ly = compute_lyapunov(tr, GinelliSchedule.from_lengths(2.0, 2.0, 2.0, 0.05, 2), m=4)
    assert ly.clv.shape[1:] == (10, 4) and ly.exponents.shape == (4,)


@pytest.mark.parametrize("spec, ky", [
    ((1.0, 0.0, -2.0), 2.5),
    ((0.9, 0.0, -14.6), 2 + 0.9 / 14.6),
    ((-0.1, -1.0), 0.0),
    ((0.5, -1.0), 1.5),
])
def test_kaplan_yorke(spec, ky):
    assert kaplan_yorke(spec) == pytest.approx(ky)


def test_kaplan_yorke_errors():
    with pytest.raises(ValidationError):
        kaplan_yorke([0.1, 0.5, -3])
    with pytest.raises(ValidationError):
        kaplan_yorke([1.0, 0.5])
