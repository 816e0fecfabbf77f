"""Backward and covariant Lyapunov vectors by the forward QR / backward triangular sweeps.

The trajectory is split into a forward transient ``[0, I]``, the window of
interest ``[I, F]`` and a backward transient ``[F, E]``. Re-orthonormalization
happens every ``l`` saved samples. Indices named ``k`` count QR intervals, so
QR index ``k`` sits at trajectory sample ``k * l``.
"""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import solve_triangular

from clvda._backend import kernels
from clvda.errors import BlowUpError, RankCollapseError, ValidationError
from clvda.models import ModelSpec, Trajectory

log = logging.getLogger(__name__)

RANK_FLOOR = 1e-300
LOG_GROWTH_WARN = 30.0
COND_WARN = 1e14


@dataclass(frozen=True)
class GinelliSchedule:
    """QR interval ``l`` (in saved samples) and QR counts for the three intervals."""

    l: int
    n_0I: int
    n_IF: int
    n_FE: int
    save_interval: float

    def __post_init__(self):
        for name in ("l", "n_0I", "n_IF", "n_FE"):
            if int(getattr(self, name)) < 1:
                raise ValidationError(f"{name} must be >= 1")
        if not self.save_interval > 0:
            raise ValidationError("save_interval must be positive")

    @classmethod
    def from_lengths(cls, forward: float, window: float, backward: float,
                     save_interval: float, l: int) -> "GinelliSchedule":
        """Build a schedule from interval lengths ``I``, ``F - I`` and ``E - F``."""
        if int(l) < 1 or not save_interval > 0:
            raise ValidationError("need l >= 1 and a positive save interval")
        span = l * save_interval
        counts = []
        for name, length in (("forward transient", forward), ("window", window),
                             ("backward transient", backward)):
            n = round(length / span)
            if n < 1 or abs(n * span - length) > 1e-9 * max(1.0, length):
                raise ValidationError(
                    f"{name} length {length} is not a positive multiple of l*dt = {span}")
            counts.append(n)
        return cls(l, *counts, save_interval)

    @property
    def n_qr(self) -> int:
        return self.n_0I + self.n_IF + self.n_FE

    @property
    def required_samples(self) -> int:
        return self.n_qr * self.l + 1

    @property
    def window_qr_indices(self) -> np.ndarray:
        return np.arange(self.n_0I, self.n_0I + self.n_IF)

    @property
    def window_sample_indices(self) -> np.ndarray:
        return self.window_qr_indices * self.l

    @property
    def averaging_time(self) -> float:
        return (self.n_IF + self.n_FE) * self.l * self.save_interval

    def to_dict(self) -> dict:
        return {"l": self.l, "n_0I": self.n_0I, "n_IF": self.n_IF, "n_FE": self.n_FE,
                "save_interval": self.save_interval}


@dataclass
class QRHistory:
    """Stored frames ``B`` on ``[I, F)`` and growth factors ``R`` on ``[I, E)``.

    ``B[i]`` is the frame at QR index ``n_0I + i``; ``R[i]`` maps QR index
    ``n_0I + i`` to ``n_0I + i + 1``.
    """

    schedule: GinelliSchedule
    B: np.ndarray
    R: np.ndarray
    diagnostics: dict = field(default_factory=dict)


@dataclass
class LyapunovSet:
    """Exponents and per-sample BLV/CLV frames over the window ``[I, F)``."""

    model: ModelSpec
    schedule: GinelliSchedule
    exponents: np.ndarray
    blv: np.ndarray
    clv: np.ndarray
    coeffs: np.ndarray
    sample_indices: np.ndarray
    times: np.ndarray
    diagnostics: dict = field(default_factory=dict)

    @property
    def n_samples(self) -> int:
        return self.blv.shape[0]

    @property
    def m(self) -> int:
        return self.blv.shape[2]


def qr_positive(A):
    """Thin QR factorization with a strictly positive diagonal in ``R``."""
    A = np.asarray(A, dtype=np.float64)
    if A.ndim != 2 or A.shape[1] > A.shape[0] or A.shape[1] == 0:
        raise ValidationError(f"need a d x m matrix with 1 <= m <= d, got {A.shape}")
    Q, R = np.linalg.qr(A)
    diag = np.diag(R)
    if not np.all(np.isfinite(diag)):
        raise BlowUpError("non-finite entries in QR factor")
    signs = np.where(diag < 0, -1.0, 1.0)
    Q = Q * signs
    R = R * signs[:, None]
    diag = np.abs(diag)
    if diag.min() <= max(RANK_FLOOR, 1e-14 * diag.max()):
        raise RankCollapseError(f"rank collapse: smallest R diagonal {diag.min():.3e}")
    return Q, R


def default_initial_frame(d: int, m: int) -> np.ndarray:
    return np.eye(d, m)


def forward_sweep(traj: Trajectory, schedule: GinelliSchedule, B0=None, m: int | None = None,
                  check_convergence: bool = False, seed: int = 0):
    """Forward QR sweep; returns the ``QRHistory`` and the exponent estimates.

    With ``check_convergence`` a second, randomly drawn frame is carried
    through the forward transient; the largest column-wise angle between the
    two frames over the last tenth of ``[0, I]`` is reported in the
    diagnostics as ``blv_convergence_deg``.
    """
    model = traj.model
    d = model.dimension
    if traj.n_samples < schedule.required_samples:
        raise ValidationError(
            f"trajectory has {traj.n_samples} samples, schedule needs {schedule.required_samples}")
    if abs(traj.save_interval - schedule.save_interval) > 1e-12:
        raise ValidationError("schedule and trajectory save intervals differ")
    if B0 is None:
        B = default_initial_frame(d, d if m is None else m)
    else:
        B = np.asarray(B0, dtype=np.float64)
    if B.ndim != 2 or B.shape[0] != d:
        raise ValidationError("initial frame must have d rows")
    B, _ = qr_positive(B)
    m = B.shape[1]

    l, n0, nIF = schedule.l, schedule.n_0I, schedule.n_IF
    steps = traj.steps_per_save
    params = model.param_array
    states = traj.states
    dt = traj.dt

    B_store = np.empty((nIF, d, m))
    R_store = np.empty((schedule.n_IF + schedule.n_FE, m, m))
    log_sum = np.zeros(m)
    max_log = 0.0

    B_alt = None
    drift = []
    drift_from = n0 - max(1, n0 // 10)
    if check_convergence:
        rng = np.random.default_rng(seed)
        B_alt, _ = qr_positive(rng.standard_normal((d, m)))

    for k in range(schedule.n_qr):
        j = k * l
        for i in range(j, j + l):
            _, B = kernels.tangent_rk4(model.code, params, states[i], B, steps, dt)
        B, R = qr_positive(B)
        logs = np.log(np.diag(R))
        max_log = max(max_log, float(np.abs(logs).max()))
        if k >= n0:
            R_store[k - n0] = R
            log_sum += logs
        if n0 <= k + 1 < n0 + nIF:
            B_store[k + 1 - n0] = B
        if B_alt is not None and k < n0:
            for i in range(j, j + l):
                _, B_alt = kernels.tangent_rk4(model.code, params, states[i], B_alt, steps, dt)
            B_alt, _ = qr_positive(B_alt)
            if k + 1 >= drift_from:
                cos = np.abs(np.sum(B * B_alt, axis=0))
                drift.append(float(np.degrees(np.arccos(np.clip(cos, 0.0, 1.0))).max()))

    if max_log > LOG_GROWTH_WARN:
        warnings.warn(f"log growth {max_log:.1f} per QR interval exceeds {LOG_GROWTH_WARN}; "
                      "reduce the QR interval l", RuntimeWarning, stacklevel=2)
    exponents = log_sum / schedule.averaging_time
    if np.any(np.diff(exponents) > 0):
        log.info("finite-time exponent estimates are not sorted: %s", exponents)
    diagnostics = {"max_log_growth": max_log}
    if drift:
        diagnostics["blv_convergence_deg"] = max(drift)
    return QRHistory(schedule, B_store, R_store, diagnostics), exponents


def random_upper_triangular(m: int, rng: np.random.Generator) -> np.ndarray:
    """Generic full-rank upper triangular seed for the backward sweep."""
    U = np.triu(rng.standard_normal((m, m)), 1)
    U[np.diag_indices(m)] = np.abs(rng.standard_normal(m)) + 0.1
    return U


def backward_sweep(qr: QRHistory, U_E=None, seed: int = 0) -> np.ndarray:
    """Backward triangular sweep from ``E`` down to ``I``.

    Returns the column-normalized coefficient matrices on the window, aligned
    with ``qr.B``.
    """
    m = qr.R.shape[1]
    if U_E is None:
        U = random_upper_triangular(m, np.random.default_rng(seed))
    else:
        U = np.array(U_E, dtype=np.float64)
        if U.shape != (m, m):
            raise ValidationError(f"U_E must be {m} x {m}")
        if np.any(np.tril(U, -1) != 0) or np.any(np.diag(U) == 0):
            raise ValidationError("U_E must be upper triangular with nonzero diagonal")
    n_win = qr.B.shape[0]
    out = np.empty((n_win, m, m))
    warned = False
    for i in range(qr.R.shape[0] - 1, -1, -1):
        R = qr.R[i]
        if not warned:
            diag = np.abs(np.diag(R))
            if diag.max() / diag.min() > COND_WARN:
                warnings.warn("ill-conditioned growth factor in backward sweep",
                              RuntimeWarning, stacklevel=2)
                warned = True
        U = solve_triangular(R, U, lower=False, check_finite=False)
        norms = np.linalg.norm(U, axis=0)
        if np.any(norms == 0) or not np.all(np.isfinite(norms)):
            raise RankCollapseError("zero or non-finite column in backward sweep")
        U = U / norms
        if i < n_win:
            out[i] = U
    return out


def assemble_clvs(qr: QRHistory, U, exponents, model: ModelSpec) -> LyapunovSet:
    """Form ``C = B U`` on the window with a reproducible sign convention.

    Each CLV column is flipped so that its largest-magnitude entry is
    positive; the matching coefficient column is flipped with it.
    """
    U = np.array(U, dtype=np.float64)
    if U.shape[0] != qr.B.shape[0] or U.shape[1] != qr.B.shape[2]:
        raise ValidationError("coefficient matrices are not aligned with the stored frames")
    C = np.matmul(qr.B, U)
    n, d, m = C.shape
    peak = np.take_along_axis(C, np.abs(C).argmax(axis=1)[:, None, :], axis=1)[:, 0, :]
    signs = np.where(peak < 0, -1.0, 1.0)
    C *= signs[:, None, :]
    U *= signs[:, None, :]
    sched = qr.schedule
    idx = sched.window_sample_indices
    return LyapunovSet(
        model=model,
        schedule=sched,
        exponents=np.asarray(exponents, dtype=np.float64),
        blv=qr.B,
        clv=C,
        coeffs=U,
        sample_indices=idx,
        times=idx * sched.save_interval,
        diagnostics=dict(qr.diagnostics),
    )


def compute_lyapunov(traj: Trajectory, schedule: GinelliSchedule, m: int | None = None,
                     seed: int = 0, B0=None, check_convergence: bool = False) -> LyapunovSet:
    """Full pipeline: forward sweep, backward sweep and CLV assembly."""
    qr, exps = forward_sweep(traj, schedule, B0=B0, m=m, check_convergence=check_convergence,
                             seed=seed + 1)
    U = backward_sweep(qr, seed=seed)
    return assemble_clvs(qr, U, exps, traj.model)


def propagated_clvs(lyap: LyapunovSet, traj: Trajectory) -> np.ndarray:
    """``M_{j, j+l} C_j`` for every window sample ``j``, by direct tangent integration."""
    model = traj.model
    l = lyap.schedule.l
    steps = traj.steps_per_save
    out = np.empty_like(lyap.clv)
    for n, j in enumerate(lyap.sample_indices):
        C = np.ascontiguousarray(lyap.clv[n])
        for i in range(j, j + l):
            _, C = kernels.tangent_rk4(model.code, model.param_array, traj.states[i], C,
                                       steps, traj.dt)
        out[n] = C
    return out


def covariance_cosines(lyap: LyapunovSet, traj: Trajectory, propagated=None) -> np.ndarray:
    """``|cos|`` between ``M C_j e_i`` and ``C_{j+l} e_i`` for consecutive window samples."""
    MC = propagated_clvs(lyap, traj) if propagated is None else propagated
    a = MC[:-1]
    b = lyap.clv[1:]
    return np.abs(np.sum(a * b, axis=1)) / (np.linalg.norm(a, axis=1) * np.linalg.norm(b, axis=1))


def clv_growth_check(lyap: LyapunovSet, traj: Trajectory, propagated=None) -> np.ndarray:
    """Empirical growth rate of each CLV over the window.

    Growth is accumulated one QR interval at a time from the stored CLVs, so
    no column has to survive a long forward integration.
    """
    MC = propagated_clvs(lyap, traj) if propagated is None else propagated
    growth = np.log(np.linalg.norm(MC, axis=1)).sum(axis=0)
    return growth / (lyap.n_samples * lyap.schedule.l * lyap.schedule.save_interval)


def kaplan_yorke(exponents) -> float:
    """Kaplan-Yorke dimension of a nonincreasing spectrum."""
    lam = np.asarray(exponents, dtype=np.float64)
    if lam.ndim != 1 or lam.size == 0:
        raise ValidationError("need a nonempty spectrum")
    if np.any(np.diff(lam) > 0):
        raise ValidationError("spectrum must be sorted nonincreasing")
    csum = np.cumsum(lam)
    if csum[0] < 0:
        return 0.0
    nonneg = np.nonzero(csum >= 0)[0]
    j = int(nonneg.max())
    if j == lam.size - 1:
        raise ValidationError("cumulative sum never turns negative; spectrum is not dissipative")
    return (j + 1) + csum[j] / abs(lam[j + 1])
