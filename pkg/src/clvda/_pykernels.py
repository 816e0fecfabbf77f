"""Pure numpy kernels, used when the compiled extension is unavailable.

Every function here has a twin with the same signature in ``_ckernels.pyx``.
Model codes: ``0`` is Lorenz-63 with ``params = (sigma, rho, beta)``, ``1`` is
Lorenz-96 with ``params = (F,)``.
"""
import numpy as np

L63 = 0
L96 = 1

# overflow propagates as inf/nan like the compiled kernels; callers check finiteness
_ieee = np.errstate(over="ignore", invalid="ignore")


def field(kind, params, x):
    """Vector field evaluated on the last axis of ``x`` (a state or a stack)."""
    if kind == L63:
        s, r, b = params[0], params[1], params[2]
        X, Y, Z = x[..., 0], x[..., 1], x[..., 2]
        return np.stack((s * (Y - X), X * (r - Z) - Y, X * Y - b * Z), axis=-1)
    xm1 = np.roll(x, 1, axis=-1)
    xm2 = np.roll(x, 2, axis=-1)
    xp1 = np.roll(x, -1, axis=-1)
    return (xp1 - xm2) * xm1 - x + params[0]


def jac_apply(kind, params, x, B):
    """Product ``J(x) @ B`` without forming ``J`` for Lorenz-96."""
    if kind == L63:
        s, r, b = params[0], params[1], params[2]
        X, Y, Z = x
        out = np.empty_like(B)
        out[0] = s * (B[1] - B[0])
        out[1] = (r - Z) * B[0] - B[1] - X * B[2]
        out[2] = Y * B[0] + X * B[1] - b * B[2]
        return out
    xm1 = np.roll(x, 1)[:, None]
    xm2 = np.roll(x, 2)[:, None]
    xp1 = np.roll(x, -1)[:, None]
    return (
        (xp1 - xm2) * np.roll(B, 1, axis=0)
        + xm1 * (np.roll(B, -1, axis=0) - np.roll(B, 2, axis=0))
        - B
    )


@_ieee
def rk4(kind, params, x, n_steps, dt):
    """Advance a state (or an ``N x d`` stack of states) by ``n_steps`` RK4 steps."""
    x = np.array(x, dtype=np.float64, copy=True)
    h = 0.5 * dt
    for _ in range(n_steps):
        k1 = field(kind, params, x)
        k2 = field(kind, params, x + h * k1)
        k3 = field(kind, params, x + h * k2)
        k4 = field(kind, params, x + dt * k3)
        x = x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    return x


@_ieee
def integrate(kind, params, x0, n_saves, steps_per_save, dt):
    out = np.empty((n_saves + 1, x0.shape[0]))
    x = np.array(x0, dtype=np.float64, copy=True)
    out[0] = x
    for j in range(1, n_saves + 1):
        x = rk4(kind, params, x, steps_per_save, dt)
        out[j] = x
    return out


@_ieee
def tangent_rk4(kind, params, x, B, n_steps, dt):
    """Jointly integrate ``dx/dt = f(x)`` and ``dB/dt = J(x) B``."""
    x = np.array(x, dtype=np.float64, copy=True)
    B = np.array(B, dtype=np.float64, copy=True)
    h = 0.5 * dt
    c = dt / 6.0
    for _ in range(n_steps):
        k1 = field(kind, params, x)
        K1 = jac_apply(kind, params, x, B)
        x2 = x + h * k1
        k2 = field(kind, params, x2)
        K2 = jac_apply(kind, params, x2, B + h * K1)
        x3 = x + h * k2
        k3 = field(kind, params, x3)
        K3 = jac_apply(kind, params, x3, B + h * K2)
        x4 = x + dt * k3
        k4 = field(kind, params, x4)
        K4 = jac_apply(kind, params, x4, B + dt * K3)
        x = x + c * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        B = B + c * (K1 + 2.0 * K2 + 2.0 * K3 + K4)
    return x, B
