"""Angles between Lyapunov vectors and principal angles between their subspaces."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from clvda.errors import ValidationError
from clvda.ginelli import LyapunovSet, qr_positive

PERCENTILE_METHOD = "linear"


@dataclass(frozen=True)
class AngleSummary:
    median: float
    p25: float
    p75: float
    n: int


def acute_angle(u, v) -> float:
    """Sign-blind angle in degrees, ``arccos(|u.v| / (|u||v|))``."""
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    nu, nv = np.linalg.norm(u), np.linalg.norm(v)
    if nu == 0 or nv == 0:
        raise ValidationError("angle with a zero vector is undefined")
    c = np.clip(abs(float(u @ v)) / (nu * nv), 0.0, 1.0)
    return float(np.degrees(np.arccos(c)))


def column_angles(A, B) -> np.ndarray:
    """Acute angles between matching columns of stacked frames.

    ``A`` and ``B`` have shape ``(..., d, m)``; the result has shape ``(..., m)``.
    """
    A = np.asarray(A, dtype=np.float64)
    B = np.asarray(B, dtype=np.float64)
    if A.shape != B.shape:
        raise ValidationError(f"frame shapes differ: {A.shape} vs {B.shape}")
    na = np.linalg.norm(A, axis=-2)
    nb = np.linalg.norm(B, axis=-2)
    if np.any(na == 0) or np.any(nb == 0):
        raise ValidationError("angle with a zero vector is undefined")
    c = np.abs(np.sum(A * B, axis=-2)) / (na * nb)
    return np.degrees(np.arccos(np.clip(c, 0.0, 1.0)))


def _orthonormal(P) -> np.ndarray:
    P = np.asarray(P, dtype=np.float64)
    if P.ndim == 1:
        P = P[:, None]
    if P.ndim != 2 or P.shape[1] == 0:
        raise ValidationError("empty basis")
    G = P.T @ P
    if np.abs(G - np.eye(P.shape[1])).max() > 1e-8:
        P = qr_positive(P)[0]
    return P


def principal_angles(P, Q) -> np.ndarray:
    """Principal angles (degrees, nondecreasing) between ``span(P)`` and ``span(Q)``.

    Bases that are not orthonormal to 1e-8 are re-orthonormalized first.
    """
    P = _orthonormal(P)
    Q = _orthonormal(Q)
    if P.shape[0] != Q.shape[0]:
        raise ValidationError("bases live in different ambient dimensions")
    s = np.linalg.svd(P.T @ Q, compute_uv=False)
    return np.degrees(np.arccos(np.clip(np.sort(s)[::-1], 0.0, 1.0)))


def random_orthonormal_subspace(d: int, k: int, seed: int | np.random.Generator = 0) -> np.ndarray:
    """Haar-distributed ``k``-dimensional subspace of ``R^d`` as a ``d x k`` basis."""
    if not 1 <= k <= d:
        raise ValidationError("need 1 <= k <= d")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    return qr_positive(rng.standard_normal((d, k)))[0]


def summarize(series) -> AngleSummary:
    """Median and quartiles with linear interpolation between order statistics."""
    x = np.asarray(series, dtype=np.float64).ravel()
    if x.size == 0:
        raise ValidationError("cannot summarize an empty series")
    p25, med, p75 = np.percentile(x, [25, 50, 75], method=PERCENTILE_METHOD)
    return AngleSummary(float(med), float(p25), float(p75), int(x.size))


def subspace_from_blvs(lyap: LyapunovSet, j: int, k: int) -> np.ndarray:
    """Leading ``k`` BLVs at window sample ``j``: the approximate backward Oseledets subspace."""
    if not 1 <= k <= lyap.m:
        raise ValidationError(f"k must lie in [1, {lyap.m}]")
    return lyap.blv[j][:, :k]


def principal_angle_series(ref: LyapunovSet, other: LyapunovSet, k: int) -> np.ndarray:
    """``(n_samples, k)`` principal angles between leading-``k`` BLV subspaces."""
    _check_aligned(ref, other)
    return np.stack([principal_angles(subspace_from_blvs(ref, j, k), subspace_from_blvs(other, j, k))
                     for j in range(ref.n_samples)])


def vector_angle_series(ref: LyapunovSet, other: LyapunovSet, kind: str = "BLV") -> np.ndarray:
    """``(n_samples, m)`` acute angles between index-matched vectors."""
    _check_aligned(ref, other)
    if kind == "BLV":
        return column_angles(ref.blv, other.blv)
    if kind == "CLV":
        return column_angles(ref.clv, other.clv)
    raise ValidationError(f"unknown vector kind {kind!r}")


def random_baseline(ref: LyapunovSet, k: int, realizations: int,
                    rng: np.random.Generator) -> np.ndarray:
    """Principal angles between the reference subspace and Haar-random subspaces.

    Realization ``r`` is compared at window sample ``r * n_samples // realizations``.
    """
    d = ref.blv.shape[1]
    out = np.empty((realizations, k))
    for r in range(realizations):
        j = r * ref.n_samples // realizations
        out[r] = principal_angles(subspace_from_blvs(ref, j, k),
                                  random_orthonormal_subspace(d, k, rng))
    return out


def _check_aligned(a: LyapunovSet, b: LyapunovSet) -> None:
    if a.blv.shape != b.blv.shape or not np.array_equal(a.sample_indices, b.sample_indices):
        raise ValidationError("Lyapunov sets are not computed over the same window")
