"""SO(3) and SE(3) primitives.

Twists are plain 6-vectors ordered ``[omega; nu]`` (angular first). Poses keep
the full rotation matrix; nothing in here re-orthonormalizes, so drift can be
measured with :func:`orthonormality_error`.

The ``_``-prefixed functions are numba kernels on raw arrays; the estimator's
inner loop calls them directly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numba import njit

SMALL_ANGLE = 1e-8
SKEW_TOL = 1e-9

_I3 = np.eye(3)


@njit(cache=True)
def _hat(v):
    out = np.zeros((3, 3))
    out[0, 1] = -v[2]
    out[0, 2] = v[1]
    out[1, 0] = v[2]
    out[1, 2] = -v[0]
    out[2, 0] = -v[1]
    out[2, 1] = v[0]
    return out


@njit(cache=True)
def _vex(A):
    out = np.empty(3)
    out[0] = 0.5 * (A[2, 1] - A[1, 2])
    out[1] = 0.5 * (A[0, 2] - A[2, 0])
    out[2] = 0.5 * (A[1, 0] - A[0, 1])
    return out


@njit(cache=True)
def _cross(u, v):
    out = np.empty(3)
    out[0] = u[1] * v[2] - u[2] * v[1]
    out[1] = u[2] * v[0] - u[0] * v[2]
    out[2] = u[0] * v[1] - u[1] * v[0]
    return out


@njit(cache=True)
def _so3_coeffs(theta):
    # A = sin(t)/t, B = (1 - cos t)/t^2, C = (t - sin t)/t^3
    if theta < SMALL_ANGLE:
        t2 = theta * theta
        return 1.0 - t2 / 6.0, 0.5 - t2 / 24.0, 1.0 / 6.0 - t2 / 120.0
    s = math.sin(theta)
    half = math.sin(0.5 * theta)
    t2 = theta * theta
    return s / theta, 2.0 * half * half / t2, (theta - s) / (t2 * theta)


@njit(cache=True)
def _exp_so3(w):
    theta = math.sqrt(w[0] * w[0] + w[1] * w[1] + w[2] * w[2])
    A, B, _ = _so3_coeffs(theta)
    W = _hat(w)
    return np.eye(3) + A * W + B * (W @ W)


@njit(cache=True)
def _exp_se3(xi, dt):
    w = xi[:3] * dt
    v = xi[3:] * dt
    theta = math.sqrt(w[0] * w[0] + w[1] * w[1] + w[2] * w[2])
    A, B, C = _so3_coeffs(theta)
    W = _hat(w)
    W2 = W @ W
    R = np.eye(3) + A * W + B * W2
    V = np.eye(3) + B * W + C * W2
    return R, V @ v


@njit(cache=True)
def _propagate(R0, b0, twists, dt):
    """Poses ``g_{k+1} = g_k exp(dt * twists[k])``; returns ``n + 1`` samples."""
    n = twists.shape[0]
    R = np.empty((n + 1, 3, 3))
    b = np.empty((n + 1, 3))
    R[0] = R0
    b[0] = b0
    for k in range(n):
        dR, db = _exp_se3(twists[k], dt)
        R[k + 1] = R[k] @ dR
        b[k + 1] = R[k] @ db + b[k]
    return R, b


@njit(cache=True)
def _advance(R, b, twists, dt):
    """``g_k exp(dt * twists[k])`` for each sample independently."""
    n = twists.shape[0]
    R1 = np.empty((n, 3, 3))
    b1 = np.empty((n, 3))
    for k in range(n):
        dR, db = _exp_se3(twists[k], dt)
        R1[k] = R[k] @ dR
        b1[k] = R[k] @ db + b[k]
    return R1, b1


def _vec(x, n=3) -> np.ndarray:
    return np.ascontiguousarray(x, dtype=float).reshape(n)


def hat3(v) -> np.ndarray:
    """Cross-product matrix: ``hat3(v) @ w == np.cross(v, w)``."""
    x, y, z = v
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def cross3(u, v) -> np.ndarray:
    """``np.cross`` for a pair of 3-vectors, without its broadcasting overhead."""
    u0, u1, u2 = u
    v0, v1, v2 = v
    return np.array([u1 * v2 - u2 * v1, u2 * v0 - u0 * v2, u0 * v1 - u1 * v0])


def vee3(S, tol: float = SKEW_TOL) -> np.ndarray:
    """Inverse of :func:`hat3`. Rejects inputs whose symmetric part exceeds ``tol``."""
    S = np.asarray(S, dtype=float)
    sym = np.linalg.norm(S + S.T)
    if sym > tol * max(1.0, np.linalg.norm(S)):
        raise ValueError(f"matrix is not skew-symmetric (|S + S^T| = {sym:.3e})")
    return np.array([S[2, 1] - S[1, 2], S[0, 2] - S[2, 0], S[1, 0] - S[0, 1]]) * 0.5


def vex(A) -> np.ndarray:
    """Skew part of ``A`` as a 3-vector, no symmetry check."""
    return 0.5 * np.array([A[2, 1] - A[1, 2], A[0, 2] - A[2, 0], A[1, 0] - A[0, 1]])


def wedge6(xi) -> np.ndarray:
    """Embed a twist ``[omega; nu]`` into se(3) as a 4x4 matrix."""
    xi = np.asarray(xi, dtype=float)
    out = np.zeros((4, 4))
    out[:3, :3] = hat3(xi[:3])
    out[:3, 3] = xi[3:]
    return out


def vee6(X) -> np.ndarray:
    """Inverse of :func:`wedge6`."""
    X = np.asarray(X, dtype=float)
    if np.any(np.abs(X[3]) > SKEW_TOL):
        raise ValueError("bottom row of an se(3) element must be zero")
    return np.concatenate([vee3(X[:3, :3]), X[:3, 3]])


def exp_so3(w) -> np.ndarray:
    """Rodrigues' formula."""
    return _exp_so3(_vec(w))


def log_so3(R) -> np.ndarray:
    """Rotation vector of ``R`` with norm in ``[0, pi]``.

    At exactly ``pi`` the axis sign is fixed by pivoting on the largest
    diagonal entry of ``(R + I) / 2``.
    """
    R = np.asarray(R, dtype=float)
    skew = vex(R)
    s = math.sqrt(skew @ skew)
    c = 0.5 * (np.trace(R) - 1.0)
    theta = math.atan2(s, c)
    if theta < SMALL_ANGLE:
        return (1.0 + theta * theta / 6.0) * skew
    if math.pi - theta > 1e-6:
        return theta / s * skew
    # near pi: sin is tiny, recover the axis from the symmetric part
    B = 0.5 * (R + R.T) - c * _I3
    k = int(np.argmax(np.diag(B)))
    axis = B[:, k] / math.sqrt(B[k, k])
    axis /= np.linalg.norm(axis)
    if skew @ axis < 0.0:
        axis = -axis
    return theta * axis


def left_jacobian_so3(w) -> np.ndarray:
    w = np.asarray(w, dtype=float)
    theta = math.sqrt(w @ w)
    _, B, C = _so3_coeffs(theta)
    W = hat3(w)
    return _I3 + B * W + C * (W @ W)


@dataclass(frozen=True)
class Pose:
    """Rigid transform ``[[R, b], [0, 1]]``."""

    R: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "R", np.ascontiguousarray(self.R, dtype=float).reshape(3, 3))
        object.__setattr__(self, "b", np.ascontiguousarray(self.b, dtype=float).reshape(3))

    @classmethod
    def identity(cls) -> "Pose":
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_matrix(cls, T) -> "Pose":
        T = np.asarray(T, dtype=float)
        return cls(T[:3, :3], T[:3, 3])

    def as_matrix(self) -> np.ndarray:
        T = np.eye(4)
        T[:3, :3] = self.R
        T[:3, 3] = self.b
        return T

    def __matmul__(self, other: "Pose") -> "Pose":
        return compose(self, other)

    def apply(self, p) -> np.ndarray:
        return self.R @ np.asarray(p, dtype=float) + self.b


def compose(g1: Pose, g2: Pose) -> Pose:
    return Pose(g1.R @ g2.R, g1.R @ g2.b + g1.b)


def inverse(g: Pose) -> Pose:
    Rt = g.R.T
    return Pose(Rt, -(Rt @ g.b))


def exp_se3(xi, dt: float = 1.0) -> Pose:
    """Closed-form exponential of ``dt * xi``; translation goes through the left Jacobian."""
    if not math.isfinite(dt):
        raise ValueError("dt must be finite")
    return Pose(*_exp_se3(_vec(xi, 6), float(dt)))


def log_se3(g: Pose) -> np.ndarray:
    w = log_so3(g.R)
    V = left_jacobian_so3(w)
    return np.concatenate([w, np.linalg.solve(V, g.b)])


def adjoint_matrix(g: Pose) -> np.ndarray:
    """``Ad_g = [[R, 0], [hat(b) R, R]]`` acting on ``[omega; nu]``."""
    out = np.zeros((6, 6))
    out[:3, :3] = g.R
    out[3:, 3:] = g.R
    out[3:, :3] = hat3(g.b) @ g.R
    return out


def ad_matrix(zeta) -> np.ndarray:
    zeta = np.asarray(zeta, dtype=float)
    W = hat3(zeta[:3])
    out = np.zeros((6, 6))
    out[:3, :3] = W
    out[3:, 3:] = W
    out[3:, :3] = hat3(zeta[3:])
    return out


def ad_star(zeta) -> np.ndarray:
    return ad_matrix(zeta).T


def principal_angle(Q) -> float:
    """Rotation angle of ``Q`` in ``[0, pi]``.

    Same value as ``arccos((tr Q - 1) / 2)`` but evaluated with atan2 so tiny
    angles keep full precision.
    """
    Q = np.asarray(Q, dtype=float)
    c = min(1.0, max(-1.0, 0.5 * (np.trace(Q) - 1.0)))
    s = vex(Q)
    return math.atan2(math.sqrt(s @ s), c)


def principal_angles(Q) -> np.ndarray:
    """:func:`principal_angle` over a stack of shape ``(n, 3, 3)``."""
    Q = np.asarray(Q, dtype=float)
    c = np.clip(0.5 * (np.trace(Q, axis1=1, axis2=2) - 1.0), -1.0, 1.0)
    s = 0.5 * np.stack([Q[:, 2, 1] - Q[:, 1, 2], Q[:, 0, 2] - Q[:, 2, 0], Q[:, 1, 0] - Q[:, 0, 1]], axis=1)
    return np.arctan2(np.linalg.norm(s, axis=1), c)


def orthonormality_error(R) -> float:
    """Frobenius norm of ``R^T R - I``."""
    R = np.asarray(R, dtype=float)
    return float(np.linalg.norm(R.T @ R - _I3))


def is_rotation(R, tol: float = 1e-10) -> bool:
    R = np.asarray(R, dtype=float)
    return R.shape == (3, 3) and orthonormality_error(R) < tol and abs(np.linalg.det(R) - 1.0) < tol
