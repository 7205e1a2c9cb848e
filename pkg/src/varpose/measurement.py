"""Optical measurement model: feature projection, pairwise vectors, bump noise,
point-velocity filtering and twist recovery from point velocities."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy.signal import lfilter

from .liegroup import Pose, hat3


class DegenerateGeometryError(ValueError):
    """Feature geometry does not determine the twist (e.g. collinear points)."""


@dataclass(frozen=True)
class FeatureSet:
    """Feature point positions in the observed-vehicle frame, one row per point."""

    points: np.ndarray

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim != 2 or pts.shape[1] != 3:
            raise ValueError(f"feature points must have shape (n, 3), got {pts.shape}")
        if pts.shape[0] < 3:
            raise ValueError("at least 3 feature points are required for a unique attitude")
        if np.linalg.matrix_rank(pairwise_matrix(pts), tol=1e-9) < 2:
            raise ValueError("feature points are collinear")
        object.__setattr__(self, "points", pts)

    def __len__(self):
        return self.points.shape[0]


@dataclass(frozen=True)
class KnownReference:
    """Pairwise feature vectors ``D`` and centroid ``p_bar`` in the observed frame."""

    D: np.ndarray
    p_bar: np.ndarray

    @classmethod
    def from_features(cls, features: FeatureSet) -> "KnownReference":
        return cls(pairwise_matrix(features.points), features.points.mean(axis=0))


@dataclass
class MeasurementFrame:
    """One sample of (possibly noisy) optical measurements in the observer frame."""

    a_meas: np.ndarray  # (n, 3) feature positions
    L_meas: np.ndarray  # (3, beta) pairwise vectors
    a_bar: np.ndarray  # (3,)
    v_meas: np.ndarray  # (n, 3) point velocities
    t: float = 0.0
    xi_meas: np.ndarray = field(default_factory=lambda: np.zeros(6))


@dataclass(frozen=True)
class NoiseSpec:
    """Total support widths of the bump noise (m and m/s)."""

    support_width: float = 1e-3
    velocity_support_width: float = 1e-3
    seed: int = 0

    def __post_init__(self):
        if self.support_width < 0 or self.velocity_support_width < 0:
            raise ValueError("noise widths must be non-negative")


@lru_cache(maxsize=None)
def _pair_indices(n: int):
    lam, ell = np.triu_indices(n, k=1)
    return lam, ell


def pairwise_matrix(vectors) -> np.ndarray:
    """Columns ``v[lam] - v[ell]`` for every pair ``lam < ell`` in lexicographic order."""
    V = np.asarray(vectors, dtype=float)
    if V.ndim != 2 or V.shape[0] < 2:
        raise ValueError("need at least two vectors")
    lam, ell = _pair_indices(V.shape[0])
    return (V[lam] - V[ell]).T


def project_features(g_true: Pose, features: FeatureSet | np.ndarray) -> np.ndarray:
    """Noise-free feature positions in the observer frame, ``a_j = R^T (p_j - b)``."""
    pts = features.points if isinstance(features, FeatureSet) else np.asarray(features, dtype=float)
    return (pts - g_true.b) @ g_true.R


def bump_density(x, width: float) -> np.ndarray:
    """Unnormalized bump ``exp(-1 / (1 - (2x/w)^2))`` on ``(-w/2, w/2)``."""
    u = 2.0 * np.asarray(x, dtype=float) / width
    out = np.zeros_like(u)
    inside = np.abs(u) < 1.0
    out[inside] = np.exp(-1.0 / (1.0 - u[inside] ** 2))
    return out


def sample_bump(width: float, shape, rng: np.random.Generator) -> np.ndarray:
    """I.i.d. samples from the normalized bump density by rejection from a uniform envelope."""
    shape = (shape,) if isinstance(shape, int) else tuple(shape)
    size = int(np.prod(shape))
    if width == 0.0 or size == 0:
        return np.zeros(shape)
    out = np.empty(size)
    filled = 0
    while filled < size:
        batch = max(16, int(2.4 * (size - filled)))
        u = rng.uniform(-1.0, 1.0, batch)
        # envelope peak is exp(-1) at u = 0
        keep = u[rng.uniform(0.0, 1.0, batch) < np.exp(1.0 - 1.0 / (1.0 - u * u))]
        take = min(keep.size, size - filled)
        out[filled:filled + take] = keep[:take]
        filled += take
    return (0.5 * width * out).reshape(shape)


def sample_bump_noise(spec: NoiseSpec, n: int, rng: np.random.Generator | None = None) -> np.ndarray:
    """``n`` position-noise 3-vectors drawn per ``spec``; seeded from ``spec.seed`` if no rng given."""
    rng = np.random.default_rng(spec.seed) if rng is None else rng
    return sample_bump(spec.support_width, (n, 3), rng)


_MINUS_I3 = -np.eye(3)


def point_velocity_matrix(a) -> np.ndarray:
    """``G(a) = [hat(a), -I]`` so that the point velocity is ``G(a) @ xi``."""
    G = np.empty((3, 6))
    G[:, :3] = hat3(a)
    G[:, 3:] = -np.eye(3)
    return G


def stack_velocity_system(a_list, v_list):
    A = np.asarray(a_list, dtype=float).reshape(-1, 3)
    V = np.asarray(v_list, dtype=float).reshape(-1, 3)
    if A.shape[0] != V.shape[0]:
        raise ValueError(f"{A.shape[0]} positions but {V.shape[0]} velocities")
    if A.shape[0] == 0:
        raise ValueError("need at least one point")
    n = A.shape[0]
    G = np.zeros((3 * n, 6))
    for j, (x, y, z) in enumerate(A):
        r = 3 * j
        G[r:r + 3, :3] = ((0.0, -z, y), (z, 0.0, -x), (-y, x, 0.0))
        G[r:r + 3, 3:] = _MINUS_I3
    return G, V.reshape(-1)


def extract_twist(a_list, v_list, cond_limit: float = 1e12) -> np.ndarray:
    """Rigid-body twist from point positions and velocities via the pseudo-inverse of G.

    Three or more points give the least-squares solution (left pseudo-inverse);
    fewer points give the minimum-norm solution. ``cond_limit`` bounds the
    condition number of ``G^T G``.
    """
    G, V = stack_velocity_system(a_list, v_list)
    if G.shape[0] >= 9:
        A = np.asarray(a_list, dtype=float).reshape(1, -1, 3)
        return extract_twist_batch(A, V.reshape(1, -1, 3), cond_limit)[0]
    # one point: G G^T is invertible; two points: G is rank 5, fall back to SVD
    if G.shape[0] == 3:
        return G.T @ np.linalg.solve(G @ G.T, V)
    return np.linalg.pinv(G) @ V


class PointVelocityFilter:
    """Backward difference followed by a first-order low-pass, per point.

    The first sample yields zero velocity. ``cutoff_hz=inf`` disables smoothing.
    """

    def __init__(self, dt: float, cutoff_hz: float = 10.0):
        if not dt > 0:
            raise ValueError("dt must be positive")
        if not cutoff_hz > 0:
            raise ValueError("cutoff must be positive")
        self.dt = dt
        self.cutoff_hz = cutoff_hz
        tau = 0.0 if math.isinf(cutoff_hz) else 1.0 / (2.0 * math.pi * cutoff_hz)
        self.alpha = dt / (dt + tau)
        self._prev = None
        self._v = None

    def update(self, a) -> np.ndarray:
        return self.update_batch(np.asarray(a, dtype=float)[None])[0]

    def update_batch(self, history) -> np.ndarray:
        """Feed consecutive samples (leading axis is time); returns one velocity per sample."""
        history = np.asarray(history, dtype=float)
        if history.shape[0] == 0:
            return np.zeros_like(history)
        out = np.empty_like(history)
        start = 0
        if self._prev is None:
            self._prev = history[0].copy()
            self._v = np.zeros_like(history[0])
            out[0] = 0.0
            start = 1
        if start < history.shape[0]:
            prev = np.concatenate([self._prev[None], history[start:-1]])
            raw = (history[start:] - prev) / self.dt
            c = 1.0 - self.alpha
            out[start:], _ = lfilter([self.alpha], [1.0, -c], raw, axis=0, zi=(c * self._v)[None])
            self._v = out[-1].copy()
            self._prev = history[-1].copy()
        return out


def filter_point_velocities(history, dt: float, cutoff_hz: float = 10.0) -> np.ndarray:
    """Filtered point velocities for every sample of ``history`` (shape ``(T, n, 3)``)."""
    history = np.asarray(history, dtype=float)
    if history.shape[0] < 2:
        raise ValueError("need at least two samples")
    return PointVelocityFilter(dt, cutoff_hz).update_batch(history)


def make_frame(a_meas, v_meas, t: float = 0.0, xi_meas=None) -> MeasurementFrame:
    a_meas = np.asarray(a_meas, dtype=float)
    v_meas = np.asarray(v_meas, dtype=float)
    if xi_meas is None:
        xi_meas = extract_twist(a_meas, v_meas)
    return MeasurementFrame(a_meas, pairwise_matrix(a_meas), a_meas.mean(axis=0), v_meas, t,
                            np.asarray(xi_meas, dtype=float))


def extract_twist_batch(a, v, cond_limit: float = 1e12) -> np.ndarray:
    """:func:`extract_twist` over a leading time axis; ``a`` and ``v`` are ``(T, n, 3)`` with ``n >= 3``."""
    a = np.asarray(a, dtype=float)
    v = np.asarray(v, dtype=float)
    if a.shape != v.shape or a.ndim != 3 or a.shape[2] != 3:
        raise ValueError(f"shape mismatch: positions {a.shape}, velocities {v.shape}")
    if a.shape[1] < 3:
        return np.array([extract_twist(ak, vk, cond_limit) for ak, vk in zip(a, v)]).reshape(-1, 6)
    T, n, _ = a.shape
    G = np.zeros((T, n, 3, 6))
    x, y, z = a[..., 0], a[..., 1], a[..., 2]
    G[..., 0, 1], G[..., 0, 2] = -z, y
    G[..., 1, 0], G[..., 1, 2] = z, -x
    G[..., 2, 0], G[..., 2, 1] = -y, x
    G[..., 0, 3] = G[..., 1, 4] = G[..., 2, 5] = -1.0
    G = G.reshape(T, 3 * n, 6)
    sv = np.linalg.svd(G, compute_uv=False)
    if not np.all(sv[:, -1] ** 2 > sv[:, 0] ** 2 / cond_limit):
        raise DegenerateGeometryError("feature points are collinear or degenerate")
    # QR keeps the conditioning of G rather than squaring it as the normal equations would
    Q, Rq = np.linalg.qr(G)
    rhs = np.einsum("tki,tk->ti", Q, v.reshape(T, 3 * n))
    return np.linalg.solve(Rq, rhs[..., None])[..., 0]


@dataclass
class MeasurementStream:
    """Uniformly sampled measurement frames stored as stacked arrays."""

    t: np.ndarray  # (T,)
    a_meas: np.ndarray  # (T, n, 3)
    L_meas: np.ndarray  # (T, 3, beta)
    a_bar: np.ndarray  # (T, 3)
    v_meas: np.ndarray  # (T, n, 3)
    xi_meas: np.ndarray  # (T, 6)

    @classmethod
    def from_arrays(cls, t, a_meas, v_meas, xi_meas=None) -> "MeasurementStream":
        a_meas = np.asarray(a_meas, dtype=float)
        v_meas = np.asarray(v_meas, dtype=float)
        lam, ell = _pair_indices(a_meas.shape[1])
        L = np.ascontiguousarray((a_meas[:, lam] - a_meas[:, ell]).transpose(0, 2, 1))
        if xi_meas is None:
            xi_meas = extract_twist_batch(a_meas, v_meas)
        return cls(np.asarray(t, dtype=float), a_meas, L, a_meas.mean(axis=1), v_meas,
                   np.ascontiguousarray(xi_meas, dtype=float))

    @classmethod
    def from_frames(cls, frames) -> "MeasurementStream":
        if not frames:
            raise ValueError("measurement stream is empty")
        return cls(np.array([f.t for f in frames], dtype=float),
                   np.stack([f.a_meas for f in frames]),
                   np.ascontiguousarray(np.stack([f.L_meas for f in frames])),
                   np.stack([f.a_bar for f in frames]),
                   np.stack([f.v_meas for f in frames]),
                   np.stack([np.asarray(f.xi_meas, dtype=float) for f in frames]))

    def __len__(self):
        return self.t.shape[0]

    def __getitem__(self, k: int) -> MeasurementFrame:
        return MeasurementFrame(self.a_meas[k], self.L_meas[k], self.a_bar[k], self.v_meas[k],
                                float(self.t[k]), self.xi_meas[k])
