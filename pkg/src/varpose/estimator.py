"""Variational pose/velocity estimator: potentials, the continuous filter with an
RK4 reference stepper, and the discrete Lie group variational integrator.

The numerical work lives in numba kernels operating on raw arrays; the public
functions below wrap them with dataclass-level validation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, NamedTuple, Sequence

import numpy as np
from numba import njit

from .liegroup import Pose, _cross, _exp_se3, _exp_so3, _vex, cross3, vex
from .measurement import KnownReference, MeasurementFrame, MeasurementStream


class GainValidationError(ValueError):
    def __init__(self, field_name: str, message: str):
        super().__init__(f"{field_name}: {message}")
        self.field = field_name


class NewtonConvergenceError(RuntimeError):
    def __init__(self, residual: float, iterations: int, step: int | None = None):
        self.residual = residual
        self.iterations = iterations
        self.step = step
        where = "" if step is None else f" at step {step}"
        super().__init__(
            f"Newton solve did not converge{where}: residual {residual:.3e} after {iterations} iterations"
        )


@dataclass(frozen=True)
class Shaping:
    """Potential shaping ``Phi(x) = x + eps * x**2`` (``eps = 0`` is the identity)."""

    eps: float = 0.0

    def __call__(self, x):
        return x + self.eps * x * x

    def derivative(self, x):
        return 1.0 + 2.0 * self.eps * x


def _check_spd(name: str, A, shape) -> np.ndarray:
    A = np.asarray(A, dtype=float)
    if A.shape != shape:
        raise GainValidationError(name, f"expected shape {shape}, got {A.shape}")
    if not np.isfinite(A).all():
        raise GainValidationError(name, "entries must be finite")
    if not np.allclose(A, A.T, rtol=0.0, atol=1e-12 * max(1.0, np.abs(A).max())):
        raise GainValidationError(name, "must be symmetric")
    lam = np.linalg.eigvalsh(A).min()
    if not lam > 0.0:
        raise GainValidationError(name, f"must be positive definite (min eigenvalue {lam:.3g})")
    return np.ascontiguousarray(A)


@dataclass
class EstimatorGains:
    J: np.ndarray
    M: np.ndarray
    Dr: np.ndarray
    Dt: np.ndarray
    kappa: float = 1.0
    W: np.ndarray | None = None  # identity when None
    phi: Shaping = field(default_factory=Shaping)

    def __post_init__(self):
        self.J = _check_spd("J", self.J, (3, 3))
        self.M = _check_spd("M", self.M, (3, 3))
        self.Dr = _check_spd("Dr", self.Dr, (3, 3))
        self.Dt = _check_spd("Dt", self.Dt, (3, 3))
        try:
            self.kappa = float(self.kappa)
        except (TypeError, ValueError):
            raise GainValidationError("kappa", "must be a positive scalar") from None
        if not (math.isfinite(self.kappa) and self.kappa > 0):
            raise GainValidationError("kappa", "must be a positive scalar")
        if self.W is not None:
            W = np.asarray(self.W, dtype=float)
            if W.ndim != 2 or W.shape[0] != W.shape[1]:
                raise GainValidationError("W", "must be square")
            self.W = _check_spd("W", W, W.shape)
        if not isinstance(self.phi, Shaping) or not math.isfinite(self.phi.eps):
            raise GainValidationError("phi", "must be a Shaping with finite eps")
        xs = np.linspace(0.0, 100.0, 201)
        if self.phi(0.0) != 0.0 or np.min(self.phi.derivative(xs)) <= 0.0:
            raise GainValidationError("phi", "need Phi(0) = 0 and Phi' > 0 on [0, inf)")
        self.Jcal = 0.5 * np.trace(self.J) * np.eye(3) - self.J
        self.Jbb = np.zeros((6, 6))
        self.Jbb[:3, :3] = self.J
        self.Jbb[3:, 3:] = self.M
        self.Dbb = np.zeros((6, 6))
        self.Dbb[:3, :3] = self.Dr
        self.Dbb[3:, 3:] = self.Dt
        self._step_cache: dict = {}

    def weight(self, beta: int) -> np.ndarray:
        if self.W is None:
            return np.eye(beta)
        if self.W.shape != (beta, beta):
            raise GainValidationError("W", f"expected {beta}x{beta} for {beta} feature pairs")
        return self.W

    def step_inverses(self, dt: float):
        """``(J + dt Dr)^-1`` and ``(M + dt Dt)^-1``, cached per step size."""
        inv = self._step_cache.get(dt)
        if inv is None:
            inv = (np.linalg.inv(self.J + dt * self.Dr), np.linalg.inv(self.M + dt * self.Dt))
            self._step_cache[dt] = inv
        return inv


@dataclass
class EstimatorState:
    g_hat: Pose
    phi: np.ndarray  # [omega; upsilon] velocity estimation error
    xi_hat: np.ndarray = field(default_factory=lambda: np.zeros(6))
    newton_iterations: int = 0
    newton_residual: float = 0.0

    def __post_init__(self):
        self.phi = np.ascontiguousarray(self.phi, dtype=float).reshape(6)
        self.xi_hat = np.ascontiguousarray(self.xi_hat, dtype=float).reshape(6)

    @property
    def omega(self) -> np.ndarray:
        return self.phi[:3]

    @property
    def upsilon(self) -> np.ndarray:
        return self.phi[3:]


@dataclass(frozen=True)
class NewtonConfig:
    tolerance: float = 1e-12
    max_iterations: int = 50

    def __post_init__(self):
        if not self.tolerance > 0:
            raise ValueError("tolerance must be positive")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be at least 1")


class NewtonResult(NamedTuple):
    F: np.ndarray
    iterations: int
    residual: float


# ---------------------------------------------------------------- kernels


@njit(cache=True)
def _wahba(R, L, D, W):
    E = D - R @ L
    return 0.5 * np.sum(E * (E @ W))


@njit(cache=True)
def _s_gamma(R, L, D, W):
    A = D @ W @ L.T @ R.T
    return _vex(A - A.T)


@njit(cache=True)
def _inv_ad_apply(R, b, zeta):
    # Ad_{g^-1} zeta = [R^T w; R^T (v - b x w)]
    w = zeta[:3]
    out = np.empty(6)
    out[:3] = R.T @ w
    out[3:] = R.T @ (zeta[3:] - _cross(b, w))
    return out


@njit(cache=True)
def _newton(omega, J, Jcal, dt, tol, maxit):
    target = dt * (J @ omega)
    F = _exp_so3(dt * omega)
    root2 = math.sqrt(2.0)
    res = 0.0
    for it in range(maxit + 1):
        A = F @ Jcal
        r = target - _vex(A - A.T)
        res = root2 * math.sqrt(r[0] * r[0] + r[1] * r[1] + r[2] * r[2])
        if res <= tol:
            return F, it, res, True
        if it == maxit:
            break
        # d/d(delta) vex(F e^delta Jcal - ...) at delta = 0 is (tr(A) I - A) F
        jac = (np.trace(A) * np.eye(3) - A) @ F
        F = F @ _exp_so3(np.linalg.solve(jac, r))
    return F, maxit, res, False


@njit(cache=True)
def _lgvi(R, b, phi, xi_m, L1, abar1, D, W, pbar, J, M, Jcal, inv_rot, inv_tr, kappa, eps, dt, tol, maxit):
    omega = phi[:3]
    ups = phi[3:]
    xi_hat = xi_m - _inv_ad_apply(R, b, phi)
    dR, db = _exp_se3(xi_hat, dt)
    R1 = R @ dR
    b1 = R @ db + b
    F, it, res, ok = _newton(omega, J, Jcal, dt, tol, maxit)
    Ft = F.T
    q = b1 + R1 @ abar1
    ups1 = inv_tr @ (Ft @ (M @ ups) + dt * kappa * (q - pbar))
    dphi = 1.0 + 2.0 * eps * _wahba(R1, L1, D, W)
    rhs = (Ft @ (J @ omega) + dt * _cross(M @ ups1, ups1)
           + dt * kappa * _cross(pbar, q) - dt * dphi * _s_gamma(R1, L1, D, W))
    phi1 = np.empty(6)
    phi1[:3] = inv_rot @ rhs
    phi1[3:] = ups1
    return R1, b1, phi1, xi_hat, it, res, ok


@njit(cache=True)
def _lgvi_run(R0, b0, phi0, xi_m, L, abar, D, W, pbar, J, M, Jcal, inv_rot, inv_tr, kappa, eps, dt, tol, maxit):
    # step k maps state k to k+1 using xi_m[k] and measurements L[k], abar[k] (taken at k+1)
    n = xi_m.shape[0]
    Rs = np.empty((n + 1, 3, 3))
    bs = np.empty((n + 1, 3))
    phis = np.empty((n + 1, 6))
    xis = np.zeros((n, 6))
    its = np.zeros(n, dtype=np.int64)
    ress = np.zeros(n)
    Rs[0] = R0
    bs[0] = b0
    phis[0] = phi0
    for k in range(n):
        R1, b1, p1, xh, it, res, ok = _lgvi(Rs[k], bs[k], phis[k], xi_m[k], L[k], abar[k], D, W, pbar,
                                            J, M, Jcal, inv_rot, inv_tr, kappa, eps, dt, tol, maxit)
        xis[k] = xh
        its[k] = it
        ress[k] = res
        if not ok:
            return Rs[:k + 1], bs[:k + 1], phis[:k + 1], xis[:k + 1], its[:k + 1], ress[:k + 1], k
        Rs[k + 1] = R1
        bs[k + 1] = b1
        phis[k + 1] = p1
    return Rs, bs, phis, xis, its, ress, -1


@njit(cache=True)
def _rhs(R, b, phi, xi_m, L, abar, D, W, pbar, J, M, Jinv, Minv, Dr, Dt, kappa, eps):
    omega = phi[:3]
    ups = phi[3:]
    y = pbar - R @ abar - b
    dphi = 1.0 + 2.0 * eps * _wahba(R, L, D, W)
    ztop = dphi * _s_gamma(R, L, D, W) + kappa * _cross(pbar, y)
    Jw = J @ omega
    Mu = M @ ups
    # ad*_phi (Jbb phi) = [Jw x w + Mu x u; Mu x w]
    phi_dot = np.empty(6)
    phi_dot[:3] = Jinv @ (_cross(Jw, omega) + _cross(Mu, ups) - ztop - Dr @ omega)
    phi_dot[3:] = Minv @ (_cross(Mu, omega) - kappa * y - Dt @ ups)
    xi_hat = xi_m - _inv_ad_apply(R, b, phi)
    return phi_dot, xi_hat


@njit(cache=True)
def _dexpinv(u, x):
    # u' for g = g0 exp(u) with g^-1 g' = x; series truncated after the ad^2 term
    ax = np.empty(6)
    ax[:3] = _cross(u[:3], x[:3])
    ax[3:] = _cross(u[3:], x[:3]) + _cross(u[:3], x[3:])
    aax = np.empty(6)
    aax[:3] = _cross(u[:3], ax[:3])
    aax[3:] = _cross(u[3:], ax[:3]) + _cross(u[:3], ax[3:])
    return x + 0.5 * ax + aax / 12.0


@njit(cache=True)
def _compose_exp(R0, b0, u):
    dR, db = _exp_se3(u, 1.0)
    return R0 @ dR, R0 @ db + b0


@njit(cache=True)
def _rk4(R0, b0, phi0, xi_m, L0, a0, Lh, ah, L1, a1, D, W, pbar, J, M, Jinv, Minv, Dr, Dt, kappa, eps, dt):
    # Runge-Kutta-Munthe-Kaas: stages in the exponential chart at g0
    k1p, x1 = _rhs(R0, b0, phi0, xi_m, L0, a0, D, W, pbar, J, M, Jinv, Minv, Dr, Dt, kappa, eps)
    k1u = x1
    u = 0.5 * dt * k1u
    R, b = _compose_exp(R0, b0, u)
    k2p, x2 = _rhs(R, b, phi0 + 0.5 * dt * k1p, xi_m, Lh, ah, D, W, pbar, J, M, Jinv, Minv, Dr, Dt, kappa, eps)
    k2u = _dexpinv(u, x2)
    u = 0.5 * dt * k2u
    R, b = _compose_exp(R0, b0, u)
    k3p, x3 = _rhs(R, b, phi0 + 0.5 * dt * k2p, xi_m, Lh, ah, D, W, pbar, J, M, Jinv, Minv, Dr, Dt, kappa, eps)
    k3u = _dexpinv(u, x3)
    u = dt * k3u
    R, b = _compose_exp(R0, b0, u)
    k4p, x4 = _rhs(R, b, phi0 + dt * k3p, xi_m, L1, a1, D, W, pbar, J, M, Jinv, Minv, Dr, Dt, kappa, eps)
    k4u = _dexpinv(u, x4)
    u = dt / 6.0 * (k1u + 2.0 * k2u + 2.0 * k3u + k4u)
    R, b = _compose_exp(R0, b0, u)
    return R, b, phi0 + dt / 6.0 * (k1p + 2.0 * k2p + 2.0 * k3p + k4p), x1


@njit(cache=True)
def _rk4_run(R0, b0, phi0, xi_m, L, abar, D, W, pbar, J, M, Jinv, Minv, Dr, Dt, kappa, eps, dt):
    # L, abar sampled every dt/2: step k uses indices 2k, 2k+1, 2k+2
    n = xi_m.shape[0]
    Rs = np.empty((n + 1, 3, 3))
    bs = np.empty((n + 1, 3))
    phis = np.empty((n + 1, 6))
    xis = np.empty((n, 6))
    Rs[0] = R0
    bs[0] = b0
    phis[0] = phi0
    for k in range(n):
        i = 2 * k
        R1, b1, p1, xh = _rk4(Rs[k], bs[k], phis[k], xi_m[k], L[i], abar[i], L[i + 1], abar[i + 1],
                              L[i + 2], abar[i + 2], D, W, pbar, J, M, Jinv, Minv, Dr, Dt, kappa, eps, dt)
        Rs[k + 1] = R1
        bs[k + 1] = b1
        phis[k + 1] = p1
        xis[k] = xh
    return Rs, bs, phis, xis


@njit(cache=True)
def _potential_series(R, b, L, abar, D, W, pbar, kappa, eps):
    n = R.shape[0]
    out = np.empty(n)
    for k in range(n):
        Ur = _wahba(R[k], L[k], D, W)
        y = pbar - R[k] @ abar[k] - b[k]
        out[k] = Ur + eps * Ur * Ur + 0.5 * kappa * (y[0] * y[0] + y[1] * y[1] + y[2] * y[2])
    return out


# ---------------------------------------------------------------- potentials


def adjoint_apply(g: Pose, zeta) -> np.ndarray:
    """``Ad_g @ zeta`` without forming the 6x6 matrix."""
    w = g.R @ zeta[:3]
    return np.concatenate([w, cross3(g.b, w) + g.R @ zeta[3:]])


def inverse_adjoint_apply(g: Pose, zeta) -> np.ndarray:
    """``Ad_{g^-1} @ zeta``."""
    return _inv_ad_apply(g.R, g.b, np.ascontiguousarray(zeta, dtype=float))


def wahba_cost(g_hat: Pose, L_meas, D, W) -> float:
    E = D - g_hat.R @ L_meas
    return 0.5 * float(np.sum(E * (E @ W)))


def translational_potential(g_hat: Pose, a_bar, p_bar, kappa: float):
    """Returns ``(0.5 * kappa * |y|^2, y)`` with ``y = p_bar - R_hat a_bar - b_hat``."""
    y = p_bar - g_hat.R @ a_bar - g_hat.b
    return 0.5 * kappa * float(y @ y), y


def total_potential(g_hat: Pose, L_meas, D, a_bar, p_bar, gains: EstimatorGains) -> float:
    W = gains.weight(D.shape[1])
    Ut, _ = translational_potential(g_hat, a_bar, p_bar, gains.kappa)
    return gains.phi(wahba_cost(g_hat, L_meas, D, W)) + Ut


def s_gamma(g_hat: Pose, L_meas, D, W) -> np.ndarray:
    """``vex(D W L^T R^T - R L W D^T)``."""
    A = D @ W @ L_meas.T @ g_hat.R.T
    B = g_hat.R @ L_meas @ W @ D.T
    return vex(A - B)


def z_vector(g_hat: Pose, L_meas, D, a_bar, p_bar, gains: EstimatorGains) -> np.ndarray:
    """Gradient of the total potential, stacked ``[rotational; translational]``.

    The perturbation is ``g_hat <- exp(-eps * eta) g_hat``, i.e. the error
    ``h = g g_hat^-1`` moves to ``h exp(eps * eta)``.
    """
    W = gains.weight(D.shape[1])
    _, y = translational_potential(g_hat, a_bar, p_bar, gains.kappa)
    dphi = gains.phi.derivative(wahba_cost(g_hat, L_meas, D, W))
    top = dphi * s_gamma(g_hat, L_meas, D, W) + gains.kappa * cross3(p_bar, y)
    return np.concatenate([top, gains.kappa * y])


def kinetic_energy(phi, gains: EstimatorGains):
    """``0.5 phi^T blkdiag(J, M) phi``; accepts a single 6-vector or a stack."""
    phi = np.asarray(phi, dtype=float)
    return 0.5 * np.einsum("...i,ij,...j->...", phi, gains.Jbb, phi)


def energy(state: EstimatorState, frame: MeasurementFrame, ref: KnownReference, gains: EstimatorGains) -> float:
    """Kinetic-like ``0.5 phi^T blkdiag(J, M) phi`` plus the total potential."""
    kin = float(kinetic_energy(state.phi, gains))
    return kin + total_potential(state.g_hat, frame.L_meas, ref.D, frame.a_bar, ref.p_bar, gains)


def potential_series(R, b, L, a_bar, ref: KnownReference, gains: EstimatorGains) -> np.ndarray:
    """Total potential for stacks of poses and matching measurement arrays."""
    W = gains.weight(ref.D.shape[1])
    return _potential_series(np.ascontiguousarray(R), np.ascontiguousarray(b), np.ascontiguousarray(L),
                             np.ascontiguousarray(a_bar), ref.D, W, ref.p_bar, gains.kappa, gains.phi.eps)


# ---------------------------------------------------------------- continuous filter


def _rhs_args(ref: KnownReference, gains: EstimatorGains):
    W = gains.weight(ref.D.shape[1])
    return (np.ascontiguousarray(ref.D), W, ref.p_bar, gains.J, gains.M, np.linalg.inv(gains.J),
            np.linalg.inv(gains.M), gains.Dr, gains.Dt, gains.kappa, gains.phi.eps)


def continuous_rhs(state: EstimatorState, xi_meas, frame: MeasurementFrame, ref: KnownReference,
                   gains: EstimatorGains):
    """Returns ``(phi_dot, xi_hat)``; the pose rate is ``g_hat @ wedge(xi_hat)``."""
    g = state.g_hat
    return _rhs(g.R, g.b, state.phi, np.ascontiguousarray(xi_meas, dtype=float),
                np.ascontiguousarray(frame.L_meas), frame.a_bar, *_rhs_args(ref, gains))


StageInputs = Callable[[float], tuple]


def rk4_step(state: EstimatorState, inputs: StageInputs, gains: EstimatorGains, t: float, dt: float) -> EstimatorState:
    """Runge-Kutta-Munthe-Kaas step of order 4 for the continuous filter.

    ``inputs(t)`` returns ``(frame, ref)`` at time ``t``. The measured twist is
    held at its value from ``t`` over the whole step.
    """
    if not dt > 0:
        raise ValueError("dt must be positive")
    (f0, ref), (fh, _), (f1, _) = inputs(t), inputs(t + 0.5 * dt), inputs(t + dt)
    g = state.g_hat
    R, b, phi, xh = _rk4(g.R, g.b, state.phi, np.ascontiguousarray(f0.xi_meas, dtype=float),
                         np.ascontiguousarray(f0.L_meas), f0.a_bar, np.ascontiguousarray(fh.L_meas), fh.a_bar,
                         np.ascontiguousarray(f1.L_meas), f1.a_bar, *_rhs_args(ref, gains), float(dt))
    return EstimatorState(Pose(R, b), phi, xh)


# ---------------------------------------------------------------- discrete filter


def newton_solve_F(omega, J, dt: float, cfg: NewtonConfig = NewtonConfig(), Jcal=None) -> NewtonResult:
    """Solve ``dt * hat(J omega) = F Jcal - Jcal F^T`` for ``F`` in SO(3).

    ``Jcal = tr(J)/2 * I - J``. Iterates in the exponential chart at the current
    iterate, ``F <- F exp(hat(delta))``, starting from ``exp(hat(dt * omega))``;
    the Jacobian is exact.
    """
    if not dt > 0:
        raise ValueError("dt must be positive")
    J = np.ascontiguousarray(J, dtype=float)
    if Jcal is None:
        Jcal = 0.5 * np.trace(J) * np.eye(3) - J
    F, it, res, ok = _newton(np.ascontiguousarray(omega, dtype=float), J, np.ascontiguousarray(Jcal),
                             float(dt), cfg.tolerance, cfg.max_iterations)
    if not ok:
        raise NewtonConvergenceError(res, it)
    return NewtonResult(F, it, res)


def _kernel_args(ref: KnownReference, gains: EstimatorGains, dt: float, newton: NewtonConfig):
    inv_rot, inv_tr = gains.step_inverses(dt)
    W = gains.weight(ref.D.shape[1])
    return (np.ascontiguousarray(ref.D), W, ref.p_bar, gains.J, gains.M, gains.Jcal, inv_rot, inv_tr,
            gains.kappa, gains.phi.eps, float(dt), newton.tolerance, newton.max_iterations)


def lgvi_step(state: EstimatorState, xi_meas, frame_next: MeasurementFrame, ref_next: KnownReference,
              gains: EstimatorGains, dt: float, newton: NewtonConfig = NewtonConfig()) -> EstimatorState:
    """One step of the discrete filter.

    Order: estimated twist, pose update, Newton solve for ``F``, then the
    implicit translational and rotational velocity-error updates, which use
    the new pose and the measurements at ``i + 1``.
    """
    if not dt > 0:
        raise ValueError("dt must be positive")
    g = state.g_hat
    R1, b1, phi1, xi_hat, it, res, ok = _lgvi(
        g.R, g.b, state.phi, np.ascontiguousarray(xi_meas, dtype=float),
        np.ascontiguousarray(frame_next.L_meas), frame_next.a_bar, *_kernel_args(ref_next, gains, dt, newton))
    if not ok:
        raise NewtonConvergenceError(res, it)
    return EstimatorState(Pose(R1, b1), phi1, xi_hat, it, res)


@dataclass
class Trajectory:
    """Estimator states ``0..n`` as arrays. ``xi_hat[k]``, ``newton_*[k]`` belong to step ``k``."""

    R: np.ndarray  # (n+1, 3, 3)
    b: np.ndarray  # (n+1, 3)
    phi: np.ndarray  # (n+1, 6)
    xi_hat: np.ndarray  # (n, 6)
    newton_iterations: np.ndarray  # (n,)
    newton_residual: np.ndarray  # (n,)

    def __len__(self):
        return self.R.shape[0]

    def __getitem__(self, k: int) -> EstimatorState:
        k = range(len(self))[k]
        j = min(k, len(self.xi_hat) - 1)
        xi = self.xi_hat[j] if j >= 0 else np.zeros(6)
        its = int(self.newton_iterations[j]) if j >= 0 and len(self.newton_iterations) else 0
        res = float(self.newton_residual[j]) if j >= 0 and len(self.newton_residual) else 0.0
        return EstimatorState(Pose(self.R[k], self.b[k]), self.phi[k].copy(), xi.copy(), its, res)

    @property
    def final(self) -> EstimatorState:
        return self[-1]


def run_lgvi(initial: EstimatorState, stream: MeasurementStream, ref: KnownReference, gains: EstimatorGains,
             dt: float, newton: NewtonConfig = NewtonConfig()) -> Trajectory:
    """LGVI over a stream of ``n`` frames, returning ``n`` states."""
    g = initial.g_hat
    Rs, bs, phis, xis, its, ress, fail = _lgvi_run(
        g.R, g.b, initial.phi, np.ascontiguousarray(stream.xi_meas[:-1]),
        np.ascontiguousarray(stream.L_meas[1:]), np.ascontiguousarray(stream.a_bar[1:]),
        *_kernel_args(ref, gains, dt, newton))
    if fail >= 0:
        raise NewtonConvergenceError(float(ress[fail]), int(its[fail]), step=int(fail))
    return Trajectory(Rs, bs, phis, xis, its, ress)


def run_rk4(initial: EstimatorState, stream: MeasurementStream, ref: KnownReference, gains: EstimatorGains,
            dt: float, half_stream: MeasurementStream | None = None) -> Trajectory:
    """RK4 reference over ``stream``.

    ``half_stream`` supplies measurements every ``dt / 2`` (length ``2n - 1``)
    for the intermediate stages. Without it the midpoint frame is the average
    of its neighbours. The measured twist is held over each step.
    """
    n = len(stream)
    if half_stream is None:
        L = np.empty((2 * n - 1,) + stream.L_meas.shape[1:])
        abar = np.empty((2 * n - 1, 3))
        L[::2], abar[::2] = stream.L_meas, stream.a_bar
        L[1::2] = 0.5 * (stream.L_meas[:-1] + stream.L_meas[1:])
        abar[1::2] = 0.5 * (stream.a_bar[:-1] + stream.a_bar[1:])
    else:
        if len(half_stream) != 2 * n - 1:
            raise ValueError(f"half-step stream needs {2 * n - 1} frames, got {len(half_stream)}")
        L, abar = half_stream.L_meas, half_stream.a_bar
    g = initial.g_hat
    Rs, bs, phis, xis = _rk4_run(g.R, g.b, initial.phi, np.ascontiguousarray(stream.xi_meas[:-1]),
                                 np.ascontiguousarray(L), np.ascontiguousarray(abar),
                                 *_rhs_args(ref, gains), float(dt))
    zeros = np.zeros(n - 1)
    return Trajectory(Rs, bs, phis, xis, zeros.astype(np.int64), zeros)


def run_estimator(initial: EstimatorState, frames: MeasurementStream | Sequence[MeasurementFrame],
                  ref: KnownReference, gains: EstimatorGains, dt: float, mode: str = "lgvi",
                  half_stream: MeasurementStream | None = None,
                  newton: NewtonConfig = NewtonConfig()) -> Trajectory:
    """Fold a stepper over frames uniformly spaced by ``dt``.

    Returns one state per frame: the initial one and one per step.
    """
    if not dt > 0:
        raise ValueError("dt must be positive")
    if mode not in ("lgvi", "rk4"):
        raise ValueError(f"unknown mode {mode!r}")
    stream = frames if isinstance(frames, MeasurementStream) else MeasurementStream.from_frames(list(frames))
    if len(stream) == 0:
        raise ValueError("measurement stream is empty")
    if mode == "lgvi":
        return run_lgvi(initial, stream, ref, gains, dt, newton)
    return run_rk4(initial, stream, ref, gains, dt, half_stream)


def with_phi(state: EstimatorState, phi) -> EstimatorState:
    return replace(state, phi=np.asarray(phi, dtype=float))
