"""Two-vehicle relative-motion scenario: truth generation, measurement synthesis,
estimator driving and error metrics.

Runs are processed in fixed-size chunks so that very long simulations keep a
bounded memory footprint; within a chunk everything is vectorised over time.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from . import estimator as est
from .liegroup import Pose, _advance, _propagate, exp_so3, principal_angle, principal_angles
from .measurement import (
    FeatureSet,
    KnownReference,
    MeasurementStream,
    NoiseSpec,
    PointVelocityFilter,
    sample_bump,
)

# initial conditions and gains of the published two-UAV run
PAPER_FEATURES = np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, -1.0, 0.0]])
PAPER_B0 = np.array([1.5, 5.0, 6.0])
PAPER_NU0 = np.array([0.08, -0.003, -0.0007])
PAPER_RHAT0_ROTVEC = (math.pi / 4.0) * np.array([0.0, 0.0, 1.0])
PAPER_BHAT0 = np.array([-3.0, 2.0, 4.0])
PAPER_OMEGAHAT0 = np.array([0.1, -0.5, 0.05])
PAPER_NUHAT0 = np.array([0.05, -0.09, 0.01])
PAPER_J = np.diag([0.9, 0.6, 0.3])
PAPER_M = np.diag([0.0608, 0.0486, 0.0365])
PAPER_DR = np.diag([2.7, 2.2, 1.5])
PAPER_DT = np.diag([0.1, 0.12, 0.14])

CHUNK_STEPS = 4096


@dataclass(frozen=True)
class TwistProfile:
    """Relative twist of the observed vehicle: ``xi0 + amplitude * sin(2 pi f t)``.

    The truth integrator holds the sampled twist constant over each step.
    """

    xi0: np.ndarray = field(default_factory=lambda: np.concatenate([np.zeros(3), PAPER_NU0]))
    kind: str = "constant"
    amplitude: np.ndarray = field(default_factory=lambda: np.zeros(6))
    frequency_hz: float = 0.0

    def __post_init__(self):
        if self.kind not in ("constant", "sinusoid"):
            raise ValueError(f"unknown twist profile {self.kind!r}")
        object.__setattr__(self, "xi0", np.asarray(self.xi0, dtype=float).reshape(6))
        object.__setattr__(self, "amplitude", np.asarray(self.amplitude, dtype=float).reshape(6))
        if not (np.isfinite(self.xi0).all() and np.isfinite(self.amplitude).all()):
            raise ValueError("twist profile must be finite")

    def __call__(self, t):
        """Twist at time(s) ``t``; returns shape ``(6,)`` or ``(len(t), 6)``."""
        t = np.asarray(t, dtype=float)
        base = np.broadcast_to(self.xi0, t.shape + (6,))
        if self.kind == "constant":
            return base.copy()
        s = np.sin(2.0 * math.pi * self.frequency_hz * t)[..., None]
        return base + self.amplitude * s


@dataclass
class ScenarioConfig:
    duration: float = 10.0
    dt: float = 0.01
    features: FeatureSet = field(default_factory=lambda: FeatureSet(PAPER_FEATURES))
    R0: np.ndarray = field(default_factory=lambda: np.eye(3))
    b0: np.ndarray = field(default_factory=lambda: PAPER_B0.copy())
    profile: TwistProfile = field(default_factory=TwistProfile)
    noise: NoiseSpec = field(default_factory=NoiseSpec)
    gains: est.EstimatorGains = field(default_factory=lambda: paper_gains())
    Rhat0: np.ndarray = field(default_factory=lambda: exp_so3(PAPER_RHAT0_ROTVEC))
    bhat0: np.ndarray = field(default_factory=lambda: PAPER_BHAT0.copy())
    xihat0: np.ndarray = field(default_factory=lambda: np.concatenate([PAPER_OMEGAHAT0, PAPER_NUHAT0]))
    seed: int = 0
    velocity_source: str = "filter"  # or "truth": point velocities from the true twist
    filter_cutoff_hz: float = 10.0
    newton: est.NewtonConfig = field(default_factory=est.NewtonConfig)

    def __post_init__(self):
        if not (math.isfinite(self.duration) and self.duration > 0):
            raise ValueError("duration must be positive")
        if not (math.isfinite(self.dt) and self.dt > 0):
            raise ValueError("dt must be positive")
        n = self.duration / self.dt
        if abs(n - round(n)) > 1e-6 * max(1.0, n):
            raise ValueError("duration must be an integer multiple of dt")
        if self.velocity_source not in ("filter", "truth"):
            raise ValueError(f"unknown velocity source {self.velocity_source!r}")
        if not self.filter_cutoff_hz > 0:
            raise ValueError("filter cutoff must be positive")
        self.R0 = np.asarray(self.R0, dtype=float).reshape(3, 3)
        self.b0 = np.asarray(self.b0, dtype=float).reshape(3)
        self.Rhat0 = np.asarray(self.Rhat0, dtype=float).reshape(3, 3)
        self.bhat0 = np.asarray(self.bhat0, dtype=float).reshape(3)
        self.xihat0 = np.asarray(self.xihat0, dtype=float).reshape(6)

    @property
    def steps(self) -> int:
        return int(round(self.duration / self.dt))


def paper_gains(kappa: float = 1.0, phi: est.Shaping | None = None) -> est.EstimatorGains:
    return est.EstimatorGains(PAPER_J, PAPER_M, PAPER_DR, PAPER_DT, kappa=kappa, phi=phi or est.Shaping())


def paper_config(**overrides) -> ScenarioConfig:
    """The published two-UAV configuration (1 mm bump noise, 10 s at 0.01 s)."""
    return ScenarioConfig(**overrides)


@dataclass
class Truth:
    times: np.ndarray  # (n+1,)
    R: np.ndarray  # (n+1, 3, 3)
    b: np.ndarray  # (n+1, 3)
    twists: np.ndarray  # (n+1, 6), twist held over [t_i, t_i+1)

    def __len__(self):
        return len(self.times)

    def pose(self, i: int) -> Pose:
        return Pose(self.R[i], self.b[i])


def _truth_segment(config: ScenarioConfig, R0, b0, k0: int, count: int):
    """Truth samples ``k0 .. k0 + count`` starting from pose ``(R0, b0)`` at sample ``k0``."""
    times = (k0 + np.arange(count + 1)) * config.dt
    twists = np.ascontiguousarray(config.profile(times))
    R, b = _propagate(np.ascontiguousarray(R0), np.ascontiguousarray(b0), twists[:-1], config.dt)
    return times, R, b, twists


def generate_truth(config: ScenarioConfig, steps: int | None = None) -> Truth:
    """Samples ``0..steps`` of the relative pose, each step an exact exponential of the held twist."""
    n = config.steps if steps is None else steps
    return Truth(*_truth_segment(config, config.R0, config.b0, 0, n))


def initial_state(config: ScenarioConfig, xi_meas0) -> est.EstimatorState:
    """``phi0 = Ad_ghat0 (xi_meas0 - xihat0)``."""
    g_hat = Pose(config.Rhat0, config.bhat0)
    phi = est.adjoint_apply(g_hat, np.asarray(xi_meas0, dtype=float) - config.xihat0)
    return est.EstimatorState(g_hat, phi, config.xihat0.copy())


def initial_estimate_from_paper(xi_meas0=None) -> est.EstimatorState:
    """Published initial estimate; the measured twist defaults to the true initial twist."""
    cfg = ScenarioConfig()
    return initial_state(cfg, cfg.profile(0.0) if xi_meas0 is None else xi_meas0)


def _project(points, R, b) -> np.ndarray:
    """Noise-free ``a_j = R^T (p_j - b)`` for stacks of poses; shape ``(T, n, 3)``."""
    return np.einsum("tjk,tki->tji", points[None] - b[:, None], R)


class MeasurementSynthesizer:
    """Turns truth samples into measurement streams, carrying filter and RNG state across chunks."""

    def __init__(self, config: ScenarioConfig):
        self.config = config
        pos_seq, vel_seq = np.random.SeedSequence(config.seed).spawn(2)
        self.rng_pos = np.random.default_rng(pos_seq)
        self.rng_vel = np.random.default_rng(vel_seq)
        self.filter = PointVelocityFilter(config.dt, config.filter_cutoff_hz)

    def __call__(self, times, R, b, twists) -> MeasurementStream:
        cfg = self.config
        pts = cfg.features.points
        a_true = _project(pts, R, b)
        a_meas = a_true + sample_bump(cfg.noise.support_width, a_true.shape, self.rng_pos)
        vel_noise = sample_bump(cfg.noise.velocity_support_width, a_true.shape, self.rng_vel)
        if cfg.velocity_source == "truth":
            w, nu = twists[:, None, :3], twists[:, None, 3:]
            v = np.cross(a_true, np.broadcast_to(w, a_true.shape)) - nu + vel_noise
            xi = twists if cfg.noise.velocity_support_width == 0.0 else None
            return MeasurementStream.from_arrays(times, a_meas, v, xi)
        v = self.filter.update_batch(a_meas) + vel_noise
        return MeasurementStream.from_arrays(times, a_meas, v)


def midpoint_stream(config: ScenarioConfig, stream: MeasurementStream, R, b, twists) -> MeasurementStream:
    """Frames every ``dt / 2`` for the RK4 stages, interleaving ``stream`` with midpoints.

    A midpoint frame projects the exact truth pose at ``t + dt / 2`` and adds
    the mean of the neighbouring position-noise samples. ``R``, ``b`` and
    ``twists`` are the truth samples matching ``stream``.
    """
    pts = config.features.points
    noise = stream.a_meas - _project(pts, R, b)
    Rm, bm = _advance(np.ascontiguousarray(R[:-1]), np.ascontiguousarray(b[:-1]),
                      np.ascontiguousarray(twists[:-1]), 0.5 * config.dt)
    n = len(stream)
    a = np.empty((2 * n - 1,) + stream.a_meas.shape[1:])
    a[::2] = stream.a_meas
    a[1::2] = _project(pts, Rm, bm) + 0.5 * (noise[:-1] + noise[1:])
    t = np.empty(2 * n - 1)
    t[::2] = stream.t
    t[1::2] = stream.t[:-1] + 0.5 * config.dt
    return MeasurementStream.from_arrays(t, a, np.zeros_like(a), np.zeros((2 * n - 1, 6)))


def synthesize_stream(config: ScenarioConfig, truth: Truth) -> MeasurementStream:
    """Measurement stream for a whole truth run, drawn in a single batch."""
    return MeasurementSynthesizer(config)(truth.times, truth.R, truth.b, truth.twists)


class ErrorMetrics(NamedTuple):
    attitude: float
    position: np.ndarray  # b - Q b_hat
    position_raw: np.ndarray  # b - b_hat
    omega: np.ndarray
    nu: np.ndarray


def error_metrics(g: Pose, xi, g_hat: Pose, xi_hat) -> ErrorMetrics:
    Q = g.R @ g_hat.R.T
    dxi = np.asarray(xi, dtype=float) - np.asarray(xi_hat, dtype=float)
    return ErrorMetrics(principal_angle(Q), g.b - Q @ g_hat.b, g.b - g_hat.b, dxi[:3], dxi[3:])


def _batch_metrics(R, b, xi, R_hat, b_hat, xi_hat) -> ErrorMetrics:
    Q = R @ R_hat.transpose(0, 2, 1)
    dxi = xi - xi_hat
    return ErrorMetrics(principal_angles(Q), b - np.einsum("tij,tj->ti", Q, b_hat), b - b_hat,
                        dxi[:, :3], dxi[:, 3:])


def orthonormality_errors(R) -> np.ndarray:
    """``|R_k^T R_k - I|_F`` for a stack of matrices."""
    E = np.einsum("tki,tkj->tij", R, R) - np.eye(3)
    return np.sqrt(np.einsum("tij,tij->t", E, E))


@dataclass
class RunRecord:
    """Per-step series; row ``i`` is the state at ``t_i`` and the step taken from it.

    ``energy`` pairs the velocity error and pose estimate of the same row.
    ``energy_staggered`` pairs the velocity error of row ``i`` with the pose
    estimate (and measurements) of ``i + 1``.
    """

    time: np.ndarray
    R_true: np.ndarray
    b_true: np.ndarray
    R_hat: np.ndarray
    b_hat: np.ndarray
    attitude_error: np.ndarray
    position_error: np.ndarray
    position_error_raw: np.ndarray
    omega_error: np.ndarray
    nu_error: np.ndarray
    newton_iterations: np.ndarray
    newton_residual: np.ndarray
    energy: np.ndarray
    energy_staggered: np.ndarray
    final_state: est.EstimatorState
    final_errors: ErrorMetrics
    max_orthonormality_error: float
    mode: str = "lgvi"

    def __len__(self):
        return len(self.time)

    @property
    def position_error_norm(self) -> np.ndarray:
        return np.linalg.norm(self.position_error_raw, axis=1)

    @property
    def final_orthonormality_error(self) -> float:
        return float(orthonormality_errors(self.final_state.g_hat.R[None])[0])


def run_scenario(config: ScenarioConfig, mode: str = "lgvi", steps: int | None = None,
                 record_every: int = 1, chunk_steps: int = CHUNK_STEPS) -> RunRecord:
    """Simulate truth, measurements and the estimator; deterministic given ``config.seed``.

    Produces one row per step (every ``record_every``-th kept). The state after
    the last step is returned separately as ``final_state``.
    """
    if mode not in ("lgvi", "rk4"):
        raise ValueError(f"unknown mode {mode!r}")
    n = config.steps if steps is None else int(steps)
    if n < 1:
        raise ValueError("need at least one step")
    if record_every < 1 or chunk_steps < 1:
        raise ValueError("record_every and chunk_steps must be at least 1")
    ref = KnownReference.from_features(config.features)
    gains, dt = config.gains, config.dt
    synth = MeasurementSynthesizer(config)

    times, R, b, tw = _truth_segment(config, config.R0, config.b0, 0, 0)
    prev = synth(times, R, b, tw)  # frame 0
    truth_last = (R[-1], b[-1])
    state = initial_state(config, prev.xi_meas[0])
    keys = ("time", "R_true", "b_true", "R_hat", "b_hat", "att", "pos", "raw", "om", "nu",
            "its", "res", "energy", "stag")
    rows: dict[str, list] = {k: [] for k in keys}
    max_orth = float(orthonormality_errors(state.g_hat.R[None])[0])

    k0 = 0
    while k0 < n:
        m = min(chunk_steps, n - k0)
        times, R, b, tw = _truth_segment(config, truth_last[0], truth_last[1], k0, m)
        new = synth(times[1:], R[1:], b[1:], tw[1:])
        stream = MeasurementStream(
            times,
            np.concatenate([prev.a_meas[-1:], new.a_meas]),
            np.concatenate([prev.L_meas[-1:], new.L_meas]),
            np.concatenate([prev.a_bar[-1:], new.a_bar]),
            np.concatenate([prev.v_meas[-1:], new.v_meas]),
            np.concatenate([prev.xi_meas[-1:], new.xi_meas]),
        )
        try:
            half = midpoint_stream(config, stream, R, b, tw) if mode == "rk4" else None
            traj = est.run_estimator(state, stream, ref, gains, dt, mode, half_stream=half, newton=config.newton)
        except est.NewtonConvergenceError as exc:
            raise est.NewtonConvergenceError(exc.residual, exc.iterations, step=k0 + exc.step) from exc

        U = est.potential_series(traj.R, traj.b, stream.L_meas, stream.a_bar, ref, gains)
        kin = est.kinetic_energy(traj.phi[:-1], gains)
        max_orth = max(max_orth, float(orthonormality_errors(traj.R).max()))
        met = _batch_metrics(R[:-1], b[:-1], tw[:-1], traj.R[:-1], traj.b[:-1], traj.xi_hat)
        keep = np.flatnonzero((k0 + np.arange(m)) % record_every == 0)
        for key, arr in zip(keys, (times[:-1], R[:-1], b[:-1], traj.R[:-1], traj.b[:-1], met.attitude,
                                   met.position, met.position_raw, met.omega, met.nu,
                                   traj.newton_iterations, traj.newton_residual, kin + U[:-1], kin + U[1:])):
            rows[key].append(arr[keep])

        last = traj.final
        # twist estimate at the final sample, from the final velocity error
        xi_hat = stream.xi_meas[-1] - est.inverse_adjoint_apply(last.g_hat, last.phi)
        state = est.EstimatorState(last.g_hat, last.phi, xi_hat, last.newton_iterations, last.newton_residual)
        prev = stream
        truth_last = (R[-1], b[-1])
        k0 += m

    final_errors = error_metrics(Pose(*truth_last), tw[-1], state.g_hat, state.xi_hat)
    cat = {k: np.concatenate(v) for k, v in rows.items()}
    return RunRecord(
        time=cat["time"], R_true=cat["R_true"], b_true=cat["b_true"], R_hat=cat["R_hat"],
        b_hat=cat["b_hat"], attitude_error=cat["att"], position_error=cat["pos"],
        position_error_raw=cat["raw"], omega_error=cat["om"], nu_error=cat["nu"],
        newton_iterations=cat["its"].astype(np.int64), newton_residual=cat["res"],
        energy=cat["energy"], energy_staggered=cat["stag"], final_state=state,
        final_errors=final_errors, max_orthonormality_error=max_orth, mode=mode,
    )
