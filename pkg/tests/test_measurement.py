import math

import numpy as np
import pytest
from conftest import poses, random_pose, vec3, vec6
from hypothesis import given
from hypothesis import strategies as st
from scipy import integrate, stats

from varpose.liegroup import Pose
from varpose.measurement import (
    DegenerateGeometryError,
    FeatureSet,
    KnownReference,
    MeasurementStream,
    NoiseSpec,
    PointVelocityFilter,
    bump_density,
    extract_twist,
    extract_twist_batch,
    filter_point_velocities,
    make_frame,
    pairwise_matrix,
    point_velocity_matrix,
    project_features,
    sample_bump,
    sample_bump_noise,
    stack_velocity_system,
)
from varpose.scenario import PAPER_B0, PAPER_FEATURES


def forward_velocities(a, xi):
    """v_j = a_j x Omega - nu, written out without the G matrix."""
    return np.array([np.cross(aj, xi[:3]) - xi[3:] for aj in a])


def well_spread_points(rng, n=3):
    while True:
        a = rng.normal(scale=2.0, size=(n, 3))
        if np.linalg.svd(a[1:] - a[0], compute_uv=False)[-1 if n == 3 else 1] > 0.3:
            return a


class TestFeatures:
    def test_rejects_collinear(self):
        with pytest.raises(ValueError, match="collinear"):
            FeatureSet([[0, 0, 0], [1, 0, 0], [2, 0, 0]])

    def test_rejects_too_few(self):
        with pytest.raises(ValueError):
            FeatureSet([[0, 0, 0], [1, 0, 0]])

    def test_reference(self):
        ref = KnownReference.from_features(FeatureSet(PAPER_FEATURES))
        np.testing.assert_allclose(ref.p_bar, [1 / 3, 0, 0])
        assert ref.D.shape == (3, 3)


class TestProjection:
    def test_identity_pose(self):
        np.testing.assert_array_equal(project_features(Pose.identity(), PAPER_FEATURES), PAPER_FEATURES)

    def test_published_offset(self):
        a = project_features(Pose(np.eye(3), PAPER_B0), FeatureSet(PAPER_FEATURES))
        np.testing.assert_allclose(a[0], [-0.5, -5, -6])

    @given(poses())
    def test_forward_model_reconstructs(self, g):
        a = project_features(g, PAPER_FEATURES)
        np.testing.assert_allclose(a @ g.R.T + g.b, PAPER_FEATURES, atol=1e-12)

    @given(poses())
    def test_noise_free_pairwise_identity(self, g):
        D = pairwise_matrix(PAPER_FEATURES)
        L = pairwise_matrix(project_features(g, PAPER_FEATURES))
        np.testing.assert_allclose(L, g.R.T @ D, atol=1e-12)
        np.testing.assert_allclose(g.R @ L, D, atol=1e-12)


class TestPairwise:
    def test_published_features(self):
        D = pairwise_matrix(PAPER_FEATURES)
        np.testing.assert_array_equal(D.T, [[1, -1, 0], [1, 1, 0], [0, 2, 0]])

    def test_identical_points(self):
        assert np.array_equal(pairwise_matrix([[1, 2, 3], [1, 2, 3]]), np.zeros((3, 1)))

    def test_rejects_single(self):
        with pytest.raises(ValueError):
            pairwise_matrix([[1, 2, 3]])

    @pytest.mark.parametrize("n", [2, 3, 4, 6])
    def test_lexicographic_order(self, n, rng):
        V = rng.normal(size=(n, 3))
        cols = [V[i] - V[j] for i in range(n) for j in range(i + 1, n)]
        np.testing.assert_array_equal(pairwise_matrix(V), np.array(cols).T)
        assert pairwise_matrix(V).shape[1] == math.comb(n, 2)


class TestBumpNoise:
    def test_zero_width(self):
        assert np.array_equal(sample_bump_noise(NoiseSpec(0.0, 0.0), 50), np.zeros((50, 3)))

    def test_one_millimetre_support(self):
        x = sample_bump_noise(NoiseSpec(1e-3), 20000)
        assert x.shape == (20000, 3)
        assert np.all(np.abs(x) < 0.5e-3)

    def test_deterministic(self):
        np.testing.assert_array_equal(sample_bump_noise(NoiseSpec(1e-3, seed=7), 10),
                                      sample_bump_noise(NoiseSpec(1e-3, seed=7), 10))
        assert not np.array_equal(sample_bump_noise(NoiseSpec(1e-3, seed=7), 10),
                                  sample_bump_noise(NoiseSpec(1e-3, seed=8), 10))

    def test_rejects_negative_width(self):
        with pytest.raises(ValueError):
            NoiseSpec(-1.0)

    def test_mean_within_three_sigma(self):
        w, n = 1.0, 100_000
        x = sample_bump(w, n, np.random.default_rng(3))
        Z, _ = integrate.quad(bump_density, -w / 2, w / 2, args=(w,))
        var, _ = integrate.quad(lambda s: s * s * bump_density(s, w) / Z, -w / 2, w / 2)
        assert abs(x.mean()) < 3 * math.sqrt(var / n)
        assert abs(x.var() - var) < 0.02 * var

    def test_distribution_matches_density(self):
        w = 2.0
        Z, _ = integrate.quad(bump_density, -1, 1, args=(w,))
        grid = np.linspace(-1, 1, 2001)
        pdf = bump_density(grid, w) / Z
        cdf = np.concatenate([[0], np.cumsum(0.5 * (pdf[1:] + pdf[:-1]) * np.diff(grid))])
        x = sample_bump(w, 20_000, np.random.default_rng(11))
        res = stats.kstest(x, lambda s: np.interp(s, grid, cdf))
        assert res.pvalue > 1e-3

    def test_density_vanishes_outside(self):
        assert np.array_equal(bump_density([-1.0, -0.5, 0.5, 2.0], 1.0), np.zeros(4))
        assert bump_density([0.0], 1.0)[0] == pytest.approx(math.exp(-1))


class TestVelocityModel:
    def test_origin(self):
        expected = np.hstack([np.zeros((3, 3)), -np.eye(3)])
        np.testing.assert_array_equal(point_velocity_matrix([0, 0, 0]), expected)

    def test_cross_product_sign(self):
        v = point_velocity_matrix([1, 0, 0]) @ np.array([0, 0, 1, 0, 0, 0.0])
        np.testing.assert_array_equal(v, np.cross([1, 0, 0], [0, 0, 1]))
        np.testing.assert_array_equal(v, [0, -1, 0])

    @given(vec3, vec6)
    def test_matches_cross_oracle(self, a, xi):
        np.testing.assert_allclose(point_velocity_matrix(a) @ xi, forward_velocities([a], xi)[0], atol=1e-10)

    def test_always_rank_three(self, rng):
        for _ in range(100):
            assert np.linalg.matrix_rank(point_velocity_matrix(rng.normal(size=3))) == 3

    def test_stacking(self, rng):
        a, v = rng.normal(size=(4, 3)), rng.normal(size=(4, 3))
        G, V = stack_velocity_system(a, v)
        assert G.shape == (12, 6)
        for j in range(4):
            np.testing.assert_array_equal(G[3 * j:3 * j + 3], point_velocity_matrix(a[j]))
            np.testing.assert_array_equal(V[3 * j:3 * j + 3], v[j])
        assert stack_velocity_system(a[:1], v[:1])[0].shape == (3, 6)
        assert np.linalg.matrix_rank(stack_velocity_system(a[:3], v[:3])[0]) == 6

    def test_stacking_length_mismatch(self):
        with pytest.raises(ValueError):
            stack_velocity_system(np.zeros((3, 3)), np.zeros((2, 3)))


class TestExtractTwist:
    def test_zero_velocities(self, rng):
        np.testing.assert_array_equal(extract_twist(rng.normal(size=(3, 3)), np.zeros((3, 3))), np.zeros(6))

    def test_recovers_twist(self, rng):
        for _ in range(200):
            a = well_spread_points(rng)
            xi = rng.normal(size=6)
            np.testing.assert_allclose(extract_twist(a, forward_velocities(a, xi)), xi, atol=1e-10)

    def test_noisy_least_squares_optimal(self, rng):
        for _ in range(50):
            a = well_spread_points(rng)
            xi = rng.normal(size=6)
            v = forward_velocities(a, xi) + sample_bump(1e-3, (3, 3), rng)
            G, V = stack_velocity_system(a, v)
            est = extract_twist(a, v)
            assert np.linalg.norm(G @ est - V) <= np.linalg.norm(G @ xi - V) + 1e-15
            np.testing.assert_allclose(est, np.linalg.lstsq(G, V, rcond=None)[0], atol=1e-10)

    def test_one_point_minimum_norm(self, rng):
        a, xi = rng.normal(size=(1, 3)), rng.normal(size=6)
        v = forward_velocities(a, xi)
        est = extract_twist(a, v)
        G, _ = stack_velocity_system(a, v)
        np.testing.assert_allclose(G @ est, v[0], atol=1e-12)
        np.testing.assert_allclose(est, np.linalg.pinv(G) @ v[0], atol=1e-12)

    def test_two_points_minimum_norm(self, rng):
        a, xi = rng.normal(size=(2, 3)), rng.normal(size=6)
        v = forward_velocities(a, xi)
        est = extract_twist(a, v)
        np.testing.assert_allclose(forward_velocities(a, est), v, atol=1e-10)
        # component along the unobservable direction is removed
        G, _ = stack_velocity_system(a, v)
        null = np.linalg.svd(G)[2][-1]
        assert abs(null @ est) < 1e-10

    def test_collinear_is_degenerate(self):
        a = np.array([[0, 0, 0], [1, 0, 0], [2, 0, 0.0]])
        with pytest.raises(DegenerateGeometryError):
            extract_twist(a, np.zeros((3, 3)))

    def test_batch_matches_single(self, rng):
        a = np.array([well_spread_points(rng, 4) for _ in range(20)])
        v = rng.normal(size=a.shape)
        batch = extract_twist_batch(a, v)
        for k in range(20):
            np.testing.assert_allclose(batch[k], extract_twist(a[k], v[k]), atol=1e-13)

    def test_batch_shape_mismatch(self):
        with pytest.raises(ValueError):
            extract_twist_batch(np.zeros((2, 3, 3)), np.zeros((2, 4, 3)))


class TestFilter:
    def test_constant_input(self):
        v = filter_point_velocities(np.ones((20, 3, 3)), 0.01)
        assert np.array_equal(v, np.zeros_like(v))

    def test_first_sample_zero(self, rng):
        v = filter_point_velocities(rng.normal(size=(5, 2, 3)), 0.01)
        assert np.array_equal(v[0], np.zeros((2, 3)))

    def test_ramp_without_smoothing(self):
        t = np.arange(50) * 0.01
        a = (np.array([1.0, 2, 3]) + np.outer(t, [0.5, -1, 2]))[:, None, :]
        v = filter_point_velocities(a, 0.01, cutoff_hz=math.inf)
        np.testing.assert_allclose(v[1:, 0], np.tile([0.5, -1, 2], (49, 1)), rtol=1e-9)

    def test_ramp_settles(self):
        dt, fc = 0.01, 10.0
        alpha = dt / (dt + 1 / (2 * math.pi * fc))
        # time constant of the sampled filter, not of its continuous prototype
        tau = -dt / math.log(1 - alpha)
        n = int(math.ceil(5 * tau / dt)) + 2
        t = np.arange(n) * dt
        a = (0.3 * t)[:, None, None] * np.ones((1, 1, 3))
        v = filter_point_velocities(a, dt, fc)
        assert np.all(np.abs(v[-1] - 0.3) < 0.01 * 0.3)

    def test_difference_equation(self, rng):
        dt, fc = 0.01, 10.0
        x = rng.normal(size=(40, 1, 3))
        alpha = dt / (dt + 1 / (2 * math.pi * fc))
        expected = np.zeros_like(x)
        for i in range(1, 40):
            expected[i] = (1 - alpha) * expected[i - 1] + alpha * (x[i] - x[i - 1]) / dt
        np.testing.assert_allclose(filter_point_velocities(x, dt, fc), expected, rtol=1e-12, atol=1e-12)

    def test_frequency_response(self):
        dt, fc, f = 0.001, 5.0, 100.0
        alpha = dt / (dt + 1 / (2 * math.pi * fc))
        t = np.arange(20000) * dt
        amp_in = 0.01
        a = (amp_in * np.sin(2 * math.pi * f * t))[:, None, None]
        v = filter_point_velocities(a, dt, fc)[-5000:, 0, 0]
        # exact discrete response: backward difference times first-order low-pass
        z = np.exp(1j * 2 * math.pi * f * dt)
        H = (1 - 1 / z) / dt * alpha / (1 - (1 - alpha) / z)
        expected = amp_in * abs(H)
        measured = 0.5 * (v.max() - v.min())
        assert measured == pytest.approx(expected, rel=0.05)
        # and well below the unfiltered derivative amplitude
        assert measured < 0.2 * amp_in * 2 * math.pi * f

    @given(st.integers(1, 39))
    def test_batch_split_equals_sequential(self, split):
        rng = np.random.default_rng(split)
        x = rng.normal(size=(40, 3, 3))
        whole = PointVelocityFilter(0.01).update_batch(x)
        f = PointVelocityFilter(0.01)
        parts = np.concatenate([f.update_batch(x[:split]), f.update_batch(x[split:])])
        g = PointVelocityFilter(0.01)
        single = np.array([g.update(xi) for xi in x])
        np.testing.assert_allclose(parts, whole, rtol=1e-13, atol=1e-13)
        np.testing.assert_allclose(single, whole, rtol=1e-13, atol=1e-13)

    def test_validation(self):
        with pytest.raises(ValueError):
            filter_point_velocities(np.zeros((1, 3, 3)), 0.01)
        with pytest.raises(ValueError):
            PointVelocityFilter(0.0)
        with pytest.raises(ValueError):
            PointVelocityFilter(0.01, -1.0)


def test_stream_roundtrip(rng):
    frames = [make_frame(well_spread_points(rng), rng.normal(size=(3, 3)), t=0.01 * k) for k in range(5)]
    stream = MeasurementStream.from_frames(frames)
    assert len(stream) == 5
    for k, f in enumerate(frames):
        g = stream[k]
        np.testing.assert_array_equal(g.L_meas, f.L_meas)
        np.testing.assert_array_equal(g.a_bar, f.a_bar)
        np.testing.assert_allclose(g.xi_meas, f.xi_meas, atol=1e-15)
    again = MeasurementStream.from_arrays(stream.t, stream.a_meas, stream.v_meas)
    np.testing.assert_allclose(again.xi_meas, stream.xi_meas, atol=1e-13)
    np.testing.assert_array_equal(again.L_meas, stream.L_meas)


def test_random_pose_helper_is_rotation(rng):
    g = random_pose(rng)
    np.testing.assert_allclose(g.R @ g.R.T, np.eye(3), atol=1e-12)
