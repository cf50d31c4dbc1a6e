import numpy as np
import pytest

from distkalman import linalg, model
from distkalman.rng import Rng


class TestGenerateRandomSystem:
    def test_spectral_radii(self):
        sys_model, suite = model.generate_random_system(10, 30, Rng(1).spawn("system"))
        assert abs(linalg.spectral_radius(sys_model.a) - 0.999) < 1e-6
        assert abs(np.linalg.eigvalsh(sys_model.q)[-1] - 1.0) < 1e-6
        assert suite.i_nodes == 30
        assert all(s.c.shape == (1, 10) for s in suite.nodes)

    def test_measurement_noise_floor(self):
        for seed in range(5):
            _, suite = model.generate_random_system(4, 12, Rng(seed))
            assert min(float(s.r) for s in suite.nodes) >= 0.1

    def test_neutral_prior(self):
        sys_model, _ = model.generate_random_system(6, 3, Rng(2))
        assert np.array_equal(sys_model.mu, np.zeros(6))
        assert np.array_equal(sys_model.p0, np.eye(6))

    def test_determinism(self):
        m1, s1 = model.generate_random_system(5, 4, Rng(9))
        m2, s2 = model.generate_random_system(5, 4, Rng(9))
        assert np.array_equal(m1.a, m2.a) and np.array_equal(m1.q, m2.q)
        for a, b in zip(s1.nodes, s2.nodes):
            assert np.array_equal(a.c, b.c) and np.array_equal(a.r, b.r)


class TestSimulate:
    def test_noiseless_static_system_stays_at_mean(self):
        eps = 1e-12
        n = 3
        mu = np.array([1.0, -2.0, 0.5])
        sys_model = model.SystemModel(a=np.eye(n), q=eps * np.eye(n), mu=mu, p0=eps * np.eye(n))
        suite = model.SensorSuite(nodes=[model.NodeSensor(c=np.eye(n), r=np.eye(n))])
        traj = model.simulate(sys_model, suite, 20, Rng(3))
        assert np.max(np.abs(traj.states - mu)) < 1e-4

    def test_white_noise_sample_covariance(self):
        n = 2
        sys_model = model.SystemModel(a=np.zeros((n, n)), q=np.eye(n),
                                      mu=np.zeros(n), p0=np.eye(n))
        suite = model.SensorSuite(nodes=[model.NodeSensor(c=np.zeros((1, n)), r=[[1.0]])])
        traj = model.simulate(sys_model, suite, 100_000, Rng(4))
        cov = traj.states.T @ traj.states / traj.horizon
        assert np.max(np.abs(cov - np.eye(n))) < 0.05

    def test_determinism(self):
        sys_model, suite = model.generate_random_system(4, 3, Rng(5))
        t1 = model.simulate(sys_model, suite, 25, Rng(6))
        t2 = model.simulate(sys_model, suite, 25, Rng(6))
        assert np.array_equal(t1.states, t2.states)
        for a, b in zip(t1.measurements, t2.measurements):
            assert np.array_equal(a, b)


class TestLocalInfoTerms:
    def test_identity_sensor(self):
        sensor = model.NodeSensor(c=np.eye(3), r=np.eye(3))
        v = np.array([0.3, -1.0, 2.0])
        psi, big_psi = model.local_info_terms(sensor, v)
        assert np.allclose(psi, v)
        assert np.allclose(big_psi, np.eye(3))

    def test_hand_computed(self):
        sensor = model.NodeSensor(c=[[1.0, 0.0]], r=[[2.0]])
        psi, big_psi = model.local_info_terms(sensor, [4.0])
        assert np.allclose(psi, [2.0, 0.0])
        assert np.allclose(big_psi, [[0.5, 0.0], [0.0, 0.0]])

    def test_dimension_error(self):
        sensor = model.NodeSensor(c=[[1.0, 0.0]], r=[[2.0]])
        with pytest.raises(ValueError):
            model.local_info_terms(sensor, [1.0, 2.0])


def test_global_identities_match_stacked_suite(rng):
    # mixed per-node measurement dimensions
    n = 4
    nodes = []
    for k in range(6):
        m = 1 + k % 2
        c = rng.standard_normal((m, n))
        raw = rng.standard_normal((m, m))
        nodes.append(model.NodeSensor(c=c, r=raw @ raw.T + np.eye(m)))
    suite = model.SensorSuite(nodes=nodes)
    ys = [rng.standard_normal(s.m) for s in suite.nodes]
    psi, big_psi = suite.global_info(ys)

    c_stack = suite.stacked_c()
    r_stack = suite.stacked_r()
    y_stack = np.concatenate(ys)
    r_inv = np.linalg.inv(r_stack)
    big_expected = c_stack.T @ r_inv @ c_stack
    psi_expected = c_stack.T @ r_inv @ y_stack
    scale = linalg.spectral_norm(big_expected)
    assert linalg.spectral_norm(big_psi - big_expected) < 1e-10 * scale
    assert np.linalg.norm(psi - psi_expected) < 1e-10 * max(np.linalg.norm(psi_expected), 1.0)


def test_bundle_round_trip_exact(tmp_path):
    sys_model, suite = model.generate_random_system(5, 4, Rng(17))
    path = tmp_path / "bundle.txt"
    model.save_bundle(path, sys_model, suite)
    loaded_model, loaded_suite = model.load_bundle(path)
    assert np.array_equal(loaded_model.a, sys_model.a)
    assert np.array_equal(loaded_model.q, sys_model.q)
    assert np.array_equal(loaded_model.mu, sys_model.mu)
    assert np.array_equal(loaded_model.p0, sys_model.p0)
    for a, b in zip(loaded_suite.nodes, suite.nodes):
        assert np.array_equal(a.c, b.c) and np.array_equal(a.r, b.r)


def test_bundle_version_guard(tmp_path):
    path = tmp_path / "bundle.txt"
    sys_model, suite = model.generate_random_system(2, 1, Rng(1))
    model.save_bundle(path, sys_model, suite)
    text = path.read_text().replace("bundle_version = 1", "bundle_version = 99")
    path.write_text(text)
    with pytest.raises(ValueError):
        model.load_bundle(path)


def test_model_validation_errors():
    with pytest.raises(ValueError):
        model.SystemModel(a=np.eye(2), q=np.eye(3), mu=np.zeros(2), p0=np.eye(2))
    with pytest.raises(Exception):
        model.SystemModel(a=np.eye(2), q=np.diag([1.0, -1.0]), mu=np.zeros(2), p0=np.eye(2))
