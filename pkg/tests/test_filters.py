import numpy as np
import pytest

from distkalman import filters, linalg, model, network
from distkalman.model import NodeSensor, SensorSuite, SystemModel, simulate
from distkalman.rng import Rng

GOLDEN = (np.sqrt(5.0) - 1.0) / 2.0          # scalar Riccati fixed point


def scalar_model():
    return SystemModel(a=[[1.0]], q=[[1.0]], mu=[0.0], p0=[[1.0]])


def scalar_suite():
    return SensorSuite(nodes=[NodeSensor(c=[[1.0]], r=[[1.0]])])


def small_setup(seed=1, n=4, i_nodes=5, horizon=40):
    rng = Rng(seed)
    sys_model, suite = model.generate_random_system(n, i_nodes, rng.spawn("system"))
    traj = simulate(sys_model, suite, horizon, rng.spawn("trajectory"))
    schedule = network.ring_schedule(i_nodes)
    return sys_model, suite, traj, schedule


class TestKfPredict:
    def test_random_walk(self):
        m = SystemModel(a=np.eye(2), q=np.eye(2), mu=np.zeros(2), p0=np.eye(2))
        state = filters.initial_centralized_state(m)
        out = filters.kf_predict(state, m)
        assert np.allclose(out.sigma_pred, 2.0 * np.eye(2))

    def test_memoryless(self):
        m = SystemModel(a=np.zeros((2, 2)), q=np.eye(2), mu=np.ones(2), p0=np.eye(2))
        out = filters.kf_predict(filters.initial_centralized_state(m), m)
        assert np.allclose(out.x_pred, 0.0)
        assert np.allclose(out.sigma_pred, np.eye(2))

    def test_scalar_riccati(self):
        m = scalar_model()
        state = filters.initial_centralized_state(m)
        state.sigma_filt = np.array([[GOLDEN]])
        out = filters.kf_predict(state, m)
        assert out.sigma_pred[0, 0] == pytest.approx(GOLDEN + 1.0, abs=1e-12)


class TestKfUpdate:
    def test_no_information(self):
        m = scalar_model()
        state = filters.kf_predict(filters.initial_centralized_state(m), m)
        out = filters.kf_update(state, np.zeros(1), np.zeros((1, 1)))
        assert np.allclose(out.sigma_filt, state.sigma_pred)
        assert np.allclose(out.x_filt, state.x_pred)

    def test_scalar_golden_ratio(self):
        m = scalar_model()
        state = filters.initial_centralized_state(m)
        state.sigma_pred = np.array([[GOLDEN + 1.0]])
        out = filters.kf_update(state, np.zeros(1), np.eye(1))
        assert out.sigma_filt[0, 0] == pytest.approx(GOLDEN, abs=1e-9)

    def test_summed_node_terms_match_batch_update(self, rng):
        sys_model, suite = model.generate_random_system(3, 6, rng.spawn("s"))
        ys = [rng.standard_normal(s.m) for s in suite.nodes]
        state = filters.kf_predict(filters.initial_centralized_state(sys_model), sys_model)
        psi, big_psi = suite.global_info(ys)
        out = filters.kf_update(state, psi, big_psi, suite=suite)

        c = suite.stacked_c()
        r_inv = np.linalg.inv(suite.stacked_r())
        y = np.concatenate(ys)
        pred_inv = np.linalg.inv(state.sigma_pred)
        sigma = np.linalg.inv(pred_inv + c.T @ r_inv @ c)
        x = sigma @ (pred_inv @ state.x_pred + c.T @ r_inv @ y)
        assert np.allclose(out.x_filt, x, atol=1e-10)
        assert np.allclose(out.sigma_filt, sigma, atol=1e-10)

    def test_phi_identity(self, rng):
        sys_model, suite = model.generate_random_system(4, 5, rng.spawn("s"))
        ys = [rng.standard_normal(s.m) for s in suite.nodes]
        state = filters.kf_predict(filters.initial_centralized_state(sys_model), sys_model)
        psi, big_psi = suite.global_info(ys)
        out = filters.kf_update(state, psi, big_psi)
        assert np.allclose(out.phi, out.sigma_filt @ big_psi, atol=1e-9)


class TestKalmanGain:
    def test_identity_sensor(self, rng):
        from conftest import random_spd
        sigma = random_spd(rng, 3)
        sensor = NodeSensor(c=np.eye(3), r=np.eye(3))
        assert np.allclose(filters.kalman_gain(sigma, sensor), sigma)

    def test_scalar_steady_state(self):
        sensor = NodeSensor(c=[[1.0]], r=[[1.0]])
        gain = filters.kalman_gain(np.array([[GOLDEN]]), sensor)
        assert gain[0, 0] == pytest.approx(GOLDEN, abs=1e-9)

    def test_stacked_blocks_reproduce_batch_gain(self, rng):
        sys_model, suite = model.generate_random_system(3, 4, rng.spawn("s"))
        from conftest import random_spd
        sigma = random_spd(rng, 3)
        blocks = np.hstack([filters.kalman_gain(sigma, s) for s in suite.nodes])
        batch = sigma @ suite.stacked_c().T @ np.linalg.inv(suite.stacked_r())
        assert np.allclose(blocks, batch, atol=1e-12)


class TestDecoupledBank:
    def test_exact_fusion_reproduces_centralized(self):
        sys_model, suite, traj, schedule = small_setup()
        oracle = filters.run_centralized(sys_model, suite, traj)
        bank = filters.DecoupledLocalFilterBank(sys_model, suite, schedule,
                                                exact_psi_fusion=True, exact_x_fusion=True)
        run = filters.run_filter(bank, traj)
        scale = np.linalg.norm(oracle.x, axis=1)
        rel = np.linalg.norm(run.estimates - oracle.x[:, None, :], axis=2) / scale[:, None]
        assert np.max(rel) < 1e-9

    def test_exact_fusion_estimates_identical_across_nodes(self):
        sys_model, suite, traj, schedule = small_setup()
        bank = filters.DecoupledLocalFilterBank(sys_model, suite, schedule,
                                                exact_psi_fusion=True, exact_x_fusion=True)
        run = filters.run_filter(bank, traj)
        spread = run.estimates.max(axis=1) - run.estimates.min(axis=1)
        assert np.max(np.abs(spread)) < 1e-12

    def test_single_node_reduces_to_centralized(self):
        rng = Rng(2)
        sys_model, suite = model.generate_random_system(3, 1, rng.spawn("system"))
        traj = simulate(sys_model, suite, 50, rng.spawn("trajectory"))
        schedule = network.full_mixing_schedule(1)
        oracle = filters.run_centralized(sys_model, suite, traj)
        bank = filters.DecoupledLocalFilterBank(sys_model, suite, schedule, k_psi=0, k_x=0)
        run = filters.run_filter(bank, traj)
        assert np.allclose(run.estimates[:, 0, :], oracle.x, atol=1e-12, rtol=1e-12)

    def test_exact_structural_fusion_gives_centralized_phi(self):
        sys_model, suite, traj, schedule = small_setup()
        oracle = filters.run_centralized(sys_model, suite, traj)
        bank = filters.DecoupledLocalFilterBank(sys_model, suite, schedule,
                                                exact_psi_fusion=True)
        ys = traj.stacked_measurements()
        for t in range(1, traj.horizon + 1):
            bank.step(t, ys[t - 1], estimate_requested=False)
            assert np.max(np.abs(bank.phi - oracle.cov.phi[t])) < 1e-9

    def test_decomposition_identity(self):
        # node-sum of local states equals the centralized estimate
        sys_model, suite, traj, schedule = small_setup()
        oracle = filters.run_centralized(sys_model, suite, traj)
        bank = filters.DecoupledLocalFilterBank(sys_model, suite, schedule,
                                                exact_psi_fusion=True, exact_x_fusion=True)
        ys = traj.stacked_measurements()
        for t in range(1, traj.horizon + 1):
            bank.step(t, ys[t - 1])
            total = bank.xi.sum(axis=0)
            scale = max(np.linalg.norm(oracle.x[t - 1]), 1.0)
            assert np.linalg.norm(total - oracle.x[t - 1]) < 1e-9 * scale

    def test_local_filter_recursion_identity(self):
        # never-fused, exact structural data: xi follows (I - Phi) A xi + K y
        sys_model, suite, traj, schedule = small_setup(horizon=30)
        oracle = filters.run_centralized(sys_model, suite, traj)
        bank = filters.DecoupledLocalFilterBank(sys_model, suite, schedule,
                                                exact_psi_fusion=True)
        ys = traj.stacked_measurements()
        xi_manual = np.tile(sys_model.mu / suite.i_nodes, (suite.i_nodes, 1))
        eye = np.eye(sys_model.n)
        ct_rinv, _ = suite.info_blocks()
        for t in range(1, traj.horizon + 1):
            bank.step(t, ys[t - 1], estimate_requested=False)
            trans = (eye - oracle.cov.phi[t]) @ sys_model.a
            gains = oracle.cov.gains[t]
            xi_manual = (xi_manual @ trans.T
                         + (gains @ ys[t - 1][..., None])[..., 0])
            assert np.max(np.abs(bank.xi - xi_manual)) < 1e-10

    def test_update_never_increases_covariance(self):
        sys_model, suite, traj, schedule = small_setup(horizon=25)
        cov = filters.run_centralized_covariances(sys_model, suite, 25)
        for t in range(1, 26):
            gap_eigs = np.linalg.eigvalsh(cov.sigma_pred[t] - cov.sigma_filt[t])
            assert gap_eigs[0] > -1e-10

    def test_estimates_held_between_fusions(self):
        sys_model, suite, traj, schedule = small_setup(horizon=12)
        bank = filters.DecoupledLocalFilterBank(sys_model, suite, schedule, k_psi=5, k_x=5)
        ys = traj.stacked_measurements()
        fused = bank.step(1, ys[0], estimate_requested=True)
        held = bank.step(2, ys[1], estimate_requested=False)
        assert np.array_equal(held, fused)

    def test_steps_must_be_consecutive(self):
        sys_model, suite, traj, schedule = small_setup()
        bank = filters.DecoupledLocalFilterBank(sys_model, suite, schedule)
        ys = traj.stacked_measurements()
        bank.step(1, ys[0])
        with pytest.raises(ValueError):
            bank.step(5, ys[4])


class TestInfoConsensusBank:
    def test_exact_fusion_matches_centralized(self):
        sys_model, suite, traj, schedule = small_setup()
        oracle = filters.run_centralized(sys_model, suite, traj)
        bank = filters.InfoConsensusFilterBank(sys_model, suite, schedule, exact_fusion=True)
        run = filters.run_filter(bank, traj)
        scale = np.linalg.norm(oracle.x, axis=1)
        rel = np.linalg.norm(run.estimates - oracle.x[:, None, :], axis=2) / scale[:, None]
        assert np.max(rel) < 1e-9

    def test_single_node_matches_centralized(self):
        rng = Rng(3)
        sys_model, suite = model.generate_random_system(3, 1, rng.spawn("system"))
        traj = simulate(sys_model, suite, 40, rng.spawn("trajectory"))
        bank = filters.InfoConsensusFilterBank(sys_model, suite,
                                               network.full_mixing_schedule(1))
        run = filters.run_filter(bank, traj)
        oracle = filters.run_centralized(sys_model, suite, traj)
        assert np.allclose(run.estimates[:, 0, :], oracle.x, atol=1e-10)

    def test_zero_rounds_is_scaled_local_filter(self):
        sys_model, suite, traj, schedule = small_setup(horizon=10)
        i_nodes = suite.i_nodes
        bank = filters.InfoConsensusFilterBank(sys_model, suite, schedule, k_psi=0, k_x=0)
        ys = traj.stacked_measurements()
        x = np.tile(sys_model.mu, (i_nodes, 1))
        sigma = np.tile(sys_model.p0, (i_nodes, 1, 1))
        ct_rinv, psi_ring = suite.info_blocks()
        for t in range(1, traj.horizon + 1):
            est = bank.step(t, ys[t - 1])
            for i in range(i_nodes):
                pred = sys_model.a @ sigma[i] @ sys_model.a.T + sys_model.q
                pred_inv = np.linalg.inv(pred)
                psi_vec = i_nodes * ct_rinv[i] @ ys[t - 1, i]
                sigma[i] = np.linalg.inv(pred_inv + i_nodes * psi_ring[i])
                x[i] = sigma[i] @ (pred_inv @ (sys_model.a @ x[i]) + psi_vec)
                assert np.allclose(est[i], x[i], atol=1e-8)


class TestEstimateConsensusBank:
    def test_exact_fusion_matches_centralized(self):
        sys_model, suite, traj, schedule = small_setup()
        oracle = filters.run_centralized(sys_model, suite, traj)
        bank = filters.EstimateConsensusFilterBank(sys_model, suite, schedule,
                                                   exact_fusion=True)
        run = filters.run_filter(bank, traj)
        scale = np.linalg.norm(oracle.x, axis=1)
        rel = np.linalg.norm(run.estimates - oracle.x[:, None, :], axis=2) / scale[:, None]
        assert np.max(rel) < 1e-9

    def test_single_node_matches_centralized(self):
        rng = Rng(4)
        sys_model, suite = model.generate_random_system(2, 1, rng.spawn("system"))
        traj = simulate(sys_model, suite, 30, rng.spawn("trajectory"))
        bank = filters.EstimateConsensusFilterBank(sys_model, suite,
                                                   network.full_mixing_schedule(1))
        run = filters.run_filter(bank, traj)
        oracle = filters.run_centralized(sys_model, suite, traj)
        assert np.allclose(run.estimates[:, 0, :], oracle.x, atol=1e-10)

    def test_mismatch_term_dropped_during_outage(self):
        sys_model, suite, traj, schedule = small_setup(horizon=6)
        b1 = filters.EstimateConsensusFilterBank(sys_model, suite, schedule)
        b2 = filters.EstimateConsensusFilterBank(sys_model, suite, schedule)
        b2._adj = b2._adj * 0.0
        b2._deg = b2._deg * 0.0
        ys = traj.stacked_measurements()
        for t in range(1, 7):
            e1 = b1.step(t, ys[t - 1], available=False)
            e2 = b2.step(t, ys[t - 1], available=False)
            assert np.array_equal(e1, e2)


class TestDivergenceHandling:
    def test_norm_limit_flags_divergence(self):
        sys_model, suite, traj, schedule = small_setup(horizon=10)
        bank = filters.DecoupledLocalFilterBank(sys_model, suite, schedule,
                                                exact_psi_fusion=True,
                                                exact_x_fusion=True, norm_limit=1e-9)
        run = filters.run_filter(bank, traj)
        assert run.diverged
        assert run.divergence.t == 1
        assert np.all(np.isnan(run.estimates[run.divergence.t - 1:]))

    def test_indefinite_information_flags_divergence(self):
        sys_model, suite, traj, schedule = small_setup(horizon=5)
        bank = filters.EstimateConsensusFilterBank(sys_model, suite, schedule)
        ys = traj.stacked_measurements()
        bank.step(1, ys[0])
        bank.psi_mat = -100.0 * np.tile(np.eye(sys_model.n), (suite.i_nodes, 1, 1))
        bank.prev_ring_mat = bank._psi_ring  # keep telescoping consistent
        with pytest.raises(filters.DivergenceError) as err:
            bank.step(2, ys[1], available=False)
        assert "positive definite" in str(err.value)


def test_run_filter_request_schedule():
    sys_model, suite, traj, schedule = small_setup(horizon=9)
    bank = filters.DecoupledLocalFilterBank(sys_model, suite, schedule, k_psi=3, k_x=3)
    run = filters.run_filter(bank, traj, request_every=3)
    assert list(np.nonzero(run.fused)[0] + 1) == [3, 6, 9]
    never = filters.run_filter(
        filters.DecoupledLocalFilterBank(sys_model, suite, schedule, k_psi=3, k_x=3),
        traj, request_every=0)
    assert not never.fused.any()


def test_run_filter_availability_length_guard():
    sys_model, suite, traj, schedule = small_setup(horizon=5)
    bank = filters.DecoupledLocalFilterBank(sys_model, suite, schedule)
    with pytest.raises(ValueError):
        filters.run_filter(bank, traj, availability=np.ones(3, dtype=bool))
