"""Centralized information-form Kalman filter (the oracle) and the three
distributed filters.

All distributed variants share the structure: local prediction, an
information-fusion stage over the consensus network, and an information-form
update. They differ in what is fused and when:

* ``DecoupledLocalFilterBank`` runs per-node local filters whose node-sum
  equals the centralized estimate; the network is only needed to fuse the
  structural data and, on demand, the estimate itself, so signal-fusion
  errors do not feed back into the local recursions.
* ``InfoConsensusFilterBank`` rebuilds the global information vector and
  matrix from scratch every step with plain consensus rounds on the scaled
  local terms.
* ``EstimateConsensusFilterBank`` tracks the information terms with
  single-shot dynamic consensus and couples neighbor predictions through a
  mismatch-penalty term.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import linalg
from .model import NodeSensor, SensorSuite, SystemModel, Trajectory
from .network import WeightSchedule

NORM_LIMIT = 1e9


class DivergenceError(RuntimeError):
    """A node covariance lost positive definiteness or an estimate blew up."""

    def __init__(self, t: int, node: int | None, reason: str):
        self.t = t
        self.node = node
        self.reason = reason
        where = f"node {node}" if node is not None else "network"
        super().__init__(f"divergence at t={t} ({where}): {reason}")


def _spd_inverse_batched(mats: np.ndarray, t: int, context: str) -> np.ndarray:
    """Invert a stack of matrices, flagging loss of positive definiteness."""
    try:
        np.linalg.cholesky(mats)
    except np.linalg.LinAlgError:
        for i in range(mats.shape[0]):
            try:
                np.linalg.cholesky(mats[i])
            except np.linalg.LinAlgError:
                raise DivergenceError(t, i, f"{context} not positive definite") from None
        raise DivergenceError(t, None, f"{context} not positive definite") from None
    return linalg.sym(np.linalg.inv(mats))


# ---------------------------------------------------------------------------
# Centralized filter
# ---------------------------------------------------------------------------

@dataclass
class CentralizedState:
    """Centralized filter state; ``gain`` stacks the per-node blocks and
    ``phi`` is the update map Sigma_filt @ Psi."""

    x_filt: np.ndarray
    sigma_filt: np.ndarray
    x_pred: np.ndarray
    sigma_pred: np.ndarray
    gain: np.ndarray | None
    phi: np.ndarray


def initial_centralized_state(model: SystemModel) -> CentralizedState:
    n = model.n
    return CentralizedState(
        x_filt=model.mu.copy(), sigma_filt=model.p0.copy(),
        x_pred=model.mu.copy(), sigma_pred=model.p0.copy(),
        gain=None, phi=np.zeros((n, n)),
    )


def kf_predict(state: CentralizedState, model: SystemModel) -> CentralizedState:
    """Prediction: x_pred = A x_filt, Sigma_pred = A Sigma_filt A' + Q."""
    x_pred = model.a @ state.x_filt
    sigma_pred = linalg.sym(model.a @ state.sigma_filt @ model.a.T) + model.q
    return replace(state, x_pred=x_pred, sigma_pred=linalg.sym(sigma_pred))


def kf_update(state: CentralizedState, psi: np.ndarray, big_psi: np.ndarray,
              suite: SensorSuite | None = None) -> CentralizedState:
    """Information-form update with signal data psi and structural data Psi.

    Sigma_filt = (Sigma_pred^-1 + Psi)^-1 and
    x_filt = Sigma_filt (Sigma_pred^-1 x_pred + psi). Also refreshes
    phi = Sigma_filt Psi and, when the suite is supplied, the stacked gain
    Sigma_filt C' R^-1.
    """
    psi = np.asarray(psi, dtype=float).reshape(-1)
    big_psi = linalg.validate_psd(big_psi, "structural data")
    sigma_pred_inv = linalg.invert_spd(state.sigma_pred)
    sigma_filt = linalg.invert_spd(sigma_pred_inv + big_psi)
    x_filt = sigma_filt @ (sigma_pred_inv @ state.x_pred + psi)
    phi = sigma_filt @ big_psi
    gain = None
    if suite is not None:
        gain = sigma_filt @ suite.stacked_c().T @ linalg.invert_spd(suite.stacked_r())
    return replace(state, x_filt=x_filt, sigma_filt=sigma_filt, gain=gain, phi=phi)


def kalman_gain(sigma_filt: np.ndarray, sensor: NodeSensor) -> np.ndarray:
    """Per-node gain block Sigma_filt C' R^-1."""
    return np.asarray(sigma_filt, dtype=float) @ sensor.c.T @ linalg.invert_spd(sensor.r)


@dataclass
class CovarianceRun:
    """Measurement-independent centralized series over t = 0..T.

    Index 0 holds the prior; phi[0] and gains[0] are zero placeholders.
    """

    sigma_filt: np.ndarray   # (T+1, N, N)
    sigma_pred: np.ndarray   # (T+1, N, N)
    phi: np.ndarray          # (T+1, N, N)
    gains: np.ndarray        # (T+1, I, N, M)
    psi_global: np.ndarray   # (N, N)
    converged: bool

    @property
    def horizon(self) -> int:
        return self.sigma_filt.shape[0] - 1


def run_centralized_covariances(model: SystemModel, suite: SensorSuite, horizon: int) -> CovarianceRun:
    """Riccati recursion of the centralized filter for a time-invariant suite."""
    n = model.n
    ct_rinv, psi_ring = suite.info_blocks()
    psi_global = linalg.sym(psi_ring.sum(axis=0))
    i_nodes = suite.i_nodes
    m = suite.nodes[0].m
    sigma_filt = np.empty((horizon + 1, n, n))
    sigma_pred = np.empty((horizon + 1, n, n))
    phi = np.zeros((horizon + 1, n, n))
    gains = np.zeros((horizon + 1, i_nodes, n, m))
    sigma_filt[0] = model.p0
    sigma_pred[0] = model.p0
    for t in range(1, horizon + 1):
        pred = linalg.sym(model.a @ sigma_filt[t - 1] @ model.a.T) + model.q
        sigma_pred[t] = pred
        filt = linalg.invert_spd(linalg.invert_spd(pred) + psi_global)
        sigma_filt[t] = filt
        phi[t] = filt @ psi_global
        gains[t] = filt @ ct_rinv
    converged = horizon >= 2 and (
        linalg.riemannian_distance(sigma_filt[-1], sigma_filt[-2]) < 1e-10)
    return CovarianceRun(sigma_filt, sigma_pred, phi, gains, psi_global, converged)


@dataclass
class CentralizedRun:
    """Centralized estimates x_{t|t} for t = 1..T plus the covariance series."""

    x: np.ndarray            # (T, N)
    cov: CovarianceRun


def run_centralized(model: SystemModel, suite: SensorSuite, trajectory: Trajectory,
                    cov_run: CovarianceRun | None = None) -> CentralizedRun:
    t_max = trajectory.horizon
    if cov_run is None or cov_run.horizon < t_max:
        cov_run = run_centralized_covariances(model, suite, t_max)
    ct_rinv, _ = suite.info_blocks()
    ys = trajectory.stacked_measurements()
    x = model.mu.copy()
    out = np.empty((t_max, model.n))
    for t in range(1, t_max + 1):
        x_pred = model.a @ x
        psi = np.einsum("inm,im->n", ct_rinv, ys[t - 1])
        pred_inv = linalg.invert_spd(cov_run.sigma_pred[t])
        x = cov_run.sigma_filt[t] @ (pred_inv @ x_pred + psi)
        out[t - 1] = x
    return CentralizedRun(x=out, cov=cov_run)


# ---------------------------------------------------------------------------
# Distributed filter banks (state stacked over nodes, leading axis I)
# ---------------------------------------------------------------------------

class _FilterBank:
    def __init__(self, model: SystemModel, suite: SensorSuite, schedule: WeightSchedule,
                 norm_limit: float = NORM_LIMIT):
        if suite.n != model.n:
            raise ValueError("suite and model disagree on the state dimension")
        if schedule.i_nodes != suite.i_nodes:
            raise ValueError("schedule and suite disagree on the node count")
        self.model = model
        self.suite = suite
        self.schedule = schedule
        self.norm_limit = norm_limit
        self._a = model.a
        self._q = model.q
        self._ct_rinv, self._psi_ring = suite.info_blocks()
        self._t_next = 1

    def _blocks_at(self, t: int) -> tuple[np.ndarray, np.ndarray]:
        # Time-invariant sensors; a per-step provider can override this hook.
        return self._ct_rinv, self._psi_ring

    def _expect_step(self, t: int):
        if t != self._t_next:
            raise ValueError(f"steps must be consecutive; expected t={self._t_next}, got {t}")
        self._t_next = t + 1

    def _predict(self, x: np.ndarray, sigma: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        x_pred = x @ self._a.T
        sigma_pred = linalg.sym(self._a @ sigma @ self._a.T) + self._q
        return x_pred, sigma_pred

    def _check_norms(self, vectors: np.ndarray, t: int, what: str):
        norms = np.linalg.norm(vectors, axis=-1)
        if not np.all(np.isfinite(norms)) or np.max(norms) > self.norm_limit:
            bad = int(np.argmax(np.where(np.isfinite(norms), norms, np.inf)))
            raise DivergenceError(t, bad, f"{what} norm exceeded {self.norm_limit:.0e}")

    def _mix(self, field: np.ndarray, t: int, k_iters: int) -> np.ndarray:
        return np.tensordot(self.schedule.mixing(t, k_iters), field, axes=(1, 0))


class DecoupledLocalFilterBank(_FilterBank):
    """Per-node local filters whose sum reconstructs the centralized estimate.

    Structural data is tracked with dynamic consensus (K_psi rounds per step);
    the estimate itself is only fused when requested (K_x rounds), telescoping
    from the previous fused step. After a fusion every node keeps 1/I of the
    fused estimate so the node-sum decomposition is preserved exactly, which
    also keeps the local states bounded when estimates are fused regularly.
    """

    def __init__(self, model, suite, schedule, k_psi: int = 100, k_x: int = 100,
                 exact_psi_fusion: bool = False, exact_x_fusion: bool = False,
                 reset_on_fusion: bool = True, norm_limit: float = NORM_LIMIT):
        super().__init__(model, suite, schedule, norm_limit)
        self.k_psi = k_psi
        self.k_x = k_x
        self.exact_psi_fusion = exact_psi_fusion
        self.exact_x_fusion = exact_x_fusion
        self.reset_on_fusion = reset_on_fusion
        self.reset()

    def reset(self):
        i_nodes, n = self.suite.i_nodes, self.model.n
        self.xi = np.tile(self.model.mu / i_nodes, (i_nodes, 1))
        self.sigma = np.tile(self.model.p0, (i_nodes, 1, 1))
        self.psi_struct = np.zeros((i_nodes, n, n))
        self.prev_psi_ring = np.zeros((i_nodes, n, n))
        self.last_fused_x = np.tile(self.model.mu, (i_nodes, 1))
        self.last_fused_xi = np.tile(self.model.mu / i_nodes, (i_nodes, 1))
        self.phi = np.zeros((i_nodes, n, n))
        self.gains = np.zeros_like(self._ct_rinv)
        self._t_next = 1

    def step(self, t: int, ys: np.ndarray, available: bool = True,
             estimate_requested: bool = True) -> np.ndarray:
        """Advance every node one time step; returns the (I, N) estimates."""
        self._expect_step(t)
        ys = np.asarray(ys, dtype=float)
        i_nodes = self.suite.i_nodes
        ct_rinv, psi_ring = self._blocks_at(t)

        xi_pred, sigma_pred = self._predict(self.xi, self.sigma)

        # Structural data fusion (dynamic consensus). During an outage the
        # stage does not run; the fused value holds and the initialization
        # telescopes across the gap from the last successful fusion.
        if available:
            if self.exact_psi_fusion:
                total = psi_ring.sum(axis=0)
                self.psi_struct = np.broadcast_to(total, self.psi_struct.shape).copy()
            else:
                init = self.psi_struct + i_nodes * (psi_ring - self.prev_psi_ring)
                self.psi_struct = self._mix(init, t, self.k_psi)
            self.prev_psi_ring = psi_ring

        # Information-form update with the fused structural data.
        sigma_pred_inv = _spd_inverse_batched(sigma_pred, t, "predicted covariance")
        self.sigma = _spd_inverse_batched(sigma_pred_inv + self.psi_struct, t,
                                          "posterior information")
        self.gains = self.sigma @ ct_rinv
        self.phi = self.sigma @ self.psi_struct
        self.xi = (xi_pred - (self.phi @ xi_pred[..., None])[..., 0]
                   + (self.gains @ ys[..., None])[..., 0])
        self._check_norms(self.xi, t, "local state")

        # Signal fusion, only when an estimate is wanted and the network is up.
        # Between fusions a node's published estimate is its last fused one.
        if estimate_requested and available:
            if self.exact_x_fusion:
                fused = np.broadcast_to(self.xi.sum(axis=0), self.xi.shape).copy()
            else:
                init = self.last_fused_x + i_nodes * (self.xi - self.last_fused_xi)
                fused = self._mix(init, t, self.k_x)
            estimates = fused
            if self.reset_on_fusion:
                # Keeping 1/I of the fused estimate preserves the node-sum
                # decomposition exactly (the consensus rounds conserve the
                # slot total) while re-synchronizing the local states.
                self.xi = fused / i_nodes
            self.last_fused_x = fused.copy()
            self.last_fused_xi = self.xi.copy()
        else:
            estimates = self.last_fused_x
        self._check_norms(estimates, t, "estimate")
        return estimates.copy()


class InfoConsensusFilterBank(_FilterBank):
    """Information filter with per-step static consensus on the scaled local
    information terms (initialized from I * local data every step).

    During an outage no consensus can run. The structural matrix is static
    knowledge, so each node keeps its last fused value (the global structural
    data, for time-invariant sensors); the signal vector is per-step data and
    falls back to the I-scaled local term. The mismatched pair is what makes
    this baseline's estimates degrade during interruptions and recover slowly
    afterwards.
    """

    def __init__(self, model, suite, schedule, k_psi: int = 100, k_x: int = 100,
                 exact_fusion: bool = False, norm_limit: float = NORM_LIMIT):
        super().__init__(model, suite, schedule, norm_limit)
        self.k_psi = k_psi
        self.k_x = k_x
        self.exact_fusion = exact_fusion
        self.reset()

    def reset(self):
        i_nodes, n = self.suite.i_nodes, self.model.n
        self.x = np.tile(self.model.mu, (i_nodes, 1))
        self.sigma = np.tile(self.model.p0, (i_nodes, 1, 1))
        self.psi_mat = np.zeros((i_nodes, n, n))
        self._have_fused = False
        self._t_next = 1

    def step(self, t: int, ys: np.ndarray, available: bool = True,
             estimate_requested: bool = True) -> np.ndarray:
        self._expect_step(t)
        ys = np.asarray(ys, dtype=float)
        i_nodes = self.suite.i_nodes
        ct_rinv, psi_ring = self._blocks_at(t)
        psi_ring_vec = (ct_rinv @ ys[..., None])[..., 0]

        x_pred, sigma_pred = self._predict(self.x, self.sigma)

        if available:
            if self.exact_fusion:
                psi_vec = np.broadcast_to(psi_ring_vec.sum(axis=0), psi_ring_vec.shape).copy()
                self.psi_mat = np.broadcast_to(psi_ring.sum(axis=0), psi_ring.shape).copy()
            else:
                psi_vec = self._mix(i_nodes * psi_ring_vec, t, self.k_x)
                self.psi_mat = self._mix(i_nodes * psi_ring, t, self.k_psi)
            self._have_fused = True
        else:
            psi_vec = i_nodes * psi_ring_vec
            if not self._have_fused:
                self.psi_mat = i_nodes * psi_ring

        sigma_pred_inv = _spd_inverse_batched(sigma_pred, t, "predicted covariance")
        self.sigma = _spd_inverse_batched(sigma_pred_inv + self.psi_mat, t,
                                          "posterior information")
        info = (sigma_pred_inv @ x_pred[..., None])[..., 0] + psi_vec
        self.x = (self.sigma @ info[..., None])[..., 0]
        self._check_norms(self.x, t, "estimate")
        return self.x.copy()


class EstimateConsensusFilterBank(_FilterBank):
    """Dynamic-consensus information tracking plus a neighbor mismatch term
    D_t (x_pred^j - x_pred^i) with D_t = I - Sigma^i Psi^i."""

    def __init__(self, model, suite, schedule, k_psi: int = 1, k_x: int = 1,
                 exact_fusion: bool = False, norm_limit: float = NORM_LIMIT):
        super().__init__(model, suite, schedule, norm_limit)
        self.k_psi = k_psi
        self.k_x = k_x
        self.exact_fusion = exact_fusion
        w = schedule.weights(1, 1)
        adj = (w > 0) & ~np.eye(schedule.i_nodes, dtype=bool)
        self._adj = adj.astype(float)
        self._deg = adj.sum(axis=1).astype(float)
        self.reset()

    def reset(self):
        i_nodes, n = self.suite.i_nodes, self.model.n
        self.x = np.tile(self.model.mu, (i_nodes, 1))
        self.sigma = np.tile(self.model.p0, (i_nodes, 1, 1))
        self.psi_vec = np.zeros((i_nodes, n))
        self.psi_mat = np.zeros((i_nodes, n, n))
        self.prev_ring_vec = np.zeros((i_nodes, n))
        self.prev_ring_mat = np.zeros((i_nodes, n, n))
        self._t_next = 1

    def step(self, t: int, ys: np.ndarray, available: bool = True,
             estimate_requested: bool = True) -> np.ndarray:
        self._expect_step(t)
        ys = np.asarray(ys, dtype=float)
        i_nodes = self.suite.i_nodes
        ct_rinv, psi_ring = self._blocks_at(t)
        psi_ring_vec = (ct_rinv @ ys[..., None])[..., 0]

        x_pred, sigma_pred = self._predict(self.x, self.sigma)

        # Dynamic consensus on the information terms; during outages the
        # telescoped initialization still happens locally (it needs no
        # communication) but no mixing rounds run, so the accumulated
        # initialization at the next available step telescopes across the gap.
        if available and self.exact_fusion:
            self.psi_vec = np.broadcast_to(psi_ring_vec.sum(axis=0), psi_ring_vec.shape).copy()
            self.psi_mat = np.broadcast_to(psi_ring.sum(axis=0), psi_ring.shape).copy()
        else:
            init_vec = self.psi_vec + i_nodes * (psi_ring_vec - self.prev_ring_vec)
            init_mat = self.psi_mat + i_nodes * (psi_ring - self.prev_ring_mat)
            if available:
                self.psi_vec = self._mix(init_vec, t, self.k_x)
                self.psi_mat = self._mix(init_mat, t, self.k_psi)
            else:
                self.psi_vec = init_vec
                self.psi_mat = init_mat
        self.prev_ring_vec = psi_ring_vec
        self.prev_ring_mat = psi_ring

        sigma_pred_inv = _spd_inverse_batched(sigma_pred, t, "predicted covariance")
        self.sigma = _spd_inverse_batched(sigma_pred_inv + self.psi_mat, t,
                                          "posterior information")
        innovation = self.psi_vec - (self.psi_mat @ x_pred[..., None])[..., 0]
        x_new = x_pred + (self.sigma @ innovation[..., None])[..., 0]
        if available:
            # Mismatch penalty needs the neighbors' predictions.
            d_mat = np.eye(self.model.n) - self.sigma @ self.psi_mat
            nb_diff = self._adj @ x_pred - self._deg[:, None] * x_pred
            x_new = x_new + (d_mat @ nb_diff[..., None])[..., 0]
        self.x = x_new
        self._check_norms(self.x, t, "estimate")
        return self.x.copy()


@dataclass
class DistributedRun:
    """Per-node estimate series from running a bank over a trajectory."""

    estimates: np.ndarray            # (T, I, N); NaN after a divergence
    fused: np.ndarray                # (T,) bool: fusion stages executed
    divergence: DivergenceError | None

    @property
    def diverged(self) -> bool:
        return self.divergence is not None


def run_filter(bank, trajectory: Trajectory, availability=None,
               request_every: int = 1) -> DistributedRun:
    """Drive a filter bank over a trajectory.

    ``availability[t-1]`` gates the fusion stages at step t (all fusion is
    suppressed while the network is down). ``request_every`` selects the
    estimate-request cadence; 0 means estimates are never requested.
    """
    t_max = trajectory.horizon
    ys = trajectory.stacked_measurements()
    if availability is None:
        availability = np.ones(t_max, dtype=bool)
    availability = np.asarray(availability, dtype=bool)
    if availability.shape[0] != t_max:
        raise ValueError("availability length must equal the horizon")
    i_nodes, n = bank.suite.i_nodes, bank.model.n
    estimates = np.full((t_max, i_nodes, n), np.nan)
    fused = np.zeros(t_max, dtype=bool)
    divergence = None
    for t in range(1, t_max + 1):
        requested = request_every > 0 and t % request_every == 0
        try:
            estimates[t - 1] = bank.step(t, ys[t - 1], available=bool(availability[t - 1]),
                                         estimate_requested=requested)
        except DivergenceError as err:
            divergence = err
            break
        fused[t - 1] = bool(availability[t - 1]) and requested
    return DistributedRun(estimates=estimates, fused=fused, divergence=divergence)
