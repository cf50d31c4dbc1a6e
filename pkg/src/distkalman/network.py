"""Consensus weight schedules, static/dynamic consensus primitives, ring
topology, and the Gilbert-Elliott network availability model."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import linalg
from .rng import Rng

WEIGHT_ROW_SUM_ATOL = 1e-12


def validate_weights(w) -> np.ndarray:
    w = linalg.as_square(w, "weights")
    if np.max(np.abs(w - w.T)) > WEIGHT_ROW_SUM_ATOL:
        raise ValueError("weight matrix must be symmetric")
    if np.min(w) < -WEIGHT_ROW_SUM_ATOL:
        raise ValueError("weight matrix entries must be nonnegative")
    if np.max(np.abs(w.sum(axis=1) - 1.0)) > WEIGHT_ROW_SUM_ATOL:
        raise ValueError("weight matrix rows must sum to 1")
    return w


class WeightSchedule:
    """Consensus gain provider: (t, k) -> symmetric stochastic I x I matrix.

    Time-invariant schedules cache powers of the gain matrix so a K-round
    mixing can be applied as a single matrix product.
    """

    def __init__(self, provider, i_nodes: int, time_invariant: bool = False):
        self._provider = provider
        self.i_nodes = i_nodes
        self.time_invariant = time_invariant
        self._powers: dict[int, np.ndarray] = {}

    def weights(self, t: int, k: int) -> np.ndarray:
        return self._provider(t, k)

    def mixing(self, t: int, k_iters: int) -> np.ndarray:
        """Product W_{t,k_iters} x ... x W_{t,1} (identity for zero rounds)."""
        if k_iters < 0:
            raise ValueError("k_iters must be nonnegative")
        if self.time_invariant:
            cached = self._powers.get(k_iters)
            if cached is None:
                cached = np.linalg.matrix_power(self.weights(1, 1), k_iters)
                self._powers[k_iters] = cached
            return cached
        out = np.eye(self.i_nodes)
        for k in range(1, k_iters + 1):
            out = self.weights(t, k) @ out
        return out


def ring_weights(i_nodes: int) -> np.ndarray:
    """Ring gains: 0.5 self, 0.25 for the two ring neighbors, 0 otherwise.

    Neighbors follow the 1-based rule |mod(i - j + 1, I) - 1| = 1.
    """
    if i_nodes < 3:
        raise ValueError("ring topology needs at least 3 nodes")
    w = np.zeros((i_nodes, i_nodes))
    for i in range(1, i_nodes + 1):
        for j in range(1, i_nodes + 1):
            if i == j:
                w[i - 1, j - 1] = 0.5
            elif abs(((i - j + 1) % i_nodes) - 1) == 1:
                w[i - 1, j - 1] = 0.25
    return validate_weights(w)


def ring_schedule(i_nodes: int) -> WeightSchedule:
    w = ring_weights(i_nodes)
    return WeightSchedule(lambda t, k: w, i_nodes, time_invariant=True)


def full_mixing_schedule(i_nodes: int) -> WeightSchedule:
    """Complete averaging in one round; handy for tiny or degenerate networks."""
    w = np.full((i_nodes, i_nodes), 1.0 / i_nodes)
    return WeightSchedule(lambda t, k: w, i_nodes, time_invariant=True)


def algebraic_connectivity(w) -> float:
    """Second-largest eigenvalue (descending, with multiplicity) of a
    symmetric stochastic matrix."""
    w = linalg.check_symmetric(w, "weights")
    eigs = np.linalg.eigvalsh(w)[::-1]
    return float(eigs[1])


def consensus_round(field: np.ndarray, w: np.ndarray) -> np.ndarray:
    """One averaging round: slot i becomes sum_j w[i, j] * slot_j."""
    field = np.asarray(field, dtype=float)
    w = np.asarray(w, dtype=float)
    if field.shape[0] != w.shape[0]:
        raise ValueError(f"field has {field.shape[0]} slots, weights are {w.shape}")
    return np.tensordot(w, field, axes=(1, 0))


def run_consensus(field: np.ndarray, schedule: WeightSchedule, t: int, k_iters: int) -> np.ndarray:
    out = np.asarray(field, dtype=float)
    for k in range(1, k_iters + 1):
        out = consensus_round(out, schedule.weights(t, k))
    return out


def network_average(field: np.ndarray) -> np.ndarray:
    """Exact-consensus oracle: every slot becomes the network average."""
    field = np.asarray(field, dtype=float)
    mean = field.mean(axis=0)
    return np.broadcast_to(mean, field.shape).copy()


def dynamic_consensus_step(prev_field, new_local, old_local, i_nodes: int,
                           schedule: WeightSchedule, t: int, k_iters: int) -> np.ndarray:
    """Dynamic-consensus update tracking the sum of a time-varying signal.

    Slot j is initialized to prev_j + I * new_local_j - I * old_local_j and
    then mixed for k_iters rounds; the slot total is preserved by every round,
    so the field keeps tracking I times the running local sum exactly.
    """
    prev_field = np.asarray(prev_field, dtype=float)
    new_local = np.asarray(new_local, dtype=float)
    old_local = np.asarray(old_local, dtype=float)
    if prev_field.shape != new_local.shape or new_local.shape != old_local.shape:
        raise ValueError("field shapes must match")
    init = prev_field + i_nodes * (new_local - old_local)
    return run_consensus(init, schedule, t, k_iters)


@dataclass(frozen=True)
class GilbertElliott:
    """Symmetric two-state availability chain: flips with probability p."""

    p: float
    available: bool = True

    def __post_init__(self):
        if not 0.0 <= self.p <= 1.0:
            raise ValueError("transition probability must lie in [0, 1]")

    def step(self, rng: Rng) -> "GilbertElliott":
        flip = rng.uniforms(1)[0] <= self.p
        return GilbertElliott(self.p, self.available ^ bool(flip))


def ge_step(model: GilbertElliott, rng: Rng) -> GilbertElliott:
    return model.step(rng)


def availability_series(p: float, t_max: int, rng: Rng, start_available: bool = True) -> np.ndarray:
    """Boolean availability for t = 1..t_max, one chain step per time step."""
    if not 0.0 <= p <= 1.0:
        raise ValueError("transition probability must lie in [0, 1]")
    flips = rng.uniforms(t_max) <= p
    toggles = np.cumsum(flips) % 2 == 1
    return np.where(toggles, not start_available, start_available)
