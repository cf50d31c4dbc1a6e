"""Linear-Gaussian system and per-node sensor models: definition, random
generation, forward simulation, and plain-text serialization."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import linalg
from .rng import Rng


@dataclass
class SystemModel:
    """Global dynamics x_t = A x_{t-1} + w_t with x_0 ~ N(mu, p0), w ~ N(0, q)."""

    a: np.ndarray
    q: np.ndarray
    mu: np.ndarray
    p0: np.ndarray

    def __post_init__(self):
        self.a = linalg.as_square(self.a, "a")
        self.q = linalg.validate_spd(self.q, "q")
        self.mu = np.asarray(self.mu, dtype=float).reshape(-1)
        self.p0 = linalg.validate_spd(self.p0, "p0")
        n = self.a.shape[0]
        if self.q.shape[0] != n or self.p0.shape[0] != n or self.mu.shape[0] != n:
            raise ValueError("inconsistent system dimensions")

    @property
    def n(self) -> int:
        return self.a.shape[0]


@dataclass
class NodeSensor:
    """One node's measurement map y = C x + v with v ~ N(0, r)."""

    c: np.ndarray
    r: np.ndarray

    def __post_init__(self):
        self.c = np.atleast_2d(np.asarray(self.c, dtype=float))
        self.r = linalg.validate_spd(np.atleast_2d(self.r), "r")
        if self.r.shape[0] != self.c.shape[0]:
            raise ValueError("sensor noise dimension does not match measurement rows")

    @property
    def m(self) -> int:
        return self.c.shape[0]

    @property
    def n(self) -> int:
        return self.c.shape[1]


@dataclass
class SensorSuite:
    """Ordered collection of node sensors sharing the state dimension."""

    nodes: list[NodeSensor] = field(default_factory=list)

    def __post_init__(self):
        if not self.nodes:
            raise ValueError("suite needs at least one sensor")
        n = self.nodes[0].n
        if any(s.n != n for s in self.nodes):
            raise ValueError("all sensors must share the state dimension")

    @property
    def i_nodes(self) -> int:
        return len(self.nodes)

    @property
    def n(self) -> int:
        return self.nodes[0].n

    @property
    def homogeneous_m(self) -> bool:
        return len({s.m for s in self.nodes}) == 1

    def stacked_c(self) -> np.ndarray:
        return np.vstack([s.c for s in self.nodes])

    def stacked_r(self) -> np.ndarray:
        total = sum(s.m for s in self.nodes)
        r = np.zeros((total, total))
        at = 0
        for s in self.nodes:
            r[at:at + s.m, at:at + s.m] = s.r
            at += s.m
        return r

    def info_blocks(self) -> tuple[np.ndarray, np.ndarray]:
        """Per-node C'R^-1 (I, N, M) and C'R^-1 C (I, N, N); requires equal M."""
        if not self.homogeneous_m:
            raise ValueError("info_blocks requires all nodes to share M")
        ct_rinv = np.stack([s.c.T @ linalg.invert_spd(s.r) for s in self.nodes])
        psi_ring = linalg.sym(np.stack([b @ s.c for b, s in zip(ct_rinv, self.nodes)]))
        return ct_rinv, psi_ring

    def global_structural(self) -> np.ndarray:
        """Sum over nodes of C'R^-1 C."""
        out = np.zeros((self.n, self.n))
        for s in self.nodes:
            psi_ring = local_info_terms(s, np.zeros(s.m))[1]
            out += psi_ring
        return linalg.sym(out)

    def global_info(self, ys: list[np.ndarray]) -> tuple[np.ndarray, np.ndarray]:
        """Global signal and structural data (sum of per-node contributions)."""
        psi = np.zeros(self.n)
        big_psi = np.zeros((self.n, self.n))
        for sensor, y in zip(self.nodes, ys):
            p, bp = local_info_terms(sensor, y)
            psi += p
            big_psi += bp
        return psi, linalg.sym(big_psi)


def local_info_terms(sensor: NodeSensor, y) -> tuple[np.ndarray, np.ndarray]:
    """Node information terms: (C'R^-1 y, C'R^-1 C)."""
    y = np.asarray(y, dtype=float).reshape(-1)
    if y.shape[0] != sensor.m:
        raise ValueError(f"measurement has dimension {y.shape[0]}, expected {sensor.m}")
    ct_rinv = sensor.c.T @ linalg.invert_spd(sensor.r)
    return ct_rinv @ y, linalg.sym(ct_rinv @ sensor.c)


@dataclass
class Trajectory:
    """One realization of states x_1..x_T and per-node measurements."""

    states: np.ndarray                 # (T, N)
    measurements: list[np.ndarray]     # per node, (T, M_i)

    @property
    def horizon(self) -> int:
        return self.states.shape[0]

    def measurements_at(self, t: int) -> list[np.ndarray]:
        """Per-node measurements for time step t (1-based)."""
        return [m[t - 1] for m in self.measurements]

    def stacked_measurements(self) -> np.ndarray:
        """(T, I, M) array; requires all nodes to share M."""
        if len({m.shape[1] for m in self.measurements}) != 1:
            raise ValueError("stacked measurements require all nodes to share M")
        return np.stack(self.measurements, axis=1)


def generate_random_system(n: int, i_nodes: int, rng: Rng) -> tuple[SystemModel, SensorSuite]:
    """Random time-invariant system: rho(A) = 0.999, lambda_max(Q) = 1,
    one-dimensional sensors C^i with standard-normal entries and
    R^i = 10 r^2 + 0.1, mu = 0, P0 = I.

    Draw order (fixed for reproducibility): A entries, Q factor entries,
    then per node the C row followed by the scalar r.
    """
    if n < 1 or i_nodes < 1:
        raise ValueError("n and i_nodes must be positive")
    a = rng.standard_normal((n, n))
    a *= 0.999 / linalg.spectral_radius(a)
    factor = rng.standard_normal((n, n))
    q = linalg.sym(factor.T @ factor)
    q /= float(np.linalg.eigvalsh(q)[-1])
    nodes = []
    for _ in range(i_nodes):
        c = rng.standard_normal((1, n))
        r = rng.standard_normal()
        nodes.append(NodeSensor(c=c, r=np.array([[10.0 * r * r + 0.1]])))
    model = SystemModel(a=a, q=q, mu=np.zeros(n), p0=np.eye(n))
    return model, SensorSuite(nodes=nodes)


def simulate(model: SystemModel, suite: SensorSuite, t_max: int, rng: Rng) -> Trajectory:
    """Sample a trajectory of Eqs. x_t = A x_{t-1} + w_t, y_t^i = C^i x_t + v_t^i.

    Draw order: x_0, then for each t the process noise followed by each
    node's measurement noise in node order. All draws are independent.
    """
    n = model.n
    chol_p0 = np.linalg.cholesky(model.p0)
    chol_q = np.linalg.cholesky(model.q)
    chol_r = [np.linalg.cholesky(s.r) for s in suite.nodes]
    x = model.mu + chol_p0 @ rng.standard_normal(n)
    states = np.empty((t_max, n))
    measurements = [np.empty((t_max, s.m)) for s in suite.nodes]
    for t in range(t_max):
        x = model.a @ x + chol_q @ rng.standard_normal(n)
        states[t] = x
        for i, sensor in enumerate(suite.nodes):
            noise = chol_r[i] @ rng.standard_normal(sensor.m)
            measurements[i][t] = sensor.c @ x + noise
    return Trajectory(states=states, measurements=measurements)


# ---------------------------------------------------------------------------
# Plain-text bundle format.
#
# Line-oriented "key = value" records; matrices are row-major floats separated
# by single spaces, written with repr() so every entry round-trips exactly.
# Keys: bundle_version, n, i_nodes, a, q, mu, p0, node.<i>.m, node.<i>.c,
# node.<i>.r.
# ---------------------------------------------------------------------------

BUNDLE_VERSION = 1


def _fmt_array(a: np.ndarray) -> str:
    return " ".join(repr(float(v)) for v in np.asarray(a, dtype=float).ravel())


def _parse_array(text: str, shape: tuple) -> np.ndarray:
    vals = np.array([float(v) for v in text.split()], dtype=float)
    return vals.reshape(shape)


def save_bundle(path, model: SystemModel, suite: SensorSuite) -> None:
    lines = [
        f"bundle_version = {BUNDLE_VERSION}",
        f"n = {model.n}",
        f"i_nodes = {suite.i_nodes}",
        f"a = {_fmt_array(model.a)}",
        f"q = {_fmt_array(model.q)}",
        f"mu = {_fmt_array(model.mu)}",
        f"p0 = {_fmt_array(model.p0)}",
    ]
    for i, s in enumerate(suite.nodes):
        lines.append(f"node.{i}.m = {s.m}")
        lines.append(f"node.{i}.c = {_fmt_array(s.c)}")
        lines.append(f"node.{i}.r = {_fmt_array(s.r)}")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def load_bundle(path) -> tuple[SystemModel, SensorSuite]:
    entries: dict[str, str] = {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            key, _, value = line.partition("=")
            entries[key.strip()] = value.strip()
    version = int(entries["bundle_version"])
    if version != BUNDLE_VERSION:
        raise ValueError(f"unsupported bundle version {version}")
    n = int(entries["n"])
    i_nodes = int(entries["i_nodes"])
    model = SystemModel(
        a=_parse_array(entries["a"], (n, n)),
        q=_parse_array(entries["q"], (n, n)),
        mu=_parse_array(entries["mu"], (n,)),
        p0=_parse_array(entries["p0"], (n, n)),
    )
    nodes = []
    for i in range(i_nodes):
        m = int(entries[f"node.{i}.m"])
        nodes.append(NodeSensor(
            c=_parse_array(entries[f"node.{i}.c"], (m, n)),
            r=_parse_array(entries[f"node.{i}.r"], (m, m)),
        ))
    return model, SensorSuite(nodes=nodes)
