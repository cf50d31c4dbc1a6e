"""Experiment orchestration: scenario configs, the sweep/interruption/
availability experiments, and deterministic CSV/report emission."""

from __future__ import annotations

import csv
import hashlib
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import analysis, filters, network
from .model import SensorSuite, SystemModel, Trajectory, generate_random_system, simulate
from .rng import Rng

CONFIG_VERSION = 1
ALGORITHMS = ("decoupled", "info_consensus", "estimate_consensus")

_BANKS = {
    "decoupled": filters.DecoupledLocalFilterBank,
    "info_consensus": filters.InfoConsensusFilterBank,
    "estimate_consensus": filters.EstimateConsensusFilterBank,
}

DEFAULT_K_GRID = (1, 2, 5, 10, 20, 50, 100)
DEFAULT_P_GRID = (0.01, 0.05, 0.1, 0.2)


@dataclass
class ExperimentConfig:
    """Scenario description; defaults mirror the shipped experiment setup
    (N = 10 with ring topology over I = 30 nodes, 100 consensus rounds per
    fusion stage, horizon 200)."""

    seed: int = 1
    n: int = 10
    i_nodes: int = 30
    horizon: int = 200
    k_psi: int = 100
    k_x: int = 100
    estimate_every: int = 1
    outage: str = "none"               # none | interval:t1:t2 | ge:p
    algorithms: tuple[str, ...] = ALGORITHMS
    sweep_grid: tuple[float, ...] = ()
    n_seeds: int = 20
    exact_fusion: bool = False
    psi_tilde_fraction: float = 0.1    # bounds report: psi_tilde = fraction * threshold
    bound_horizon: int = 60

    def __post_init__(self):
        if isinstance(self.algorithms, str):
            self.algorithms = tuple(a for a in self.algorithms.split(",") if a)
        else:
            self.algorithms = tuple(self.algorithms)
        unknown = set(self.algorithms) - set(ALGORITHMS)
        if unknown:
            raise ValueError(f"unknown algorithms: {sorted(unknown)}")
        self.sweep_grid = tuple(float(v) for v in self.sweep_grid)
        for name in ("n", "i_nodes", "horizon", "estimate_every", "n_seeds", "bound_horizon"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.k_psi < 0 or self.k_x < 0:
            raise ValueError("consensus iteration counts must be nonnegative")
        self.parse_outage()

    def parse_outage(self) -> tuple[str, tuple]:
        parts = self.outage.split(":")
        if parts[0] == "none" and len(parts) == 1:
            return "none", ()
        if parts[0] == "interval" and len(parts) == 3:
            t1, t2 = int(parts[1]), int(parts[2])
            if not 1 <= t1 <= t2 <= self.horizon:
                raise ValueError("outage interval must satisfy 1 <= t1 <= t2 <= horizon")
            return "interval", (t1, t2)
        if parts[0] == "ge" and len(parts) == 2:
            p = float(parts[1])
            if not 0.0 <= p <= 1.0:
                raise ValueError("transition probability must lie in [0, 1]")
            return "ge", (p,)
        raise ValueError(f"bad outage spec: {self.outage!r}")

    # -- plain-text serialization -------------------------------------------

    _FIELDS = ("seed", "n", "i_nodes", "horizon", "k_psi", "k_x", "estimate_every",
               "outage", "algorithms", "sweep_grid", "n_seeds", "exact_fusion",
               "psi_tilde_fraction", "bound_horizon")

    def to_text(self) -> str:
        lines = [f"config_version = {CONFIG_VERSION}"]
        for name in self._FIELDS:
            value = getattr(self, name)
            if name == "algorithms":
                value = ",".join(value)
            elif name == "sweep_grid":
                value = ",".join(f"{v:.12g}" for v in value)
            elif isinstance(value, bool):
                value = "true" if value else "false"
            lines.append(f"{name} = {value}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "ExperimentConfig":
        entries: dict[str, str] = {}
        for line in text.splitlines():
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            key, sep, value = line.partition("=")
            if not sep:
                raise ValueError(f"bad config line: {line!r}")
            entries[key.strip()] = value.strip()
        version = int(entries.pop("config_version", CONFIG_VERSION))
        if version != CONFIG_VERSION:
            raise ValueError(f"unsupported config version {version}")
        kwargs = {}
        for name in cls._FIELDS:
            if name not in entries:
                continue
            raw = entries.pop(name)
            if name in ("seed", "n", "i_nodes", "horizon", "k_psi", "k_x",
                        "estimate_every", "n_seeds", "bound_horizon"):
                kwargs[name] = int(raw)
            elif name == "exact_fusion":
                kwargs[name] = raw.lower() in ("true", "1", "yes")
            elif name == "psi_tilde_fraction":
                kwargs[name] = float(raw)
            elif name == "algorithms":
                kwargs[name] = tuple(a for a in raw.split(",") if a)
            elif name == "sweep_grid":
                kwargs[name] = tuple(float(v) for v in raw.split(",") if v)
            else:
                kwargs[name] = raw
        if entries:
            raise ValueError(f"unknown config keys: {sorted(entries)}")
        return cls(**kwargs)

    @classmethod
    def from_file(cls, path) -> "ExperimentConfig":
        return cls.from_text(Path(path).read_text(encoding="utf-8"))

    def config_hash(self) -> str:
        return hashlib.sha256(self.to_text().encode("utf-8")).hexdigest()[:16]


@dataclass
class Scenario:
    """Everything shared by the algorithms at one grid point."""

    model: SystemModel
    suite: SensorSuite
    schedule: network.WeightSchedule
    trajectory: Trajectory
    oracle: filters.CentralizedRun
    availability: np.ndarray


@dataclass
class ScenarioResult:
    seed: int
    label: str
    e_t: dict[str, np.ndarray]
    e: dict[str, float]
    divergences: list[str] = field(default_factory=list)
    availability_fraction: float = 1.0


def build_scenario(cfg: ExperimentConfig, seed: int) -> Scenario:
    """System, trajectory, oracle and availability for one seed.

    All algorithms at this grid point consume the same realizations
    (common random numbers).
    """
    root = Rng(seed)
    model, suite = generate_random_system(cfg.n, cfg.i_nodes, root.spawn("system"))
    trajectory = simulate(model, suite, cfg.horizon, root.spawn("trajectory"))
    schedule = network.ring_schedule(cfg.i_nodes)
    cov_run = filters.run_centralized_covariances(model, suite, cfg.horizon)
    oracle = filters.run_centralized(model, suite, trajectory, cov_run)
    kind, args = cfg.parse_outage()
    if kind == "none":
        availability = np.ones(cfg.horizon, dtype=bool)
    elif kind == "interval":
        availability = np.ones(cfg.horizon, dtype=bool)
        availability[args[0] - 1:args[1]] = False
    else:
        availability = network.availability_series(args[0], cfg.horizon,
                                                   root.spawn("availability"))
    return Scenario(model, suite, schedule, trajectory, oracle, availability)


def make_bank(name: str, scenario: Scenario, cfg: ExperimentConfig):
    cls = _BANKS[name]
    kwargs = dict(k_psi=cfg.k_psi, k_x=cfg.k_x)
    if name == "decoupled":
        kwargs.update(exact_psi_fusion=cfg.exact_fusion, exact_x_fusion=cfg.exact_fusion)
    else:
        kwargs.update(exact_fusion=cfg.exact_fusion)
    return cls(scenario.model, scenario.suite, scenario.schedule, **kwargs)


def run_scenario(cfg: ExperimentConfig, seed: int, label: str = "",
                 scenario: Scenario | None = None) -> ScenarioResult:
    if scenario is None:
        scenario = build_scenario(cfg, seed)
    e_t: dict[str, np.ndarray] = {}
    e: dict[str, float] = {}
    divergences = []
    for name in cfg.algorithms:
        bank = make_bank(name, scenario, cfg)
        run = filters.run_filter(bank, scenario.trajectory, scenario.availability,
                                 request_every=cfg.estimate_every)
        if run.diverged:
            divergences.append(f"{name}: {run.divergence}")
        series, aggregate = analysis.mismatch_metric(run.estimates, scenario.oracle.x)
        e_t[name] = series
        e[name] = aggregate
    return ScenarioResult(seed=seed, label=label, e_t=e_t, e=e,
                          divergences=divergences,
                          availability_fraction=float(np.mean(scenario.availability)))


# ---------------------------------------------------------------------------
# Experiments
# ---------------------------------------------------------------------------

def _seeds(cfg: ExperimentConfig) -> list[int]:
    return [cfg.seed + k for k in range(cfg.n_seeds)]


def run_fusion_sweep(cfg: ExperimentConfig, axis: str) -> list[ScenarioResult]:
    """Mismatch as a function of the consensus iteration budget of one
    fusion stage ('k_psi' or 'k_x'); same trajectories across the grid."""
    if axis not in ("k_psi", "k_x"):
        raise ValueError("sweep axis must be k_psi or k_x")
    grid = [int(v) for v in (cfg.sweep_grid or DEFAULT_K_GRID)]
    if any(v < 0 for v in grid):
        raise ValueError("consensus iteration grid must be nonnegative")
    results = []
    for seed in _seeds(cfg):
        scenario = build_scenario(cfg, seed)
        for value in grid:
            point = replace(cfg, **{axis: value})
            results.append(run_scenario(point, seed, label=f"{value:.12g}",
                                        scenario=scenario))
    return results


def run_interruption(cfg: ExperimentConfig) -> list[ScenarioResult]:
    """Per-step mismatch with fusion suppressed during the configured window."""
    return [run_scenario(cfg, seed, label=cfg.outage) for seed in _seeds(cfg)]


def run_gilbert_elliott(cfg: ExperimentConfig) -> list[ScenarioResult]:
    """Per-step mismatch under a sampled availability chain."""
    kind, _ = cfg.parse_outage()
    if kind != "ge":
        raise ValueError("gilbert-elliott experiment needs outage = ge:<p>")
    return [run_scenario(cfg, seed, label=cfg.outage) for seed in _seeds(cfg)]


def run_p_sweep(cfg: ExperimentConfig) -> list[ScenarioResult]:
    """Aggregate mismatch over a grid of availability transition probabilities."""
    grid = [float(v) for v in (cfg.sweep_grid or DEFAULT_P_GRID)]
    results = []
    for p in grid:
        point = replace(cfg, outage=f"ge:{p:.12g}")
        for seed in _seeds(point):
            results.append(run_scenario(point, seed, label=f"{p:.12g}"))
    return results


def compute_bound_report(cfg: ExperimentConfig) -> analysis.BoundReport:
    root = Rng(cfg.seed)
    model, suite = generate_random_system(cfg.n, cfg.i_nodes, root.spawn("system"))
    base = analysis.compute_bound_inputs(model, suite, cfg.bound_horizon, 0.0)
    threshold = analysis.stability_threshold(base)
    inputs = replace(base, psi_tilde_bar=cfg.psi_tilde_fraction * threshold)
    return analysis.bound_report(inputs)


# ---------------------------------------------------------------------------
# Emission (deterministic text and CSV, RFC-4180-style quoting)
# ---------------------------------------------------------------------------

def _fmt(value) -> str:
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return f"{float(value):.12g}"


def _write_csv(path: Path, cfg: ExperimentConfig, header: list[str], rows) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(f"# config_hash = {cfg.config_hash()}\r\n")
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([v if isinstance(v, str) else _fmt(v) for v in row])


def emit_sweep_csv(path, cfg: ExperimentConfig, results: list[ScenarioResult],
                   axis_name: str) -> None:
    header = [axis_name] + [f"e_{a}" for a in cfg.algorithms] + ["seed"]
    rows = [[r.label] + [r.e[a] for a in cfg.algorithms] + [r.seed] for r in results]
    _write_csv(Path(path), cfg, header, rows)


def emit_series_csv(path, cfg: ExperimentConfig, results: list[ScenarioResult]) -> None:
    header = ["t"] + [f"e_t_{a}" for a in cfg.algorithms] + ["seed"]
    rows = []
    for r in results:
        horizon = len(next(iter(r.e_t.values())))
        for t in range(1, horizon + 1):
            rows.append([t] + [r.e_t[a][t - 1] for a in cfg.algorithms] + [r.seed])
    _write_csv(Path(path), cfg, header, rows)


def emit_state_dump(path, cfg: ExperimentConfig, name: str, estimates: np.ndarray,
                    seed: int) -> None:
    """Optional per-step, per-node estimate dump (t, algorithm, node, x_0..)."""
    header = ["t", "algorithm", "node"] + [f"x_{j}" for j in range(estimates.shape[2])]
    rows = []
    for t in range(1, estimates.shape[0] + 1):
        for i in range(estimates.shape[1]):
            rows.append([t, name, i] + list(estimates[t - 1, i]))
    _write_csv(Path(path), cfg, header, rows)


def write_bound_report(path, cfg: ExperimentConfig, report: analysis.BoundReport) -> None:
    inputs = report.inputs
    lines = [
        f"# config_hash = {cfg.config_hash()}",
        f"horizon = {inputs.horizon}",
        f"n = {inputs.n}",
        f"i_nodes = {inputs.i_nodes}",
        f"sigma_bar = {_fmt(inputs.sigma_bar)} (converged = {_fmt(inputs.sigma_converged)})",
        f"gamma_bar = {_fmt(inputs.gamma_bar)} (converged = {_fmt(inputs.gamma_converged)})",
        f"psi_bar = {_fmt(inputs.psi_bar)}",
        f"norm_a = {_fmt(inputs.norm_a)}",
        f"norm_q_inv = {_fmt(inputs.norm_q_inv)}",
        f"y_frak_bar = {_fmt(inputs.y_frak_bar)} (converged = {_fmt(inputs.y_converged)})",
        f"beta = {_fmt(report.beta)}",
        f"stability_threshold = {_fmt(report.threshold)}",
        f"psi_tilde_bar = {_fmt(inputs.psi_tilde_bar)}",
        f"stable_guaranteed = {_fmt(report.stable_guaranteed)}",
    ]
    for name in ("upsilon", "delta", "phi_bar", "sigma_tilde_bar", "error_bound"):
        value = getattr(report, name)
        lines.append(f"{name} = {'n/a' if value is None else _fmt(value)}")
    if report.note:
        lines.append(f"note = {report.note}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def write_config_echo(path, cfg: ExperimentConfig) -> None:
    """Reloadable config echo plus derived topology facts."""
    lam2 = network.algebraic_connectivity(network.ring_weights(cfg.i_nodes))
    extra = [
        f"# config_hash = {cfg.config_hash()}",
        "# topology: ring (0.5 self, 0.25 ring neighbors)",
        f"# algebraic_connectivity = {_fmt(lam2)}",
    ]
    Path(path).write_text("\n".join(extra) + "\n" + cfg.to_text(), encoding="utf-8")
