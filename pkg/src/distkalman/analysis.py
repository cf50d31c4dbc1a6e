"""Numerical evaluation of the stability threshold and error bounds for
structurally perturbed local filters, plus Monte Carlo validation helpers
and the mismatch metric used by the experiments."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import linalg
from .filters import CovarianceRun, run_centralized_covariances
from .model import SensorSuite, SystemModel
from .rng import Rng

FIXED_POINT_TOL = 1e-12
LAMBERT_TOL = 1e-13


class FixedPointError(RuntimeError):
    """The scalar fixed-point equation has no reachable solution."""


@dataclass
class SupremumEstimate:
    """A supremum computed over a declared finite horizon."""

    value: float
    converged: bool
    arg_t: int
    series: np.ndarray | None = None


# ---------------------------------------------------------------------------
# Constants of the stability and accuracy statements
# ---------------------------------------------------------------------------

def sigma_bar(model: SystemModel, suite: SensorSuite, horizon: int,
              cov_run: CovarianceRun | None = None) -> SupremumEstimate:
    """sup_t ||Sigma_t|t|| over t = 0..horizon, with a convergence diagnostic
    (successive filtered covariances within 1e-10 in the SPD metric)."""
    if cov_run is None or cov_run.horizon < horizon:
        cov_run = run_centralized_covariances(model, suite, horizon)
    norms = np.array([linalg.spectral_norm(s) for s in cov_run.sigma_filt[:horizon + 1]])
    arg = int(np.argmax(norms))
    return SupremumEstimate(float(norms[arg]), cov_run.converged, arg, norms)


def psi_bar(suite: SensorSuite) -> float:
    """sup_t ||Psi_t|| (a single value for time-invariant sensors)."""
    return linalg.spectral_norm(suite.global_structural())


def transition_gain(factors: np.ndarray) -> SupremumEstimate:
    """gamma = sup_t sum_{s=1}^t ||F_{t-1} x ... x F_s||, the s = t term being
    the empty product of norm 1. ``factors[u-1]`` is F_u; the supremum runs
    over t = 1..len(factors)+1."""
    factors = np.asarray(factors, dtype=float)
    dim = factors.shape[-1]
    sums = [1.0]
    prods = np.empty((0, dim, dim))
    for f in factors:
        prods = np.concatenate([f[None] @ prods, f[None]], axis=0)
        norms = np.linalg.svd(prods, compute_uv=False)[:, 0]
        sums.append(1.0 + float(norms.sum()))
    series = np.array(sums)
    arg = int(np.argmax(series))
    longest = float(np.linalg.svd(prods[0], compute_uv=False)[0]) if len(factors) else 0.0
    return SupremumEstimate(float(series[arg]), longest <= 1e-12, arg + 1, series)


def gamma_bar(phi_series: np.ndarray, a: np.ndarray) -> SupremumEstimate:
    """Transition gain of the centralized filter, from its Phi_t series."""
    a = np.asarray(a, dtype=float)
    eye = np.eye(a.shape[0])
    factors = np.stack([(eye - phi) @ a for phi in phi_series])
    return transition_gain(factors)


def lambert_beta(sigma_bar_value: float, norm_a: float, norm_q_inv: float) -> float:
    """The unique b > 0 with b * exp(b) = a for a = 1 / (||Q^-1|| sigma ||A||^2).

    Solved by Newton on log b + b - log a, which is monotone on (0, inf).
    """
    a = 1.0 / (norm_q_inv * sigma_bar_value * norm_a ** 2)
    if not np.isfinite(a) or a <= 0.0:
        raise ValueError(f"Lambert argument must be positive, got {a}")
    log_a = np.log(a)
    b = a if a < 1.0 else max(log_a, 0.5)
    for _ in range(200):
        resid = np.log(b) + b - log_a
        if abs(resid) < LAMBERT_TOL:
            return float(b)
        step = resid / (1.0 / b + 1.0)
        nxt = b - step
        while nxt <= 0.0:
            step *= 0.5
            nxt = b - step
        b = nxt
    raise FixedPointError("Lambert iteration did not converge")


@dataclass
class BoundInputs:
    """Ingredients of the stability threshold and the accuracy bound.

    All suprema are finite-horizon values; the *_converged flags record the
    truncation diagnostics.
    """

    sigma_bar: float
    gamma_bar: float
    psi_bar: float
    psi_tilde_bar: float
    norm_a: float
    norm_q_inv: float
    n: int
    i_nodes: int
    y_frak_bar: float
    horizon: int
    sigma_converged: bool = True
    gamma_converged: bool = True
    y_converged: bool = True


def stability_threshold(inputs: BoundInputs) -> float:
    """min of the two admissible-structural-error branches."""
    beta = lambert_beta(inputs.sigma_bar, inputs.norm_a, inputs.norm_q_inv)
    branch_1 = (1.0 - np.exp(-beta / np.sqrt(inputs.n))) / inputs.sigma_bar
    branch_2 = 1.0 / (inputs.gamma_bar * inputs.norm_a)
    return float(min(branch_1, branch_2))


def upsilon_bar(n: int, sigma_bar_value: float, psi_tilde_bar: float) -> float:
    """sqrt(N) |log(1 - sigma * psi_tilde)|."""
    prod = sigma_bar_value * psi_tilde_bar
    if prod >= 1.0:
        raise ValueError("sigma_bar * psi_tilde_bar must be below 1")
    return float(np.sqrt(n) * abs(np.log(1.0 - prod)))


def delta_bar(inputs: BoundInputs) -> float:
    """Smallest solution of x = k x / (k + q e^-x) + upsilon with
    k = sigma ||A||^2 and q = ||Q^-1||^-1.

    Equivalent to the first root of h(x) = x q e^-x / (k + q e^-x) - upsilon,
    which the iterates from 0 approach from below; located by the first sign
    change on a dense scan and then bisected to full precision. Raises
    FixedPointError when no solution exists.
    """
    ups = upsilon_bar(inputs.n, inputs.sigma_bar, inputs.psi_tilde_bar)
    if ups == 0.0:
        return 0.0
    k = inputs.sigma_bar * inputs.norm_a ** 2
    q = 1.0 / inputs.norm_q_inv

    def h(x):
        qe = q * np.exp(-x)
        return x * qe / (k + qe) - ups

    # The smallest root cannot exceed the tangency point 1 + upsilon.
    hi_limit = 2.0 * (1.0 + ups)
    grid = np.linspace(0.0, hi_limit, 4001)
    values = h(grid)
    above = np.nonzero(values >= 0.0)[0]
    above = above[above > 0]
    if above.size == 0:
        raise FixedPointError("fixed-point equation has no solution for these inputs")
    hi = grid[above[0]]
    lo = grid[above[0] - 1]
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if h(mid) < 0.0:
            lo = mid
        else:
            hi = mid
        if hi - lo < FIXED_POINT_TOL * max(hi, 1.0):
            break
    return float(0.5 * (lo + hi))


def error_bound(inputs: BoundInputs, delta: float | None = None) -> float:
    """Structural-error term of the accuracy bound:
    N I (gamma y / (1 - gamma psi_tilde))^2 (phi_bar^2 + sigma_tilde^2)."""
    if inputs.gamma_bar * inputs.psi_tilde_bar >= 1.0:
        raise ValueError("gamma_bar * psi_tilde_bar must be below 1")
    if delta is None:
        delta = delta_bar(inputs)
    growth = np.exp(delta)
    phi_b = ((growth - 1.0) * inputs.psi_bar + growth * inputs.psi_tilde_bar) * inputs.sigma_bar
    sigma_t = (growth - 1.0) * inputs.sigma_bar
    amp = inputs.gamma_bar * inputs.y_frak_bar / (1.0 - inputs.gamma_bar * inputs.psi_tilde_bar)
    return float(inputs.n * inputs.i_nodes * amp ** 2 * (phi_b ** 2 + sigma_t ** 2))


# ---------------------------------------------------------------------------
# The driving-signal bound y_frak_bar
# ---------------------------------------------------------------------------

def _node_output_blocks(model, sensor, psi_ring, ct_rinv):
    """Output maps for y_t = (xi_pred_t, psi_ring_t) in terms of the augmented
    state (x_{t-1}, xi_{t-1}) and the noise (w_t, v_t)."""
    n = model.n
    m = sensor.m
    h = np.zeros((2 * n, 2 * n))
    h[:n, n:] = model.a
    h[n:, :n] = psi_ring @ model.a
    e = np.zeros((2 * n, n + m))
    e[n:, :n] = psi_ring
    e[n:, n:] = ct_rinv
    return h, e


def y_frak_bar(model: SystemModel, suite: SensorSuite, horizon: int,
               cov_run: CovarianceRun | None = None) -> SupremumEstimate:
    """sup over t and nodes of ||E{y y'}||^(1/2) for the stacked signal
    y_t = (xi_pred_t, psi_ring_t) of the exact-structural local filters.

    Propagates the second moment of (x_t, xi_t) through the per-node
    state-space model and reads the output covariance off the one-step-back
    state, which matches the Monte Carlo definition of y_t.
    """
    if cov_run is None or cov_run.horizon < horizon:
        cov_run = run_centralized_covariances(model, suite, horizon)
    n = model.n
    eye = np.eye(n)
    ct_rinv, psi_ring = suite.info_blocks()
    xi0 = model.mu / suite.i_nodes
    best = 0.0
    arg = 0
    series = np.zeros(horizon + 1)
    converged = True
    for i, sensor in enumerate(suite.nodes):
        m = sensor.m
        noise_cov = np.zeros((n + m, n + m))
        noise_cov[:n, :n] = model.q
        noise_cov[n:, n:] = sensor.r
        h_map, e_map = _node_output_blocks(model, sensor, psi_ring[i], ct_rinv[i])
        x_moment = np.zeros((2 * n, 2 * n))
        x_moment[:n, :n] = model.p0 + np.outer(model.mu, model.mu)
        x_moment[:n, n:] = np.outer(model.mu, xi0)
        x_moment[n:, :n] = np.outer(xi0, model.mu)
        x_moment[n:, n:] = np.outer(xi0, xi0)
        prev_y = None
        for t in range(1, horizon + 1):
            kc = cov_run.gains[t, i] @ sensor.c
            f_map = np.zeros((2 * n, 2 * n))
            f_map[:n, :n] = model.a
            f_map[n:, :n] = kc @ model.a
            f_map[n:, n:] = (eye - cov_run.phi[t]) @ model.a
            g_map = np.zeros((2 * n, n + m))
            g_map[:n, :n] = eye
            g_map[n:, :n] = kc
            g_map[n:, n:] = cov_run.gains[t, i]
            y_moment = linalg.sym(h_map @ x_moment @ h_map.T + e_map @ noise_cov @ e_map.T)
            x_moment = linalg.sym(f_map @ x_moment @ f_map.T + g_map @ noise_cov @ g_map.T)
            val = float(np.sqrt(max(np.linalg.eigvalsh(y_moment)[-1], 0.0)))
            series[t] = max(series[t], val)
            if val > best:
                best, arg = val, t
            if t == horizon and prev_y is not None:
                drift = float(linalg.spectral_norm(y_moment - prev_y))
                converged = converged and drift <= 1e-8 * max(best, 1.0)
            prev_y = y_moment
    return SupremumEstimate(best, converged, arg, series)


def y_frak_bar_mc(model: SystemModel, suite: SensorSuite, horizon: int, n_traj: int,
                  rng: Rng, cov_run: CovarianceRun | None = None) -> SupremumEstimate:
    """Monte Carlo estimate of the same supremum, sampling the stacked signal
    directly; the authoritative cross-check for the recursion."""
    if cov_run is None or cov_run.horizon < horizon:
        cov_run = run_centralized_covariances(model, suite, horizon)
    n = model.n
    i_nodes = suite.i_nodes
    ct_rinv, psi_ring = suite.info_blocks()
    chol_p0 = np.linalg.cholesky(model.p0)
    chol_q = np.linalg.cholesky(model.q)
    chol_r = [np.linalg.cholesky(s.r) for s in suite.nodes]
    eye = np.eye(n)
    x_true = model.mu + rng.standard_normal((n_traj, n)) @ chol_p0.T
    xi = np.tile(model.mu / i_nodes, (i_nodes, n_traj, 1))
    best, arg = 0.0, 0
    for t in range(1, horizon + 1):
        xi_pred = xi @ model.a.T
        x_true = x_true @ model.a.T + rng.standard_normal((n_traj, n)) @ chol_q.T
        trans = (eye - cov_run.phi[t]) @ model.a
        for i, sensor in enumerate(suite.nodes):
            noise = rng.standard_normal((n_traj, sensor.m)) @ chol_r[i].T
            y = x_true @ sensor.c.T + noise
            psi_sig = y @ ct_rinv[i].T
            stacked = np.concatenate([xi_pred[i], psi_sig], axis=1)
            moment = stacked.T @ stacked / n_traj
            val = float(np.sqrt(max(np.linalg.eigvalsh(linalg.sym(moment))[-1], 0.0)))
            if val > best:
                best, arg = val, t
            xi[i] = xi[i] @ trans.T + y @ cov_run.gains[t, i].T
    return SupremumEstimate(best, True, arg)


def compute_bound_inputs(model: SystemModel, suite: SensorSuite, horizon: int,
                         psi_tilde_bar: float,
                         cov_run: CovarianceRun | None = None) -> BoundInputs:
    if cov_run is None or cov_run.horizon < horizon:
        cov_run = run_centralized_covariances(model, suite, horizon)
    sig = sigma_bar(model, suite, horizon, cov_run)
    gam = gamma_bar(cov_run.phi[1:horizon + 1], model.a)
    y_bar = y_frak_bar(model, suite, horizon, cov_run)
    return BoundInputs(
        sigma_bar=sig.value,
        gamma_bar=gam.value,
        psi_bar=psi_bar(suite),
        psi_tilde_bar=psi_tilde_bar,
        norm_a=linalg.spectral_norm(model.a),
        norm_q_inv=linalg.spectral_norm(linalg.invert_spd(model.q)),
        n=model.n,
        i_nodes=suite.i_nodes,
        y_frak_bar=y_bar.value,
        horizon=horizon,
        sigma_converged=sig.converged,
        gamma_converged=gam.converged,
        y_converged=y_bar.converged,
    )


@dataclass
class BoundReport:
    """Derived constants, the stability verdict, and the error bound."""

    inputs: BoundInputs
    beta: float
    threshold: float
    stable_guaranteed: bool
    upsilon: float | None = None
    delta: float | None = None
    phi_bar: float | None = None
    sigma_tilde_bar: float | None = None
    error_bound: float | None = None
    note: str = ""
    mismatch_series: dict[str, np.ndarray] = field(default_factory=dict)


def bound_report(inputs: BoundInputs) -> BoundReport:
    beta = lambert_beta(inputs.sigma_bar, inputs.norm_a, inputs.norm_q_inv)
    threshold = stability_threshold(inputs)
    stable = inputs.psi_tilde_bar <= threshold
    report = BoundReport(inputs=inputs, beta=beta, threshold=threshold,
                         stable_guaranteed=stable)
    if not stable:
        report.note = "structural error exceeds the stability threshold"
        return report
    report.upsilon = upsilon_bar(inputs.n, inputs.sigma_bar, inputs.psi_tilde_bar)
    try:
        delta = delta_bar(inputs)
    except FixedPointError as err:
        report.note = f"fixed point unavailable: {err}"
        return report
    growth = np.exp(delta)
    report.delta = delta
    report.phi_bar = ((growth - 1.0) * inputs.psi_bar
                      + growth * inputs.psi_tilde_bar) * inputs.sigma_bar
    report.sigma_tilde_bar = (growth - 1.0) * inputs.sigma_bar
    report.error_bound = error_bound(inputs, delta)
    return report


# ---------------------------------------------------------------------------
# Mismatch metric
# ---------------------------------------------------------------------------

def mismatch_metric(node_estimates: np.ndarray, oracle: np.ndarray) -> tuple[np.ndarray, float]:
    """Per-step mismatch e_t = sqrt(mean_i ||x^i_t - x_t||^2) and the
    aggregate e = sqrt(mean_t e_t^2)."""
    node_estimates = np.asarray(node_estimates, dtype=float)
    oracle = np.asarray(oracle, dtype=float)
    if node_estimates.ndim != 3 or oracle.ndim != 2 \
            or node_estimates.shape[0] != oracle.shape[0] \
            or node_estimates.shape[2] != oracle.shape[1]:
        raise ValueError("estimate series and oracle series have mismatched shapes")
    diff = node_estimates - oracle[:, None, :]
    e_t = np.sqrt(np.mean(np.sum(diff ** 2, axis=2), axis=1))
    return e_t, float(np.sqrt(np.mean(e_t ** 2)))


# ---------------------------------------------------------------------------
# Second-moment (star) norm helpers and the perturbed-LTV bound
# ---------------------------------------------------------------------------

@dataclass
class StarNormEstimate:
    cross_norm: float
    x_norm: float
    y_norm: float


def star_norm_estimate(xs: np.ndarray, ys: np.ndarray, min_samples: int = 1000) -> StarNormEstimate:
    """Sampled ||E{x y'}|| together with the star norms of both arguments."""
    xs = np.asarray(xs, dtype=float)
    ys = np.asarray(ys, dtype=float)
    if xs.shape[0] != ys.shape[0]:
        raise ValueError("sample counts differ")
    if xs.shape[0] < min_samples:
        raise ValueError(f"need at least {min_samples} samples, got {xs.shape[0]}")
    count = xs.shape[0]
    cross = linalg.spectral_norm(xs.T @ ys / count)
    x_norm = np.sqrt(linalg.spectral_norm(xs.T @ xs / count))
    y_norm = np.sqrt(linalg.spectral_norm(ys.T @ ys / count))
    return StarNormEstimate(float(cross), float(x_norm), float(y_norm))


@dataclass
class LtvBoundCheck:
    gamma: float
    mu: float
    u_bar: float
    bound: float
    max_star_norm: float
    holds: bool
    skipped: bool


def ltv_bound_check(a_series: np.ndarray, a_hat_series: np.ndarray,
                    input_samples: np.ndarray, slack: float = 0.05) -> LtvBoundCheck:
    """Simulate x_t = A_hat_{t-1} x_{t-1} + u_t from x_0 = 0 over sampled
    inputs and compare the per-step star norms against gamma u / (1 - gamma mu).

    ``a_series[u-1]`` is the nominal A_u (u = 1..T-1), ``a_hat_series`` the
    perturbed sequence, and ``input_samples`` has shape (n_traj, T, d).
    When mu * gamma >= 1 the hypothesis fails and the check is skipped.
    """
    a_series = np.asarray(a_series, dtype=float)
    a_hat_series = np.asarray(a_hat_series, dtype=float)
    u = np.asarray(input_samples, dtype=float)
    n_traj, t_max, dim = u.shape
    gamma = transition_gain(a_series).value
    mu = max((linalg.spectral_norm(ah - an)
              for an, ah in zip(a_series, a_hat_series)), default=0.0)
    u_bar = 0.0
    for t in range(t_max):
        moment = u[:, t, :].T @ u[:, t, :] / n_traj
        u_bar = max(u_bar, float(np.sqrt(linalg.spectral_norm(moment))))
    if mu * gamma >= 1.0:
        return LtvBoundCheck(gamma, mu, u_bar, np.inf, np.nan, holds=False, skipped=True)
    bound = gamma * u_bar / (1.0 - gamma * mu)
    x = np.zeros((n_traj, dim))
    worst = 0.0
    for t in range(1, t_max + 1):
        if t == 1:
            x = u[:, 0, :].copy()
        else:
            x = x @ a_hat_series[t - 2].T + u[:, t - 1, :]
        moment = x.T @ x / n_traj
        worst = max(worst, float(np.sqrt(linalg.spectral_norm(moment))))
    return LtvBoundCheck(gamma, mu, u_bar, bound, worst,
                         holds=worst <= bound * (1.0 + slack), skipped=False)


# ---------------------------------------------------------------------------
# Structurally perturbed runs: deterministic recursions and Monte Carlo
# ---------------------------------------------------------------------------

def random_structural_perturbations(n: int, i_nodes: int, magnitude: float, rng: Rng) -> np.ndarray:
    """Symmetric per-node perturbations, each scaled to the given operator norm."""
    raw = linalg.sym(rng.standard_normal((i_nodes, n, n)))
    norms = np.linalg.svd(raw, compute_uv=False)[:, 0]
    return raw * (magnitude / norms)[:, None, None]


@dataclass
class PerturbedCovariances:
    """Side-by-side exact and perturbed covariance recursions."""

    sigma_nodes: np.ndarray       # (T+1, I, N, N)
    phi_nodes: np.ndarray         # (T+1, I, N, N)
    gains_nodes: np.ndarray       # (T+1, I, N, M)
    delta_series: np.ndarray      # (T+1, I) actual SPD-metric distances
    recursion_margin: float       # max over t, i of actual - recursion bound
    phi_margin: float             # max of ||Phi_tilde|| - its bound
    sigma_margin: float           # max of ||Sigma_tilde|| - its bound
    cov_run: CovarianceRun


def run_perturbed_covariances(model: SystemModel, suite: SensorSuite,
                              perturbations: np.ndarray, horizon: int,
                              cov_run: CovarianceRun | None = None) -> PerturbedCovariances:
    """Run the per-node Riccati recursion with Psi^i = Psi + Psi_tilde^i and
    record the SPD-metric drift plus the margins of the per-step bounds on
    delta, ||Phi_tilde|| and ||Sigma_tilde||."""
    if cov_run is None or cov_run.horizon < horizon:
        cov_run = run_centralized_covariances(model, suite, horizon)
    ct_rinv, _ = suite.info_blocks()
    i_nodes, n = suite.i_nodes, model.n
    m = suite.nodes[0].m
    psi_pert = cov_run.psi_global[None] + perturbations
    pert_norms = np.linalg.svd(perturbations, compute_uv=False)[:, 0]
    norm_a = linalg.spectral_norm(model.a)
    inv_norm_q_inv = 1.0 / linalg.spectral_norm(linalg.invert_spd(model.q))

    sigma_nodes = np.empty((horizon + 1, i_nodes, n, n))
    phi_nodes = np.zeros((horizon + 1, i_nodes, n, n))
    gains_nodes = np.zeros((horizon + 1, i_nodes, n, m))
    delta_series = np.zeros((horizon + 1, i_nodes))
    sigma_nodes[0] = model.p0
    recursion_margin = -np.inf
    phi_margin = -np.inf
    sigma_margin = -np.inf
    for t in range(1, horizon + 1):
        pred = linalg.sym(model.a @ sigma_nodes[t - 1] @ model.a.T) + model.q
        pred_inv = linalg.sym(np.linalg.inv(pred))
        filt = linalg.sym(np.linalg.inv(pred_inv + psi_pert))
        sigma_nodes[t] = filt
        phi_nodes[t] = filt @ psi_pert
        gains_nodes[t] = filt @ ct_rinv
        sig_norm_prev = linalg.spectral_norm(cov_run.sigma_filt[t - 1])
        sig_norm = linalg.spectral_norm(cov_run.sigma_filt[t])
        for i in range(i_nodes):
            dist = linalg.riemannian_distance(filt[i], cov_run.sigma_filt[t])
            delta_series[t, i] = dist
            prev = delta_series[t - 1, i]
            shrink = (norm_a ** 2 * sig_norm_prev * prev
                      / (norm_a ** 2 * sig_norm_prev + inv_norm_q_inv * np.exp(-prev)))
            step = np.sqrt(n) * abs(np.log(1.0 - sig_norm * pert_norms[i]))
            recursion_margin = max(recursion_margin, dist - (shrink + step))
            growth = np.exp(dist)
            phi_t = ((growth - 1.0) * linalg.spectral_norm(cov_run.psi_global)
                     + growth * pert_norms[i]) * sig_norm
            phi_margin = max(phi_margin,
                             linalg.spectral_norm(phi_nodes[t, i] - cov_run.phi[t]) - phi_t)
            sigma_margin = max(sigma_margin,
                               linalg.spectral_norm(filt[i] - cov_run.sigma_filt[t])
                               - (growth - 1.0) * sig_norm)
    return PerturbedCovariances(sigma_nodes, phi_nodes, gains_nodes, delta_series,
                                recursion_margin, phi_margin, sigma_margin, cov_run)


@dataclass
class NoiseBank:
    """Pre-drawn noise shared across Monte Carlo runs (common random numbers)."""

    x0: np.ndarray                 # (n_traj, N)
    w: np.ndarray                  # (T, n_traj, N)
    v: list[np.ndarray]            # per node, (T, n_traj, M)


def make_noise_bank(model: SystemModel, suite: SensorSuite, horizon: int,
                    n_traj: int, rng: Rng) -> NoiseBank:
    chol_p0 = np.linalg.cholesky(model.p0)
    chol_q = np.linalg.cholesky(model.q)
    x0 = model.mu + rng.standard_normal((n_traj, model.n)) @ chol_p0.T
    w = np.einsum("tjn,mn->tjm", rng.standard_normal((horizon, n_traj, model.n)), chol_q)
    v = []
    for sensor in suite.nodes:
        chol_r = np.linalg.cholesky(sensor.r)
        v.append(np.einsum("tjm,km->tjk",
                           rng.standard_normal((horizon, n_traj, sensor.m)), chol_r))
    return NoiseBank(x0=x0, w=w, v=v)


def sample_decoupled_mismatch(model: SystemModel, suite: SensorSuite,
                              perturbed: PerturbedCovariances,
                              noise: NoiseBank) -> np.ndarray:
    """Sampled ||E{x_tilde x_tilde'}||^(1/2) per step for the stacked
    node-estimate error under exact signal fusion.

    The decoupled local filters run with the perturbed structural data and
    their node-sum is compared against the centralized estimate; the stacked
    error is I copies of that difference, so its second-moment norm is
    I times the sampled moment norm.
    """
    cov_run = perturbed.cov_run
    horizon = noise.w.shape[0]
    n_traj = noise.x0.shape[0]
    i_nodes, n = suite.i_nodes, model.n
    ct_rinv, _ = suite.info_blocks()
    eye = np.eye(n)
    x_true = noise.x0.copy()
    x_central = np.tile(model.mu, (n_traj, 1))
    xi = np.tile(model.mu / i_nodes, (i_nodes, n_traj, 1))
    out = np.zeros(horizon)
    for t in range(1, horizon + 1):
        x_true = x_true @ model.a.T + noise.w[t - 1]
        psi_sig = np.zeros((n_traj, n))
        trans_central = (eye - cov_run.phi[t]) @ model.a
        x_central = x_central @ trans_central.T
        for i, sensor in enumerate(suite.nodes):
            y = x_true @ sensor.c.T + noise.v[i][t - 1]
            psi_sig += y @ ct_rinv[i].T
            trans = (eye - perturbed.phi_nodes[t, i]) @ model.a
            xi[i] = xi[i] @ trans.T + y @ perturbed.gains_nodes[t, i].T
        x_central = x_central + psi_sig @ cov_run.sigma_filt[t].T
        diff = x_central - xi.sum(axis=0)
        moment = diff.T @ diff / n_traj
        top = max(float(np.linalg.eigvalsh(linalg.sym(moment))[-1]), 0.0)
        out[t - 1] = np.sqrt(i_nodes * top)
    return out


@dataclass
class BoundValidationSample:
    psi_tilde_bar: float
    delta_bar: float
    error_bound: float
    max_sampled: float
    max_delta: float
    bound_ok: bool
    delta_ok: bool


@dataclass
class BoundValidation:
    samples: list[BoundValidationSample]
    recursion_margin: float
    phi_margin: float
    sigma_margin: float
    threshold: float

    @property
    def all_ok(self) -> bool:
        return all(s.bound_ok and s.delta_ok for s in self.samples)


def validate_error_bound(model: SystemModel, suite: SensorSuite, horizon: int,
                         n_perturbations: int, n_traj: int, rng: Rng,
                         slack: float = 0.05, fraction_low: float = 1e-3,
                         fraction_high: float = 0.3) -> BoundValidation:
    """Monte Carlo check of the accuracy bound over random admissible
    structural perturbations.

    Magnitudes are sampled log-uniformly in [fraction_low, fraction_high]
    times the stability threshold; the upper fraction keeps the fixed-point
    equation solvable (see the threshold and fixed-point notes). Noise is
    shared across perturbations.
    """
    cov_run = run_centralized_covariances(model, suite, horizon)
    base = compute_bound_inputs(model, suite, horizon, 0.0, cov_run)
    threshold = stability_threshold(base)
    noise = make_noise_bank(model, suite, horizon, n_traj, rng.spawn("noise"))
    pert_rng = rng.spawn("perturbations")
    log_lo, log_hi = np.log(fraction_low), np.log(fraction_high)
    samples = []
    rec_margin = -np.inf
    phi_margin = -np.inf
    sig_margin = -np.inf
    for _ in range(n_perturbations):
        frac = float(np.exp(log_lo + (log_hi - log_lo) * pert_rng.uniforms(1)[0]))
        magnitude = frac * threshold
        perts = random_structural_perturbations(model.n, suite.i_nodes, magnitude, pert_rng)
        inputs = BoundInputs(**{**base.__dict__, "psi_tilde_bar": magnitude})
        delta = delta_bar(inputs)
        bound = error_bound(inputs, delta)
        perturbed = run_perturbed_covariances(model, suite, perts, horizon, cov_run)
        sampled = sample_decoupled_mismatch(model, suite, perturbed, noise)
        max_sampled = float(np.max(sampled))
        max_delta = float(np.max(perturbed.delta_series))
        rec_margin = max(rec_margin, perturbed.recursion_margin)
        phi_margin = max(phi_margin, perturbed.phi_margin)
        sig_margin = max(sig_margin, perturbed.sigma_margin)
        samples.append(BoundValidationSample(
            psi_tilde_bar=magnitude, delta_bar=delta, error_bound=bound,
            max_sampled=max_sampled, max_delta=max_delta,
            bound_ok=max_sampled <= bound * (1.0 + slack),
            delta_ok=max_delta <= delta + 1e-10,
        ))
    return BoundValidation(samples, rec_margin, phi_margin, sig_margin, threshold)
