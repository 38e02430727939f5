"""Evaluation, normalized-score statistics, and the gradient-estimator check.

The estimator check instantiates the hyper-parameter-to-update chain on a
synthetic quadratic problem: psi'(eta) = psi + eta * g with objective
L(psi) = -psi' A psi / 2 + b' psi. It compares

* the REINFORCE-form estimate (1/(sigma N)) sum_j L(psi'(eta_j)) eps_j with
  eps_j = (eta_j - mu) / sigma, sampled antithetically to keep the 1/sigma
  variance blow-up from swamping the expectation, and
* its reparameterized counterpart mean_j grad L(psi'(eta_j)) . g,

against the analytic product [grad L]_{psi + mu g} . g. For the quadratic
objective both estimators are exactly unbiased at every sigma; the
reparameterized form's sampling deviation shrinks proportionally to sigma,
which is the vanishing-with-sigma behavior the check exercises.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .envs import Env
from .td3 import AgentParams, select_action


def evaluate_policy(agent: AgentParams, env: Env, episodes: int, seed: int) -> float:
    """Mean undiscounted return of the deterministic policy over fixed seeds."""
    if episodes < 1:
        raise ValueError("episodes must be >= 1")
    total = 0.0
    for i in range(episodes):
        obs = env.reset(seed + i)
        done = False
        while not done:
            obs, reward, done = env.step(select_action(agent, obs, 0.0))
            total += reward
    return total / episodes


def normalized_score(r: float, low: float, high: float) -> float:
    """(R - L) / (U - L); intentionally not clipped to [0, 1]."""
    if high <= low:
        raise ValueError(f"anchors require high > low, got low={low} high={high}")
    return (r - low) / (high - low)


@dataclass
class ScoreTable:
    """Normalized scores Z[algo][task][tick] plus the per-task anchors."""

    scores: np.ndarray  # (n_algos, n_tasks, n_ticks)
    low: np.ndarray  # (n_tasks,)
    high: np.ndarray  # (n_tasks,)
    ticks: np.ndarray  # environment steps per tick
    algos: tuple[str, ...] = ()
    tasks: tuple[str, ...] = ()


def aggregate_stats(table: ScoreTable):
    """Per-algorithm curves over ticks: (mean, median, best_ratio).

    mean_t^i and median_t^i aggregate Z_t^{i,j} across tasks j; best_ratio_t^i
    is the fraction of tasks where algorithm i attains the per-task argmax,
    with exact ties split equally among the tied algorithms.
    """
    z = np.asarray(table.scores, dtype=np.float64)
    if z.ndim != 3 or z.size == 0:
        raise ValueError("score table must be a non-empty (algos, tasks, ticks) array")
    n_algos, n_tasks, n_ticks = z.shape
    # accumulate across tasks in fixed left-to-right order so results are
    # reproducible bit-for-bit regardless of array layout
    total = np.zeros((n_algos, n_ticks))
    for j in range(n_tasks):
        total += z[:, j, :]
    mean = total / n_tasks
    median = np.median(z, axis=1)
    best = z.max(axis=0, keepdims=True)
    tied = z == best
    n_tied = tied.sum(axis=0, keepdims=True)
    share = np.zeros((n_algos, n_ticks))
    tie_share = tied / n_tied
    for j in range(n_tasks):
        share += tie_share[:, j, :]
    best_ratio = share / n_tasks
    return mean, median, best_ratio


@dataclass
class Prop1Problem:
    """Quadratic meta-objective with a linear hyper-parameter-to-update chain."""

    a_mat: np.ndarray  # symmetric positive-definite
    b: np.ndarray
    psi: np.ndarray
    g: np.ndarray  # update direction
    mu: float

    def __post_init__(self) -> None:
        self.a_mat = np.atleast_2d(np.asarray(self.a_mat, dtype=np.float64))
        self.b = np.atleast_1d(np.asarray(self.b, dtype=np.float64))
        self.psi = np.atleast_1d(np.asarray(self.psi, dtype=np.float64))
        self.g = np.atleast_1d(np.asarray(self.g, dtype=np.float64))
        if not np.allclose(self.a_mat, self.a_mat.T):
            raise ValueError("A must be symmetric")
        if np.any(np.linalg.eigvalsh(self.a_mat) <= 0):
            raise ValueError("A must be positive-definite")


def quadratic_value(problem: Prop1Problem, psis: np.ndarray) -> np.ndarray:
    """L(psi) = -0.5 psi'A psi + b'psi for a batch of points (rows)."""
    p = np.atleast_2d(psis)
    return -0.5 * np.einsum("ij,jk,ik->i", p, problem.a_mat, p) + p @ problem.b


def quadratic_grad(problem: Prop1Problem, psis: np.ndarray) -> np.ndarray:
    p = np.atleast_2d(psis)
    return -(p @ problem.a_mat) + problem.b


def analytic_chain_gradient(problem: Prop1Problem) -> float:
    """[grad_psi L]_{psi = psi + mu g} . g, the analytic side of the check."""
    point = problem.psi + problem.mu * problem.g
    return float(quadratic_grad(problem, point[None, :])[0] @ problem.g)


@dataclass
class Prop1Result:
    es_estimate: float
    reparam_estimate: float
    analytic: float
    relative_error: float
    stderr: float
    absolute_error_used: bool  # flagged when |analytic| is ~0


def _antithetic_noise(n: int, rng: np.random.Generator) -> np.ndarray:
    half = n // 2
    eps = rng.standard_normal(half)
    parts = [eps, -eps]
    if n % 2:
        parts.append(rng.standard_normal(1))
    return np.concatenate(parts)


def prop1_check(
    problem: Prop1Problem,
    sigma: float,
    n_samples: int,
    rng: np.random.Generator,
    antithetic: bool = True,
) -> Prop1Result:
    """Monte-Carlo ES estimate vs the analytic chain gradient.

    Samples eta ~ N(mu, sigma^2), by default in antithetic pairs (the
    REINFORCE form's per-sample variance grows like 1/sigma^2, so plain
    sampling drowns the expectation at small sigma). Returns the REINFORCE
    estimate, its reparameterized counterpart, and the relative error of
    the REINFORCE form (absolute error when the analytic value is ~0,
    flagged).
    """
    if sigma <= 0:
        raise ValueError("sigma must be > 0")
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    if antithetic:
        eps = _antithetic_noise(n_samples, rng)
    else:
        eps = rng.standard_normal(n_samples)
    etas = problem.mu + sigma * eps
    psis = problem.psi[None, :] + etas[:, None] * problem.g[None, :]
    values = quadratic_value(problem, psis)
    per_sample = values * eps / sigma
    es = float(per_sample.mean())
    if antithetic and n_samples >= 4:
        # pairs are the independent units under antithetic sampling
        half = n_samples // 2
        units = 0.5 * (per_sample[:half] + per_sample[half : 2 * half])
    else:
        units = per_sample
    if units.size > 1:
        stderr = float(units.std(ddof=1) / np.sqrt(units.size))
    else:
        stderr = float("inf")
    reparam = float((quadratic_grad(problem, psis) @ problem.g).mean())
    analytic = analytic_chain_gradient(problem)
    if abs(analytic) > 1e-12:
        rel = abs(es - analytic) / abs(analytic)
        flagged = False
    else:
        rel = abs(es - analytic)
        flagged = True
    return Prop1Result(es, reparam, analytic, rel, stderr, flagged)
