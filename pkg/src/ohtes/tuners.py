"""Online hyper-parameter adaptation over a population sharing one replay buffer.

Continuous hyper-parameters (log10 learning rates) follow a Gaussian whose
mean moves by an ES gradient step or whose mean and scale move by a CEM
elite update. Discrete hyper-parameters (the n-step horizon) follow a
categorical distribution whose logits move by a score-function estimate
pushed through Adam.

The ES ascent direction is the standardized-noise estimator
(1/(sigma N)) sum_j f_j eps_j with eps_j = (eta_j - mu) / sigma, i.e. the
REINFORCE gradient of the Gaussian-smoothed objective. Fitness values are
standardized (mean 0, std 1) before tuner updates by default; raw mode
exists for exactness tests.

One adaptation round trains every population member against the buffer as
it stood at the start of the round, then collects all rollouts, then updates
the distribution. Within a round the members share common random numbers
(batch draws, exploration noise, reset seeds) so fitness differences come
from the hyper-parameters, not sampling luck.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from .envs import Env
from .net import AdamState, NumericError, adam_init, adam_step
from .replay import ReplayBuffer
from .td3 import (
    AgentParams,
    Td3Hyper,
    clone_agent,
    collect_episode,
    td3_update_round,
)
from . import seeds

LR_CLAMP = (1e-6, 1e-1)


def clamp_lr(log10_lr: float, lo: float = LR_CLAMP[0], hi: float = LR_CLAMP[1]) -> float:
    """10**log10_lr clamped into [lo, hi]; guards against extreme samples."""
    return float(min(max(10.0**log10_lr, lo), hi))


def standardize(fitness: np.ndarray) -> np.ndarray:
    f = np.asarray(fitness, dtype=np.float64)
    return (f - f.mean()) / (f.std() + 1e-8)


@dataclass
class FitnessRecord:
    eta: np.ndarray | int  # sampled hyper-parameter (vector or support index)
    fitness: float  # Monte-Carlo episode return
    agent_index: int


@dataclass
class GaussianTunerState:
    mu: np.ndarray  # log10 learning rates
    sigma: np.ndarray  # per-dimension scale, > 0
    beta: float  # ES step size (es-gradient mode)
    n_pop: int
    mode: str = "es-gradient"  # "es-gradient" | "cem"
    standardize: bool = True
    variance_floor: float = 1e-4

    def validate(self) -> None:
        if self.n_pop < 2:
            raise ValueError("population size must be >= 2")
        if np.any(self.sigma <= 0):
            raise ValueError("sigma must be positive")
        if self.mode not in ("es-gradient", "cem"):
            raise ValueError(f"unknown tuner mode {self.mode!r}")


def gaussian_tuner(
    mu: Sequence[float],
    sigma: float | Sequence[float],
    beta: float = 0.1,
    n_pop: int = 10,
    mode: str = "es-gradient",
    standardize: bool = True,
) -> GaussianTunerState:
    mu_arr = np.asarray(mu, dtype=np.float64)
    sig_arr = np.broadcast_to(np.asarray(sigma, dtype=np.float64), mu_arr.shape).copy()
    state = GaussianTunerState(mu_arr, sig_arr, beta, n_pop, mode, standardize)
    state.validate()
    return state


def gaussian_sample(state: GaussianTunerState, rng: np.random.Generator):
    """N i.i.d. draws eta_j = mu + sigma * eps_j; returns (etas, standardized eps)."""
    eps = rng.standard_normal((state.n_pop, state.mu.size))
    return state.mu + state.sigma * eps, eps


def es_gradient_direction(
    mu: np.ndarray, sigma: np.ndarray, etas: np.ndarray, fitness: np.ndarray
) -> np.ndarray:
    """(1/(sigma N)) sum_j f_j (eta_j - mu)/sigma, per dimension."""
    eps = (etas - mu) / sigma
    return (fitness[:, None] * eps).mean(axis=0) / sigma


def _fitness_array(records: Sequence[FitnessRecord], n_pop: int) -> np.ndarray:
    if len(records) != n_pop:
        raise ValueError(f"expected {n_pop} fitness records, got {len(records)}")
    f = np.array([r.fitness for r in records], dtype=np.float64)
    if not np.all(np.isfinite(f)):
        raise NumericError("non-finite fitness value")
    return f


def es_gradient_update(
    state: GaussianTunerState, records: Sequence[FitnessRecord]
) -> GaussianTunerState:
    """mu' = mu + beta * ES direction; sigma stays fixed in this mode."""
    if state.mode != "es-gradient":
        raise ValueError("es_gradient_update requires mode='es-gradient'")
    f = _fitness_array(records, state.n_pop)
    if state.standardize:
        f = standardize(f)
    etas = np.stack([np.asarray(r.eta, dtype=np.float64) for r in records])
    direction = es_gradient_direction(state.mu, state.sigma, etas, f)
    return replace(state, mu=state.mu + state.beta * direction)


def elite_indices(fitness: np.ndarray, n_elite: int) -> np.ndarray:
    """Top-n indices by fitness; rank-based, so affine fitness transforms
    cannot change the selection. Ties break toward earlier samples."""
    return np.argsort(-np.asarray(fitness), kind="stable")[:n_elite]


def cem_update(
    state: GaussianTunerState, records: Sequence[FitnessRecord]
) -> GaussianTunerState:
    """Elite (top half by fitness) mean/variance update with a variance floor."""
    if state.mode != "cem":
        raise ValueError("cem_update requires mode='cem'")
    if state.n_pop < 4:
        raise ValueError("cem mode needs a population of >= 4")
    f = _fitness_array(records, state.n_pop)
    etas = np.stack([np.asarray(r.eta, dtype=np.float64) for r in records])
    elite = etas[elite_indices(f, math.ceil(state.n_pop / 2))]
    mu = elite.mean(axis=0)
    var = elite.var(axis=0) + state.variance_floor
    return replace(state, mu=mu, sigma=np.sqrt(var))


def softmax(logits: np.ndarray) -> np.ndarray:
    z = np.asarray(logits, dtype=np.float64)
    z = z - z.max()
    e = np.exp(z)
    return e / e.sum()


@dataclass
class CategoricalTunerState:
    logits: np.ndarray
    adam: AdamState
    epsilon: float  # uniform-mixing probability when sampling
    n_pop: int  # records per logits update
    support: tuple[int, ...]  # n-step values the indices refer to
    beta: float = 0.02
    standardize: bool = True

    @property
    def k(self) -> int:
        return self.logits.size

    def validate(self) -> None:
        # K = 1 is allowed as the degenerate single-agent case (updates are 0)
        if self.k < 1 or len(self.support) != self.k:
            raise ValueError("support values must match the logits length")
        if not 0.0 <= self.epsilon <= 1.0:
            raise ValueError("epsilon must be in [0, 1]")


def categorical_tuner(
    support: Sequence[int],
    epsilon: float = 0.1,
    n_pop: int = 6,
    beta: float = 0.02,
    standardize: bool = True,
) -> CategoricalTunerState:
    k = len(support)
    state = CategoricalTunerState(
        logits=np.zeros(k),
        adam=adam_init(k),
        epsilon=epsilon,
        n_pop=n_pop,
        support=tuple(int(s) for s in support),
        beta=beta,
        standardize=standardize,
    )
    state.validate()
    return state


def categorical_probs(state: CategoricalTunerState) -> np.ndarray:
    return softmax(state.logits)


def sampling_probs(state: CategoricalTunerState) -> np.ndarray:
    """Effective sampling mixture: epsilon/K + (1 - epsilon) * softmax(logits)."""
    return state.epsilon / state.k + (1.0 - state.epsilon) * categorical_probs(state)


def categorical_sample(state: CategoricalTunerState, rng: np.random.Generator) -> int:
    """With probability epsilon uniform over K, else from softmax(logits)."""
    if rng.random() < state.epsilon:
        return int(rng.integers(state.k))
    cum = np.cumsum(categorical_probs(state))
    return int(np.searchsorted(cum, rng.random(), side="right").clip(0, state.k - 1))


def score_function_direction(
    logits: np.ndarray, indices: np.ndarray, fitness: np.ndarray
) -> np.ndarray:
    """(1/N) sum_j f_j (onehot(eta_j) - softmax(logits))."""
    p = softmax(logits)
    onehot = np.zeros((indices.size, logits.size))
    onehot[np.arange(indices.size), indices] = 1.0
    return (fitness[:, None] * (onehot - p)).mean(axis=0)


def score_function_update(
    state: CategoricalTunerState, records: Sequence[FitnessRecord]
) -> CategoricalTunerState:
    """Adam ascent on the logits along the score-function direction, then
    recentering to mean zero (softmax-invariant)."""
    f = _fitness_array(records, state.n_pop)
    if state.standardize:
        f = standardize(f)
    indices = np.array([int(r.eta) for r in records])
    direction = score_function_direction(state.logits, indices, f)
    logits, adam = adam_step(state.logits, -direction, state.adam, state.beta)
    logits = logits - logits.mean()
    return replace(state, logits=logits, adam=adam)


def fitness_estimate(returns: Sequence[float]) -> float:
    """Mean undiscounted episode return collected by one agent this round."""
    if len(returns) == 0:
        raise ValueError("fitness_estimate needs at least one episode return")
    return float(np.mean(np.asarray(returns, dtype=np.float64)))


# -- adaptation rounds ---------------------------------------------------------


@dataclass
class RoundConfig:
    master_seed: int
    exploration_noise_std: float = 0.1
    common_random_numbers: bool = True
    train_all_agents: bool = True
    lr_clamp: tuple[float, float] = LR_CLAMP
    max_workers: int = 1  # clone-training parallelism (OHT_ES_THREADS)


MAIN_MEMBER = 1_000_000  # member key reserved for the persistent main agent


def _round_gen(cfg: RoundConfig, name: str, round_index: int, member: int) -> np.random.Generator:
    """Per-member stream; population members collapse onto one shared stream
    under common random numbers. The main agent always keeps its own."""
    key = 0 if cfg.common_random_numbers and member != MAIN_MEMBER else member
    return seeds.stream_gen(cfg.master_seed, name, round_index, key)


def _round_seed(cfg: RoundConfig, name: str, round_index: int, member: int) -> int:
    key = 0 if cfg.common_random_numbers and member != MAIN_MEMBER else member
    return seeds.stream_int(cfg.master_seed, name, round_index, key)


def oht_es_continuous_round(
    main_agent: AgentParams,
    tuner: GaussianTunerState,
    buffer: ReplayBuffer,
    env_pool: Sequence[Env],
    h: Td3Hyper,
    cfg: RoundConfig,
    round_index: int,
    tuner_rng: np.random.Generator,
):
    """One sample/train/rollout/update round for continuous hyper-parameters.

    Clones the main agent N times; each clone trains one update round with
    its sampled learning rates and then rolls out one episode into the
    shared buffer. After the distribution update the main agent trains with
    the central rates and rolls out once. Returns (main', tuner', metrics).
    """
    etas, _ = gaussian_sample(tuner, tuner_rng)
    n = tuner.n_pop

    def train_clone(j: int) -> AgentParams:
        h_j = replace(
            h,
            lr_actor=clamp_lr(etas[j, 0], *cfg.lr_clamp),
            lr_critic=clamp_lr(etas[j, min(1, etas.shape[1] - 1)], *cfg.lr_clamp),
        )
        return td3_update_round(
            clone_agent(main_agent), buffer, h_j, _round_gen(cfg, "batch", round_index, j)
        )

    # phase 1 (train all members against the round-start buffer) only reads the
    # buffer, so it may fan out across threads without changing the result
    if cfg.max_workers > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=min(cfg.max_workers, n)) as pool:
            clones = list(pool.map(train_clone, range(n)))
    else:
        clones = [train_clone(j) for j in range(n)]
    records = []
    env_steps = 0
    for j, clone in enumerate(clones):
        env = env_pool[j % len(env_pool)]
        ret = collect_episode(
            clone,
            env,
            buffer,
            cfg.exploration_noise_std,
            _round_seed(cfg, "env", round_index, j),
            _round_gen(cfg, "explore", round_index, j),
        )
        env_steps += env.spec.episode_len
        records.append(FitnessRecord(etas[j].copy(), ret, j))
    tuner = es_gradient_update(tuner, records) if tuner.mode == "es-gradient" else cem_update(tuner, records)
    h_main = replace(
        h,
        lr_actor=clamp_lr(tuner.mu[0], *cfg.lr_clamp),
        lr_critic=clamp_lr(tuner.mu[min(1, tuner.mu.size - 1)], *cfg.lr_clamp),
    )
    main_agent = td3_update_round(
        main_agent, buffer, h_main, _round_gen(cfg, "batch", round_index, MAIN_MEMBER)
    )
    main_ret = collect_episode(
        main_agent,
        env_pool[0],
        buffer,
        cfg.exploration_noise_std,
        _round_seed(cfg, "env", round_index, MAIN_MEMBER),
        _round_gen(cfg, "explore", round_index, MAIN_MEMBER),
    )
    env_steps += env_pool[0].spec.episode_len
    metrics = {
        "env_steps": env_steps,
        "fitness": [r.fitness for r in records],
        "fitness_mean": fitness_estimate([r.fitness for r in records]),
        "main_return": main_ret,
        "mu": tuner.mu.copy(),
        "sigma": tuner.sigma.copy(),
    }
    return main_agent, tuner, metrics


def oht_es_discrete_round(
    agents: list[AgentParams],
    tuner: CategoricalTunerState,
    buffer: ReplayBuffer,
    env: Env,
    h_per_agent: Sequence[Td3Hyper],
    cfg: RoundConfig,
    tuner_rng: np.random.Generator,
    env_rng: np.random.Generator,
    explore_rng: np.random.Generator,
    batch_rng: np.random.Generator,
):
    """One logits-update cycle for the discrete n-step hyper-parameter.

    Repeats N times: sample an index, run one episode with that agent into
    the shared buffer, record its return as fitness, then train the agents
    (all K by default, or only the sampled one) for one update round each.
    Closes with one score-function logits update. Returns
    (agents', tuner', metrics).
    """
    records = []
    env_steps = 0
    agents = list(agents)
    for _ in range(tuner.n_pop):
        j = categorical_sample(tuner, tuner_rng)
        ret = collect_episode(
            agents[j],
            env,
            buffer,
            cfg.exploration_noise_std,
            int(env_rng.integers(0, 2**63)),
            explore_rng,
        )
        env_steps += env.spec.episode_len
        records.append(FitnessRecord(j, ret, j))
        trained = range(len(agents)) if cfg.train_all_agents else (j,)
        for k in trained:
            agents[k] = td3_update_round(agents[k], buffer, h_per_agent[k], batch_rng)
    tuner = score_function_update(tuner, records)
    metrics = {
        "env_steps": env_steps,
        "fitness": [r.fitness for r in records],
        "fitness_mean": fitness_estimate([r.fitness for r in records]),
        "indices": [int(r.eta) for r in records],
        "probs": categorical_probs(tuner),
    }
    return agents, tuner, metrics


# -- optional mode: ES over the actor parameter vector -------------------------


@dataclass
class EsRlState:
    """CEM distribution over the flat actor vector; critics stay gradient-trained."""

    mu_theta: np.ndarray  # float64 mean of the actor parameter vector
    sigma_theta: np.ndarray  # per-coordinate scale
    agent: AgentParams  # carries the shared critics and target networks
    n_pop: int = 10
    k_grad: int = 5  # members receiving TD3 updates each round
    variance_floor: float = 1e-8

    def mean_agent(self) -> AgentParams:
        return replace(self.agent, actor=self.agent.actor.with_flat(self.mu_theta))


def es_rl_state(agent: AgentParams, sigma: float = 0.02, n_pop: int = 10, k_grad: int = 5) -> EsRlState:
    flat = agent.actor.flat.astype(np.float64)
    return EsRlState(flat, np.full(flat.size, float(sigma)), agent, n_pop, k_grad)


def es_rl_round(
    state: EsRlState,
    buffer: ReplayBuffer,
    env: Env,
    h: Td3Hyper,
    cfg: RoundConfig,
    round_index: int,
    tuner_rng: np.random.Generator,
) -> tuple[EsRlState, dict]:
    """Sample N actors, TD3-train k of them, roll out all, CEM-update (mu, sigma)."""
    n, k = state.n_pop, min(state.k_grad, state.n_pop)
    thetas = state.mu_theta + state.sigma_theta * tuner_rng.standard_normal(
        (n, state.mu_theta.size)
    )
    agent = state.agent
    members = []
    for j in range(n):
        member = replace(
            clone_agent(agent), actor=agent.actor.with_flat(thetas[j])
        )
        if j < k:
            member = td3_update_round(
                member, buffer, h, _round_gen(cfg, "batch", round_index, j)
            )
            thetas[j] = member.actor.flat.astype(np.float64)
            # the shared critics follow the most recent gradient member
            agent = replace(
                agent,
                critic1=member.critic1,
                critic2=member.critic2,
                target_critic1=member.target_critic1,
                target_critic2=member.target_critic2,
                critic1_adam=member.critic1_adam,
                critic2_adam=member.critic2_adam,
                target_actor=member.target_actor,
                update_counter=member.update_counter,
            )
        members.append(member)
    fitness = np.empty(n)
    env_steps = 0
    for j, member in enumerate(members):
        fitness[j] = collect_episode(
            member,
            env,
            buffer,
            cfg.exploration_noise_std,
            _round_seed(cfg, "env", round_index, j),
            _round_gen(cfg, "explore", round_index, j),
        )
        env_steps += env.spec.episode_len
    elite = thetas[elite_indices(fitness, math.ceil(n / 2))]
    mu = elite.mean(axis=0)
    sigma = np.sqrt(elite.var(axis=0) + state.variance_floor)
    new_state = replace(state, mu_theta=mu, sigma_theta=sigma, agent=agent)
    metrics = {
        "env_steps": env_steps,
        "fitness": fitness.tolist(),
        "fitness_mean": float(fitness.mean()),
        "sigma_mean": float(sigma.mean()),
    }
    return new_state, metrics
