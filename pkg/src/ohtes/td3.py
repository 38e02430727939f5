"""Twin-critic, delayed-actor off-policy update rule with n-step targets.

The update is a pure function of (agent, buffer contents, hyper-parameters,
rng); `td3_update_round` is the composite step the tuners treat as the
black-box update. Targets always come from the target networks and use the
elementwise minimum of the two target critics.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .envs import Env
from .net import (
    AdamState,
    MlpParams,
    NumericError,
    adam_init,
    adam_step,
    mlp_backward,
    mlp_forward,
    mlp_forward_trace,
    mlp_init,
    polyak_update,
)
from .replay import NStepBatch, ReplayBuffer, Transition


@dataclass
class Td3Hyper:
    lr_actor: float = 1e-3
    lr_critic: float = 1e-3
    n_step: int = 1
    gamma: float = 0.99
    rho: float = 0.005
    policy_delay: int = 2
    target_noise_std: float = 0.2
    target_noise_clip: float = 0.5
    exploration_noise_std: float = 0.1
    batch_size: int = 100
    grad_steps_per_round: int = 0  # 0 = one per environment step collected

    def validate(self) -> None:
        if self.lr_actor < 0 or self.lr_critic < 0:
            raise ValueError("learning rates must be >= 0")
        if self.n_step < 1 or self.policy_delay < 1 or self.batch_size < 1:
            raise ValueError("n_step, policy_delay and batch_size must be >= 1")
        if not 0.0 < self.gamma < 1.0:
            raise ValueError("gamma must be in (0, 1)")
        if not 0.0 < self.rho <= 1.0:
            raise ValueError("rho must be in (0, 1]")
        if min(self.target_noise_std, self.target_noise_clip, self.exploration_noise_std) < 0:
            raise ValueError("noise scales must be >= 0")


@dataclass
class AgentParams:
    actor: MlpParams
    critic1: MlpParams
    critic2: MlpParams
    target_actor: MlpParams
    target_critic1: MlpParams
    target_critic2: MlpParams
    actor_adam: AdamState
    critic1_adam: AdamState
    critic2_adam: AdamState
    action_low: np.ndarray
    action_high: np.ndarray
    update_counter: int = 0

    @property
    def obs_dim(self) -> int:
        return self.actor.layer_sizes[0]

    @property
    def act_dim(self) -> int:
        return self.actor.layer_sizes[-1]


def agent_init(
    obs_dim: int,
    act_dim: int,
    action_low: np.ndarray,
    action_high: np.ndarray,
    hidden: tuple[int, ...],
    seed: int,
) -> AgentParams:
    """Fresh actor, twin critics and target copies; one init stream per network."""
    low = np.asarray(action_low, dtype=np.float64)
    high = np.asarray(action_high, dtype=np.float64)
    scale = float(np.max(np.abs(np.concatenate([low, high]))))
    seqs = np.random.SeedSequence(seed).spawn(3)
    actor = mlp_init((obs_dim, *hidden, act_dim), "tanh", seed=seqs[0], output_scale=scale)
    critic1 = mlp_init((obs_dim + act_dim, *hidden, 1), "identity", seed=seqs[1])
    critic2 = mlp_init((obs_dim + act_dim, *hidden, 1), "identity", seed=seqs[2])
    return AgentParams(
        actor=actor,
        critic1=critic1,
        critic2=critic2,
        target_actor=actor.copy(),
        target_critic1=critic1.copy(),
        target_critic2=critic2.copy(),
        actor_adam=adam_init(actor.flat.size),
        critic1_adam=adam_init(critic1.flat.size),
        critic2_adam=adam_init(critic2.flat.size),
        action_low=low,
        action_high=high,
    )


def _copy_adam(state: AdamState) -> AdamState:
    return replace(state, m=state.m.copy(), v=state.v.copy())


def clone_agent(agent: AgentParams) -> AgentParams:
    return replace(
        agent,
        actor=agent.actor.copy(),
        critic1=agent.critic1.copy(),
        critic2=agent.critic2.copy(),
        target_actor=agent.target_actor.copy(),
        target_critic1=agent.target_critic1.copy(),
        target_critic2=agent.target_critic2.copy(),
        actor_adam=_copy_adam(agent.actor_adam),
        critic1_adam=_copy_adam(agent.critic1_adam),
        critic2_adam=_copy_adam(agent.critic2_adam),
    )


def compute_target(
    agent: AgentParams, batch: NStepBatch, h: Td3Hyper, rng: np.random.Generator
) -> np.ndarray:
    """ret_n + w * min(Q_tgt1, Q_tgt2)(x_n, clip(pi_tgt(x_n) + clipped noise)).

    Uses target networks only.
    """
    a = mlp_forward(agent.target_actor, batch.obs_n)
    if h.target_noise_std > 0:
        noise = rng.normal(0.0, h.target_noise_std, size=a.shape)
        np.clip(noise, -h.target_noise_clip, h.target_noise_clip, out=noise)
        a = a + noise
    a = np.clip(a, agent.action_low, agent.action_high)
    xa = np.concatenate([batch.obs_n, a], axis=1)
    q1 = mlp_forward(agent.target_critic1, xa)[:, 0]
    q2 = mlp_forward(agent.target_critic2, xa)[:, 0]
    return batch.ret_n + batch.bootstrap_weight * np.minimum(q1, q2)


def critic_update(
    agent: AgentParams, batch: NStepBatch, h: Td3Hyper, rng: np.random.Generator
):
    """One Adam step on each critic toward the shared target.

    Returns (agent', pre-update MSE averaged over the two critics).
    """
    target = compute_target(agent, batch, h, rng)
    xa = np.concatenate([batch.obs0, batch.act0], axis=1)
    bsz = xa.shape[0]
    losses = []
    new = {}
    for name in ("critic1", "critic2"):
        critic: MlpParams = getattr(agent, name)
        state: AdamState = getattr(agent, name + "_adam")
        out, trace = mlp_forward_trace(critic, xa)
        err = out[:, 0] - target
        losses.append(float(np.mean(err**2)))
        upstream = (2.0 / bsz) * err[:, None]
        grad, _ = mlp_backward(critic, trace, upstream)
        if h.lr_critic > 0:
            flat, state = adam_step(critic.flat, grad, state, h.lr_critic)
            critic = critic.with_flat(flat)
        new[name] = critic
        new[name + "_adam"] = state
    loss = 0.5 * (losses[0] + losses[1])
    if not np.isfinite(loss):
        raise NumericError(f"non-finite critic loss {loss}")
    return replace(agent, **new), loss


def actor_update(agent: AgentParams, obs_batch: np.ndarray, h: Td3Hyper):
    """Ascend mean Q1(x, pi(x)); then Polyak-update all three targets.

    Returns (agent', pre-update objective value).
    """
    obs = np.asarray(obs_batch, dtype=np.float64)
    bsz = obs.shape[0]
    a, trace_a = mlp_forward_trace(agent.actor, obs)
    xa = np.concatenate([obs, a], axis=1)
    q, trace_q = mlp_forward_trace(agent.critic1, xa)
    objective = float(np.mean(q[:, 0]))
    upstream_q = np.full((bsz, 1), 1.0 / bsz)
    _, dxa = mlp_backward(agent.critic1, trace_q, upstream_q)
    da = dxa[:, obs.shape[1] :]
    grad_actor, _ = mlp_backward(agent.actor, trace_a, da)
    actor = agent.actor
    actor_adam = agent.actor_adam
    if h.lr_actor > 0:
        flat, actor_adam = adam_step(actor.flat, -grad_actor, actor_adam, h.lr_actor)
        actor = actor.with_flat(flat)
    return (
        replace(
            agent,
            actor=actor,
            actor_adam=actor_adam,
            target_actor=polyak_update(agent.target_actor, actor, h.rho),
            target_critic1=polyak_update(agent.target_critic1, agent.critic1, h.rho),
            target_critic2=polyak_update(agent.target_critic2, agent.critic2, h.rho),
        ),
        objective,
    )


def td3_update_round(
    agent: AgentParams,
    buffer: ReplayBuffer,
    h: Td3Hyper,
    rng: np.random.Generator,
    grad_steps: int | None = None,
) -> AgentParams:
    """h.grad_steps_per_round critic updates with interleaved delayed actor updates."""
    steps = h.grad_steps_per_round if grad_steps is None else grad_steps
    for _ in range(steps):
        batch = buffer.sample_nstep(h.batch_size, h.n_step, h.gamma, rng)
        agent, _ = critic_update(agent, batch, h, rng)
        agent = replace(agent, update_counter=agent.update_counter + 1)
        if agent.update_counter % h.policy_delay == 0:
            agent, _ = actor_update(agent, batch.obs0, h)
    return agent


def select_action(
    agent: AgentParams,
    obs: np.ndarray,
    noise_std: float,
    rng: np.random.Generator | None = None,
) -> np.ndarray:
    """clip(pi(obs) + N(0, noise_std^2), action bounds); noise_std=0 is deterministic."""
    a = mlp_forward(agent.actor, np.asarray(obs, dtype=np.float64))
    if noise_std > 0:
        if rng is None:
            raise ValueError("rng required when noise_std > 0")
        a = a + rng.normal(0.0, noise_std, size=a.shape)
    return np.clip(a, agent.action_low, agent.action_high)


def collect_episode(
    agent: AgentParams,
    env: Env,
    buffer: ReplayBuffer | None,
    noise_std: float,
    reset_seed: int,
    rng: np.random.Generator | None,
) -> float:
    """Roll out one episode; optionally append transitions. Returns the
    undiscounted episode return. Built-in tasks end only by time limit, so
    stored transitions are never physical terminals."""
    eid = buffer.new_episode_id() if buffer is not None else 0
    obs = env.reset(reset_seed)
    total = 0.0
    step = 0
    done = False
    while not done:
        action = select_action(agent, obs, noise_std, rng)
        next_obs, reward, done = env.step(action)
        total += reward
        if buffer is not None:
            buffer.append(Transition(obs, action, reward, next_obs, False, eid, step))
        obs = next_obs
        step += 1
    return total


def collect_random_episode(
    env: Env, buffer: ReplayBuffer, reset_seed: int, rng: np.random.Generator
) -> float:
    """Warmup rollout with uniform random actions."""
    eid = buffer.new_episode_id()
    obs = env.reset(reset_seed)
    total = 0.0
    step = 0
    done = False
    low, high = env.spec.action_low, env.spec.action_high
    while not done:
        action = rng.uniform(low, high)
        next_obs, reward, done = env.step(action)
        total += reward
        buffer.append(Transition(obs, action, reward, next_obs, False, eid, step))
        obs = next_obs
        step += 1
    return total
