"""Meta-gradient learning-rate adaptation for the deterministic actor-critic.

A separate critic approximates the current policy's action values and serves
as the meta objective mean_x Q_meta(x, pi(x)). The actor's realized update
direction u (parameter delta divided by the actor learning rate, so Adam's
internals are treated as constant) gives an analytic derivative of the meta
objective w.r.t. the actor learning rate:

    d_alpha = grad_{phi'} [mean_x Q_meta(x, pi_{phi'}(x))] . u,
    phi' = phi + alpha * u.

The learning rate then moves by Adam ascent and is clamped. The evaluation
runs in float64 end to end so the derivative matches finite differences
along the fixed direction essentially exactly.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .net import (
    AdamState,
    MlpParams,
    NumericError,
    adam_init,
    adam_step,
    mlp_backward_at,
    mlp_forward_trace,
    mlp_forward_trace_at,
    mlp_init,
)
from .replay import NStepBatch
from .td3 import AgentParams, Td3Hyper, compute_target

ALPHA_CLAMP = (1e-6, 1e-1)


@dataclass
class MetaState:
    q_meta: MlpParams
    q_meta_adam: AdamState
    alpha: np.ndarray  # [alpha_pi, alpha_q]
    alpha_adam: AdamState
    beta_meta: float
    tune_critic_lr: bool = False
    clamp: tuple[float, float] = ALPHA_CLAMP


def meta_init(
    agent: AgentParams,
    seed: int,
    beta_meta: float = 1e-4,
    alpha_pi: float = 1e-3,
    alpha_q: float = 1e-3,
    tune_critic_lr: bool = False,
) -> MetaState:
    """Fresh meta critic with the critic's architecture but its own init draw."""
    q_meta = mlp_init(agent.critic1.layer_sizes, "identity", seed=seed)
    return MetaState(
        q_meta=q_meta,
        q_meta_adam=adam_init(q_meta.flat.size),
        alpha=np.array([alpha_pi, alpha_q], dtype=np.float64),
        alpha_adam=adam_init(2),
        beta_meta=beta_meta,
        tune_critic_lr=tune_critic_lr,
    )


def meta_critic_update(
    meta: MetaState,
    agent: AgentParams,
    batch: NStepBatch,
    h: Td3Hyper,
    rng: np.random.Generator,
):
    """One TD step of the meta critic toward the agent's own n-step target.

    Same update rule as the main critics (shared twin-min target from the
    agent's target networks) but fed an independent batch. Returns
    (meta', loss).
    """
    target = compute_target(agent, batch, h, rng)
    xa = np.concatenate([batch.obs0, batch.act0], axis=1)
    out, trace = mlp_forward_trace(meta.q_meta, xa)
    err = out[:, 0] - target
    loss = float(np.mean(err**2))
    if not np.isfinite(loss):
        raise NumericError(f"non-finite meta-critic loss {loss}")
    q_meta, q_adam = meta.q_meta, meta.q_meta_adam
    if h.lr_critic > 0:
        upstream = (2.0 / xa.shape[0]) * err[:, None]
        grad, _ = mlp_backward_at(meta.q_meta, meta.q_meta.flat, trace, upstream)
        flat, q_adam = adam_step(meta.q_meta.flat, grad, meta.q_meta_adam, h.lr_critic)
        q_meta = meta.q_meta.with_flat(flat)
    return replace(meta, q_meta=q_meta, q_meta_adam=q_adam), loss


def meta_objective_gradient(
    meta: MetaState, actor: MlpParams, actor_flat64: np.ndarray, obs_batch: np.ndarray
) -> tuple[float, np.ndarray]:
    """(value, gradient w.r.t. the actor parameters) of
    mean_x Q_meta(x, pi(x)) evaluated at the float64 actor vector."""
    obs = np.asarray(obs_batch, dtype=np.float64)
    a, trace_a = mlp_forward_trace_at(actor, actor_flat64, obs)
    xa = np.concatenate([obs, a], axis=1)
    q, trace_q = mlp_forward_trace(meta.q_meta, xa)
    value = float(np.mean(q[:, 0]))
    upstream = np.full((obs.shape[0], 1), 1.0 / obs.shape[0])
    _, dxa = mlp_backward_at(meta.q_meta, meta.q_meta.flat, trace_q, upstream)
    da = dxa[:, obs.shape[1] :]
    grad_phi, _ = mlp_backward_at(actor, actor_flat64, trace_a, da)
    return value, grad_phi


def metagrad_alpha_update(
    meta: MetaState,
    agent_before: AgentParams,
    u: np.ndarray,
    obs_batch: np.ndarray,
    u_critic: np.ndarray | None = None,
    critic_fd_scale: float = 1e-4,
):
    """Meta derivative of the actor objective along the realized update
    direction, pushed into the learning rates by Adam ascent with clamping.

    ``u`` is the actor update direction (realized delta / alpha_pi), treated
    as constant w.r.t. alpha. Returns (meta', delta_alpha array).
    """
    alpha_pi = float(meta.alpha[0])
    phi = agent_before.actor.flat.astype(np.float64)
    phi_after = phi + alpha_pi * u
    _, grad_phi = meta_objective_gradient(meta, agent_before.actor, phi_after, obs_batch)
    d_alpha_pi = float(grad_phi @ u)
    d_alpha_q = 0.0
    if meta.tune_critic_lr and u_critic is not None:
        d_alpha_q = _critic_lr_derivative(
            meta, agent_before, u, u_critic, obs_batch, critic_fd_scale
        )
    d_alpha = np.array([d_alpha_pi, d_alpha_q])
    if not np.all(np.isfinite(d_alpha)):
        raise NumericError("non-finite meta-gradient")
    alpha, alpha_adam = meta.alpha, meta.alpha_adam
    if meta.beta_meta > 0:
        grads = -d_alpha
        if not meta.tune_critic_lr:
            grads = grads * np.array([1.0, 0.0])
        alpha, alpha_adam = adam_step(meta.alpha, grads, meta.alpha_adam, meta.beta_meta)
    alpha = np.clip(alpha, meta.clamp[0], meta.clamp[1])
    return replace(meta, alpha=alpha, alpha_adam=alpha_adam), d_alpha


def _actor_ascent_direction(
    agent: AgentParams, critic_flat64: np.ndarray, obs: np.ndarray
) -> np.ndarray:
    """Gradient of mean Q1(x, pi(x)) w.r.t. the actor, at a shifted critic vector."""
    a, trace_a = mlp_forward_trace(agent.actor, obs)
    xa = np.concatenate([obs, a], axis=1)
    _, trace_q = mlp_forward_trace_at(agent.critic1, critic_flat64, xa)
    upstream = np.full((obs.shape[0], 1), 1.0 / obs.shape[0])
    _, dxa = mlp_backward_at(agent.critic1, critic_flat64, trace_q, upstream)
    grad_phi, _ = mlp_backward_at(agent.actor, agent.actor.flat, trace_a, dxa[:, obs.shape[1] :])
    return grad_phi


def _critic_lr_derivative(
    meta: MetaState,
    agent: AgentParams,
    u_actor: np.ndarray,
    u_critic: np.ndarray,
    obs_batch: np.ndarray,
    fd_scale: float,
) -> float:
    """d/d(alpha_q) of the meta objective through the critic's effect on the
    actor ascent direction, via a central difference along u_critic.

    The actor direction v(alpha_q) = grad_phi mean Q1_{theta + alpha_q u_q}
    is differentiated numerically (the engine is first-order only); the
    chain closes with the analytic meta-objective gradient.
    """
    obs = np.asarray(obs_batch, dtype=np.float64)
    alpha_pi, alpha_q = float(meta.alpha[0]), float(meta.alpha[1])
    theta = agent.critic1.flat.astype(np.float64)
    delta = fd_scale * max(alpha_q, 1e-8)
    v_plus = _actor_ascent_direction(agent, theta + (alpha_q + delta) * u_critic, obs)
    v_minus = _actor_ascent_direction(agent, theta + (alpha_q - delta) * u_critic, obs)
    dv = (v_plus - v_minus) / (2.0 * delta)
    phi_after = agent.actor.flat.astype(np.float64) + alpha_pi * u_actor
    _, grad_phi = meta_objective_gradient(meta, agent.actor, phi_after, obs)
    return float(grad_phi @ (alpha_pi * dv))
