"""Training-loop orchestration for every algorithm mode, plus run artifacts.

Each run writes into its output directory:

* ``config.txt``    - the fully resolved configuration,
* ``progress.csv``  - one row per evaluation tick (decimal text, 9
  significant digits, LF line endings),
* ``checkpoint/``   - the final (or failure-time) evaluation agent.

Evaluation always uses an undelayed copy of the environment so curves stay
comparable across delay settings, and the deterministic policy with fixed
per-run evaluation seeds.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from . import seeds
from .config import RunConfig, config_lines
from .envs import Env, make_env
from .harness import evaluate_policy
from .metagrad import meta_critic_update, meta_init, metagrad_alpha_update
from .net import NumericError, adam_init, params_from_bytes, params_to_bytes
from .replay import ReplayBuffer, Transition
from .td3 import (
    AgentParams,
    Td3Hyper,
    actor_update,
    agent_init,
    collect_random_episode,
    critic_update,
    select_action,
    td3_update_round,
)
from .tuners import (
    RoundConfig,
    categorical_probs,
    categorical_sample,
    categorical_tuner,
    es_rl_round,
    es_rl_state,
    gaussian_tuner,
    oht_es_continuous_round,
    oht_es_discrete_round,
)


def fmt(x) -> str:
    """Decimal text at 9 significant digits (bit-exact across identical runs)."""
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return "%.9g" % float(x)


class ProgressWriter:
    def __init__(self, path: Path, columns: list[str]) -> None:
        self.columns = columns
        self._fh = open(path, "w", newline="\n")
        self._fh.write(",".join(columns) + "\n")
        self._fh.flush()

    def row(self, values) -> None:
        if len(values) != len(self.columns):
            raise ValueError("row width does not match the header")
        self._fh.write(",".join(fmt(v) for v in values) + "\n")
        self._fh.flush()

    def close(self) -> None:
        self._fh.close()


def td3_hyper(config: RunConfig) -> Td3Hyper:
    h = Td3Hyper(
        lr_actor=config.lr_actor,
        lr_critic=config.lr_critic,
        n_step=config.n_step,
        gamma=config.gamma,
        rho=config.rho,
        policy_delay=config.policy_delay,
        target_noise_std=config.target_noise_std,
        target_noise_clip=config.target_noise_clip,
        exploration_noise_std=config.exploration_noise_std,
        batch_size=config.batch_size,
        grad_steps_per_round=config.grad_steps_per_round,
    )
    h.validate()
    return h


@dataclass
class RunContext:
    config: RunConfig
    out: Path
    env: Env
    eval_env: Env
    buffer: ReplayBuffer
    h: Td3Hyper
    eval_seed: int
    steps: int = 0
    next_tick: int = 0
    last_agent: AgentParams | None = None


def _setup(config: RunConfig, out: Path) -> RunContext:
    env = make_env(config.env, config.delay)
    eval_env = make_env(config.env, delay=1)
    buffer = ReplayBuffer(config.buffer_capacity, env.spec.obs_dim, env.spec.act_dim)
    eval_seed = seeds.stream_int(config.seed, "eval")
    return RunContext(config, out, env, eval_env, buffer, td3_hyper(config), eval_seed)


def _warmup(ctx: RunContext) -> None:
    env_rng = seeds.stream_gen(ctx.config.seed, "warmup", 0)
    act_rng = seeds.stream_gen(ctx.config.seed, "warmup", 1)
    while ctx.steps < ctx.config.warmup_steps:
        collect_random_episode(ctx.env, ctx.buffer, int(env_rng.integers(0, 2**63)), act_rng)
        ctx.steps += ctx.env.spec.episode_len


def _emit_ticks(ctx: RunContext, writer: ProgressWriter, agent: AgentParams, extra) -> None:
    ctx.last_agent = agent
    while ctx.next_tick <= ctx.steps:
        ret = evaluate_policy(
            agent, ctx.eval_env, ctx.config.eval_episodes, ctx.eval_seed
        )
        writer.row([ctx.next_tick, ret, *extra()])
        ctx.next_tick += ctx.config.eval_every


def save_checkpoint(out: Path, agent: AgentParams, manifest_extra: dict | None = None) -> None:
    ckpt = out / "checkpoint"
    ckpt.mkdir(parents=True, exist_ok=True)
    nets = {
        "actor": agent.actor,
        "critic1": agent.critic1,
        "critic2": agent.critic2,
        "target_actor": agent.target_actor,
        "target_critic1": agent.target_critic1,
        "target_critic2": agent.target_critic2,
    }
    manifest = {
        "nets": {},
        "action_low": agent.action_low.tolist(),
        "action_high": agent.action_high.tolist(),
        "update_counter": agent.update_counter,
    }
    manifest.update(manifest_extra or {})
    for name, params in nets.items():
        (ckpt / f"{name}.bin").write_bytes(params_to_bytes(params))
        manifest["nets"][name] = {
            "output_activation": params.output_activation,
            "output_scale": params.output_scale,
        }
    (ckpt / "manifest.json").write_text(json.dumps(manifest, indent=1, sort_keys=True))


def load_checkpoint(out: Path) -> AgentParams:
    """Rebuild the evaluation agent (fresh optimizer states) from a checkpoint."""
    ckpt = Path(out) / "checkpoint"
    manifest = json.loads((ckpt / "manifest.json").read_text())
    nets = {}
    for name, info in manifest["nets"].items():
        nets[name] = params_from_bytes(
            (ckpt / f"{name}.bin").read_bytes(),
            info["output_activation"],
            info["output_scale"],
        )
    return AgentParams(
        actor=nets["actor"],
        critic1=nets["critic1"],
        critic2=nets["critic2"],
        target_actor=nets["target_actor"],
        target_critic1=nets["target_critic1"],
        target_critic2=nets["target_critic2"],
        actor_adam=adam_init(nets["actor"].flat.size),
        critic1_adam=adam_init(nets["critic1"].flat.size),
        critic2_adam=adam_init(nets["critic2"].flat.size),
        action_low=np.asarray(manifest["action_low"], dtype=np.float64),
        action_high=np.asarray(manifest["action_high"], dtype=np.float64),
        update_counter=manifest["update_counter"],
    )


def _fresh_agent(ctx: RunContext, index: int = 0) -> AgentParams:
    init_seed = seeds.stream_int(ctx.config.seed, "init", index)
    return agent_init(
        ctx.env.spec.obs_dim,
        ctx.env.spec.act_dim,
        ctx.env.spec.action_low,
        ctx.env.spec.action_high,
        ctx.config.hidden,
        init_seed,
    )


def _round_config(config: RunConfig) -> RoundConfig:
    return RoundConfig(
        master_seed=config.seed,
        exploration_noise_std=config.exploration_noise_std,
        common_random_numbers=config.tuner_crn,
        train_all_agents=config.tuner_train_all_agents,
        max_workers=max(1, int(os.environ.get("OHT_ES_THREADS", "1"))),
    )


def _round_steps(ctx: RunContext) -> int:
    return ctx.config.grad_steps_per_round or ctx.env.spec.episode_len


# -- per-algorithm loops -------------------------------------------------------


def _run_td3(ctx: RunContext, writer: ProgressWriter):
    agent = _fresh_agent(ctx)
    env_rng = seeds.stream_gen(ctx.config.seed, "env")
    explore_rng = seeds.stream_gen(ctx.config.seed, "explore")
    batch_rng = seeds.stream_gen(ctx.config.seed, "batch")
    _emit_ticks(ctx, writer, agent, lambda: [])
    _warmup(ctx)
    grad_steps = ctx.config.grad_steps_per_round or 1
    while ctx.steps < ctx.config.total_steps:
        eid = ctx.buffer.new_episode_id()
        obs = ctx.env.reset(int(env_rng.integers(0, 2**63)))
        done = False
        step_index = 0
        while not done and ctx.steps < ctx.config.total_steps:
            action = select_action(agent, obs, ctx.h.exploration_noise_std, explore_rng)
            next_obs, reward, done = ctx.env.step(action)
            ctx.buffer.append(Transition(obs, action, reward, next_obs, False, eid, step_index))
            obs = next_obs
            step_index += 1
            ctx.steps += 1
            agent = td3_update_round(agent, ctx.buffer, ctx.h, batch_rng, grad_steps=grad_steps)
            _emit_ticks(ctx, writer, agent, lambda: [])
    return agent, {}


def _run_metagrad(ctx: RunContext, writer: ProgressWriter):
    agent = _fresh_agent(ctx)
    meta = meta_init(
        agent,
        seed=seeds.stream_int(ctx.config.seed, "meta", 0),
        beta_meta=ctx.config.metagrad_beta,
        alpha_pi=ctx.config.lr_actor,
        alpha_q=ctx.config.lr_critic,
        tune_critic_lr=ctx.config.metagrad_tune_critic_lr,
    )
    env_rng = seeds.stream_gen(ctx.config.seed, "env")
    explore_rng = seeds.stream_gen(ctx.config.seed, "explore")
    batch_rng = seeds.stream_gen(ctx.config.seed, "batch")
    meta_rng = seeds.stream_gen(ctx.config.seed, "meta", 1)
    h = ctx.h
    alpha_cols = lambda: [meta.alpha[0], meta.alpha[1]]
    _emit_ticks(ctx, writer, agent, alpha_cols)
    _warmup(ctx)
    grad_steps = ctx.config.grad_steps_per_round or 1
    while ctx.steps < ctx.config.total_steps:
        eid = ctx.buffer.new_episode_id()
        obs = ctx.env.reset(int(env_rng.integers(0, 2**63)))
        done = False
        step_index = 0
        while not done and ctx.steps < ctx.config.total_steps:
            action = select_action(agent, obs, h.exploration_noise_std, explore_rng)
            next_obs, reward, done = ctx.env.step(action)
            ctx.buffer.append(Transition(obs, action, reward, next_obs, False, eid, step_index))
            obs = next_obs
            step_index += 1
            ctx.steps += 1
            for _ in range(grad_steps):
                batch = ctx.buffer.sample_nstep(h.batch_size, h.n_step, h.gamma, batch_rng)
                before_critic = (
                    agent.critic1.flat.astype(np.float64) if meta.tune_critic_lr else None
                )
                agent, _ = critic_update(agent, batch, h, batch_rng)
                agent = replace(agent, update_counter=agent.update_counter + 1)
                meta_batch = ctx.buffer.sample_nstep(h.batch_size, h.n_step, h.gamma, meta_rng)
                meta, _ = meta_critic_update(meta, agent, meta_batch, h, meta_rng)
                if agent.update_counter % h.policy_delay == 0:
                    before = agent
                    agent, _ = actor_update(agent, batch.obs0, h)
                    alpha_pi = float(meta.alpha[0])
                    u = (
                        agent.actor.flat.astype(np.float64)
                        - before.actor.flat.astype(np.float64)
                    ) / alpha_pi
                    u_critic = None
                    if meta.tune_critic_lr:
                        u_critic = (
                            agent.critic1.flat.astype(np.float64) - before_critic
                        ) / float(meta.alpha[1])
                    obs_meta = ctx.buffer.sample_nstep(
                        h.batch_size, h.n_step, h.gamma, meta_rng
                    ).obs0
                    meta, _ = metagrad_alpha_update(meta, before, u, obs_meta, u_critic)
                    h = replace(
                        h,
                        lr_actor=float(meta.alpha[0]),
                        lr_critic=float(meta.alpha[1]) if meta.tune_critic_lr else h.lr_critic,
                    )
            _emit_ticks(ctx, writer, agent, alpha_cols)
    return agent, {"alpha": meta.alpha.tolist()}


def _run_oht_continuous(ctx: RunContext, writer: ProgressWriter):
    config = ctx.config
    agent = _fresh_agent(ctx)
    mode = "cem" if config.algo == "oht-es-cem" else "es-gradient"
    tuner = gaussian_tuner(
        mu=config.tuner_mu_init,
        sigma=config.tuner_sigma,
        beta=config.resolved_tuner_beta(),
        n_pop=config.resolved_tuner_n(),
        mode=mode,
        standardize=config.tuner_standardize,
    )
    tuner = replace(tuner, variance_floor=config.tuner_variance_floor)
    tuner_rng = seeds.stream_gen(config.seed, "tuner")
    rcfg = _round_config(config)
    h = replace(ctx.h, grad_steps_per_round=_round_steps(ctx))
    fitness_mean = 0.0

    def extra():
        cols = [fitness_mean]
        cols.extend(tuner.mu.tolist())
        cols.extend(tuner.sigma.tolist())
        return cols

    _emit_ticks(ctx, writer, agent, extra)
    _warmup(ctx)
    round_index = 0
    while ctx.steps < config.total_steps:
        agent, tuner, metrics = oht_es_continuous_round(
            agent, tuner, ctx.buffer, [ctx.env], h, rcfg, round_index, tuner_rng
        )
        fitness_mean = metrics["fitness_mean"]
        ctx.steps += metrics["env_steps"]
        round_index += 1
        _emit_ticks(ctx, writer, agent, extra)
    return agent, {"mu": tuner.mu.tolist(), "sigma": tuner.sigma.tolist()}


def _run_oht_discrete(ctx: RunContext, writer: ProgressWriter):
    config = ctx.config
    support = config.tuner_support
    agents = [_fresh_agent(ctx, index=k) for k in range(len(support))]
    h_list = [
        replace(ctx.h, n_step=n, grad_steps_per_round=_round_steps(ctx)) for n in support
    ]
    tuner = categorical_tuner(
        support,
        epsilon=config.tuner_epsilon,
        n_pop=config.resolved_tuner_n(),
        beta=config.resolved_tuner_beta(),
        standardize=config.tuner_standardize,
    )
    tuner_rng = seeds.stream_gen(config.seed, "tuner")
    env_rng = seeds.stream_gen(config.seed, "env")
    explore_rng = seeds.stream_gen(config.seed, "explore")
    batch_rng = seeds.stream_gen(config.seed, "batch")
    eval_rng = seeds.stream_gen(config.seed, "tuner", 99)
    rcfg = _round_config(config)
    fitness_mean = 0.0

    def current_agent() -> AgentParams:
        if config.tuner_eval_sample:
            return agents[categorical_sample(tuner, eval_rng)]
        return agents[int(np.argmax(categorical_probs(tuner)))]

    def extra():
        return [fitness_mean, *categorical_probs(tuner).tolist()]

    _emit_ticks(ctx, writer, current_agent(), extra)
    _warmup(ctx)
    while ctx.steps < config.total_steps:
        agents, tuner, metrics = oht_es_discrete_round(
            agents,
            tuner,
            ctx.buffer,
            ctx.env,
            h_list,
            rcfg,
            tuner_rng,
            env_rng,
            explore_rng,
            batch_rng,
        )
        fitness_mean = metrics["fitness_mean"]
        ctx.steps += metrics["env_steps"]
        _emit_ticks(ctx, writer, current_agent(), extra)
    probs = categorical_probs(tuner)
    return current_agent(), {
        "probs": probs.tolist(),
        "mode_n": int(support[int(np.argmax(probs))]),
    }


def _run_es_rl(ctx: RunContext, writer: ProgressWriter):
    config = ctx.config
    state = es_rl_state(
        _fresh_agent(ctx),
        sigma=config.tuner_sigma_params,
        n_pop=config.resolved_tuner_n(),
        k_grad=config.tuner_k_grad,
    )
    tuner_rng = seeds.stream_gen(config.seed, "tuner")
    rcfg = _round_config(config)
    h = replace(ctx.h, grad_steps_per_round=_round_steps(ctx))
    fitness_mean = 0.0
    extra = lambda: [fitness_mean, float(state.sigma_theta.mean())]
    _emit_ticks(ctx, writer, state.mean_agent(), extra)
    _warmup(ctx)
    round_index = 0
    while ctx.steps < config.total_steps:
        state, metrics = es_rl_round(
            state, ctx.buffer, ctx.env, h, rcfg, round_index, tuner_rng
        )
        fitness_mean = metrics["fitness_mean"]
        ctx.steps += metrics["env_steps"]
        round_index += 1
        _emit_ticks(ctx, writer, state.mean_agent(), extra)
    return state.mean_agent(), {}


_COLUMNS = {
    "td3": [],
    "metagrad": ["alpha_pi", "alpha_q"],
    "es-rl": ["fitness_mean", "sigma_params_mean"],
}


def _columns(config: RunConfig) -> list[str]:
    base = ["step", "eval_return"]
    if config.algo in _COLUMNS:
        return base + _COLUMNS[config.algo]
    if config.algo in ("oht-es-continuous", "oht-es-cem"):
        d = len(config.tuner_mu_init)
        return base + ["fitness_mean"] + [f"mu_{i}" for i in range(d)] + [
            f"sigma_{i}" for i in range(d)
        ]
    if config.algo == "oht-es-discrete":
        return base + ["fitness_mean"] + [f"p_n{n}" for n in config.tuner_support]
    raise ValueError(config.algo)


_LOOPS = {
    "td3": _run_td3,
    "metagrad": _run_metagrad,
    "oht-es-continuous": _run_oht_continuous,
    "oht-es-cem": _run_oht_continuous,
    "oht-es-discrete": _run_oht_discrete,
    "es-rl": _run_es_rl,
}


def run(config: RunConfig) -> int:
    """Execute one training run; exit code 0 ok / 2 bad config / 3 numeric error."""
    try:
        config.validate()
    except ValueError as err:
        print(f"invalid config: {err}")
        return 2
    out = Path(config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.txt").write_text(config_lines(config))
    ctx = _setup(config, out)
    writer = ProgressWriter(out / "progress.csv", _columns(config))
    status = 0
    extra_manifest: dict = {}
    try:
        agent, extra_manifest = _LOOPS[config.algo](ctx, writer)
    except NumericError as err:
        print(f"numeric error after {ctx.steps} steps: {err}")
        status = 3
        agent = ctx.last_agent
    finally:
        writer.close()
    if agent is not None:
        save_checkpoint(out, agent, {"algo": config.algo, "env": config.env, **extra_manifest})
    return status
