"""Run configuration: flat key=value files with section prefixes, CLI overrides.

Example file:

    algo=oht-es-discrete
    env=pendulum
    delay=5
    total_steps=100000
    tuner.support=1,2,3,4,5
    td3.batch_size=100

Unknown keys are rejected. CLI flags override file values.
"""

from __future__ import annotations

from dataclasses import dataclass, fields
from pathlib import Path

ALGOS = ("td3", "oht-es-continuous", "oht-es-cem", "oht-es-discrete", "metagrad", "es-rl")
ENVS = ("pendulum", "pointmass")
TUNER_MODES = ("es-gradient", "cem", "categorical", "es-rl", "none")

# algo -> implied tuner mode
ALGO_MODES = {
    "td3": "none",
    "oht-es-continuous": "es-gradient",
    "oht-es-cem": "cem",
    "oht-es-discrete": "categorical",
    "metagrad": "none",
    "es-rl": "es-rl",
}


@dataclass
class RunConfig:
    algo: str = "td3"
    env: str = "pendulum"
    delay: int = 1
    total_steps: int = 100_000
    seed: int = 0
    out_dir: str = "runs/out"
    hidden: tuple[int, ...] = (64, 64)
    buffer_capacity: int = 100_000
    # base update rule
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
    grad_steps_per_round: int = 0  # 0 = one per collected environment step
    warmup_steps: int = 1000
    # hyper-parameter tuner
    tuner_mode: str = ""  # derived from algo when empty
    tuner_n: int = 0  # 0 = mode default (10 continuous / es-rl, 6 discrete)
    tuner_sigma: float = 0.5
    tuner_beta: float = 0.0  # 0 = mode default (0.1 es-gradient, 0.02 categorical)
    tuner_epsilon: float = 0.1
    tuner_support: tuple[int, ...] = (1, 2, 3)
    tuner_train_all_agents: bool = True
    tuner_standardize: bool = True
    tuner_crn: bool = True
    tuner_mu_init: tuple[float, ...] = (-3.0, -3.0)
    tuner_variance_floor: float = 1e-4
    tuner_sigma_params: float = 0.02  # es-rl: scale over the actor vector
    tuner_k_grad: int = 5  # es-rl: members receiving gradient updates
    tuner_eval_sample: bool = False  # discrete: sample eval agent instead of argmax
    # meta-gradient baseline
    metagrad_beta: float = 1e-4
    metagrad_tune_critic_lr: bool = False
    # evaluation cadence
    eval_every: int = 2000
    eval_episodes: int = 5

    def resolved_mode(self) -> str:
        return self.tuner_mode or ALGO_MODES[self.algo]

    def resolved_tuner_n(self) -> int:
        if self.tuner_n > 0:
            return self.tuner_n
        return 6 if self.resolved_mode() == "categorical" else 10

    def resolved_tuner_beta(self) -> float:
        if self.tuner_beta > 0:
            return self.tuner_beta
        return 0.02 if self.resolved_mode() == "categorical" else 0.1

    def validate(self) -> None:
        if self.algo not in ALGOS:
            raise ValueError(f"unknown algo {self.algo!r}; known: {ALGOS}")
        if self.env not in ENVS:
            raise ValueError(f"unknown env {self.env!r}; known: {ENVS}")
        if self.delay < 1:
            raise ValueError("delay must be >= 1")
        if self.total_steps < self.warmup_steps:
            raise ValueError("total_steps must be >= warmup_steps")
        if self.eval_every < 1 or self.eval_episodes < 1:
            raise ValueError("eval cadence values must be >= 1")
        if self.tuner_mode and self.tuner_mode not in TUNER_MODES:
            raise ValueError(f"unknown tuner mode {self.tuner_mode!r}")
        if self.tuner_mode and self.tuner_mode != ALGO_MODES[self.algo]:
            raise ValueError(
                f"tuner.mode={self.tuner_mode!r} conflicts with algo={self.algo!r}"
            )
        if self.algo == "oht-es-discrete" and len(self.tuner_support) < 1:
            raise ValueError("oht-es-discrete needs a non-empty tuner.support")
        if len(self.hidden) < 1 or any(h < 1 for h in self.hidden):
            raise ValueError("hidden sizes must be positive")


# config-file key -> dataclass field
KEYMAP = {
    "algo": "algo",
    "env": "env",
    "delay": "delay",
    "total_steps": "total_steps",
    "seed": "seed",
    "out": "out_dir",
    "net.hidden": "hidden",
    "replay.capacity": "buffer_capacity",
    "td3.lr_actor": "lr_actor",
    "td3.lr_critic": "lr_critic",
    "td3.n_step": "n_step",
    "td3.gamma": "gamma",
    "td3.rho": "rho",
    "td3.policy_delay": "policy_delay",
    "td3.target_noise_std": "target_noise_std",
    "td3.target_noise_clip": "target_noise_clip",
    "td3.exploration_noise_std": "exploration_noise_std",
    "td3.batch_size": "batch_size",
    "td3.grad_steps_per_round": "grad_steps_per_round",
    "td3.warmup_steps": "warmup_steps",
    "tuner.mode": "tuner_mode",
    "tuner.N": "tuner_n",
    "tuner.sigma": "tuner_sigma",
    "tuner.beta": "tuner_beta",
    "tuner.epsilon": "tuner_epsilon",
    "tuner.support": "tuner_support",
    "tuner.train_all_agents": "tuner_train_all_agents",
    "tuner.standardize": "tuner_standardize",
    "tuner.common_random_numbers": "tuner_crn",
    "tuner.mu_init": "tuner_mu_init",
    "tuner.variance_floor": "tuner_variance_floor",
    "tuner.sigma_params": "tuner_sigma_params",
    "tuner.k_grad": "tuner_k_grad",
    "tuner.eval_sample": "tuner_eval_sample",
    "metagrad.beta": "metagrad_beta",
    "metagrad.tune_critic_lr": "metagrad_tune_critic_lr",
    "eval.every": "eval_every",
    "eval.episodes": "eval_episodes",
}

FIELD_TO_KEY = {v: k for k, v in KEYMAP.items()}


def _parse_value(raw: str, kind):
    raw = raw.strip()
    if kind is bool:
        if raw.lower() in ("true", "1", "yes"):
            return True
        if raw.lower() in ("false", "0", "no"):
            return False
        raise ValueError(f"expected a boolean, got {raw!r}")
    if kind is int:
        return int(raw)
    if kind is float:
        return float(raw)
    if kind is str:
        return raw
    if kind == tuple[int, ...]:
        return tuple(int(x) for x in raw.split(",") if x.strip())
    if kind == tuple[float, ...]:
        return tuple(float(x) for x in raw.split(",") if x.strip())
    raise ValueError(f"unsupported config type {kind}")


_FIELD_TYPES = {
    "hidden": tuple[int, ...],
    "tuner_support": tuple[int, ...],
    "tuner_mu_init": tuple[float, ...],
}


def _field_type(f):
    return _FIELD_TYPES.get(f.name, type(f.default))


def set_key(config: RunConfig, key: str, raw: str) -> None:
    if key not in KEYMAP:
        raise ValueError(f"unknown config key {key!r}")
    name = KEYMAP[key]
    f = next(f for f in fields(RunConfig) if f.name == name)
    setattr(config, name, _parse_value(raw, _field_type(f)))


def parse_config_file(path: str | Path, config: RunConfig | None = None) -> RunConfig:
    config = config or RunConfig()
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{lineno}: expected key=value, got {line!r}")
        key, _, raw = line.partition("=")
        set_key(config, key.strip(), raw)
    return config


def config_lines(config: RunConfig) -> str:
    """Resolved configuration in the same key=value format (saved per run)."""
    out = []
    for f in fields(RunConfig):
        value = getattr(config, f.name)
        if isinstance(value, tuple):
            text = ",".join(repr(v) if isinstance(v, float) else str(v) for v in value)
        elif isinstance(value, bool):
            text = "true" if value else "false"
        elif isinstance(value, float):
            text = repr(value)
        else:
            text = str(value)
        out.append(f"{FIELD_TO_KEY[f.name]}={text}")
    return "\n".join(out) + "\n"
