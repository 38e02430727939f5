"""Built-in continuous-control tasks and the delayed-reward wrapper.

Two dense-reward tasks where a desk-scale off-policy agent learns within
~1e5 steps:

* ``pendulum`` - torque-limited swing-up. State (theta, theta_dot) with
  theta_ddot = (3g/2l) sin(theta) + (3/(m l^2)) u, m = 1, l = 1, g = 10,
  dt = 0.05, theta_dot clamped to [-8, 8], torque in [-2, 2].
  Observation (cos, sin, theta_dot); reward -(wrap(theta)^2
  + 0.1 theta_dot^2 + 0.001 u^2) from the pre-step state; 200 steps.
  Start box: theta ~ U(-pi, pi), theta_dot ~ U(-1, 1).
* ``pointmass`` - 2-D double integrator reaching a random goal. Acceleration
  actions in [-1, 1]^2, dt = 0.1, velocity and position clamped to
  [-1, 1]^2; reward -||pos - goal||_2 from the post-step position;
  100 steps. Start box: pos ~ U(-0.5, 0.5)^2, vel = 0, goal ~ U(-0.8, 0.8)^2.

Episodes end only by time limit; there are no physical terminal states.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class EnvSpec:
    name: str
    obs_dim: int
    act_dim: int
    action_low: np.ndarray
    action_high: np.ndarray
    episode_len: int
    dt: float


class Env:
    """Single-owner environment instance; reset is deterministic per seed."""

    spec: EnvSpec

    def __init__(self) -> None:
        self._rng = np.random.default_rng(0)
        self.step_count = 0
        self.clip_count = 0
        self._needs_reset = True

    def reset(self, seed: int | None = None) -> np.ndarray:
        if seed is not None:
            self._rng = np.random.default_rng(seed)
        self.step_count = 0
        self._needs_reset = False
        self._reset_state(self._rng)
        return self._observe()

    def step(self, action: np.ndarray):
        if self._needs_reset:
            raise RuntimeError("step() called on a finished episode; call reset() first")
        a = np.asarray(action, dtype=np.float64)
        if a.shape != (self.spec.act_dim,):
            raise ValueError(f"action shape {a.shape} != ({self.spec.act_dim},)")
        clipped = np.clip(a, self.spec.action_low, self.spec.action_high)
        if np.any(clipped != a):
            self.clip_count += 1
        reward = self._advance(clipped)
        self.step_count += 1
        done = self.step_count >= self.spec.episode_len
        if done:
            self._needs_reset = True
        return self._observe(), reward, done

    # subclass hooks
    def _reset_state(self, rng: np.random.Generator) -> None:
        raise NotImplementedError

    def _advance(self, action: np.ndarray) -> float:
        raise NotImplementedError

    def _observe(self) -> np.ndarray:
        raise NotImplementedError


def _wrap_angle(theta: float) -> float:
    return ((theta + math.pi) % (2.0 * math.pi)) - math.pi


class Pendulum(Env):
    GRAVITY = 10.0
    MASS = 1.0
    LENGTH = 1.0
    MAX_SPEED = 8.0

    def __init__(self) -> None:
        super().__init__()
        self.spec = EnvSpec(
            name="pendulum",
            obs_dim=3,
            act_dim=1,
            action_low=np.array([-2.0]),
            action_high=np.array([2.0]),
            episode_len=200,
            dt=0.05,
        )
        self.theta = 0.0
        self.theta_dot = 0.0

    def _reset_state(self, rng: np.random.Generator) -> None:
        self.theta = float(rng.uniform(-math.pi, math.pi))
        self.theta_dot = float(rng.uniform(-1.0, 1.0))

    def set_state(self, theta: float, theta_dot: float) -> None:
        """Place the pendulum at an exact state (testing / inspection hook)."""
        self.theta = float(theta)
        self.theta_dot = float(theta_dot)
        self._needs_reset = False

    def _advance(self, action: np.ndarray) -> float:
        u = float(action[0])
        cost = _wrap_angle(self.theta) ** 2 + 0.1 * self.theta_dot**2 + 0.001 * u**2
        g, m, length, dt = self.GRAVITY, self.MASS, self.LENGTH, self.spec.dt
        acc = (3.0 * g / (2.0 * length)) * math.sin(self.theta) + (3.0 / (m * length**2)) * u
        self.theta_dot = min(max(self.theta_dot + acc * dt, -self.MAX_SPEED), self.MAX_SPEED)
        self.theta = self.theta + self.theta_dot * dt
        return -cost

    def _observe(self) -> np.ndarray:
        return np.array([math.cos(self.theta), math.sin(self.theta), self.theta_dot])


class PointMass(Env):
    START_BOX = 0.5
    GOAL_BOX = 0.8

    def __init__(self) -> None:
        super().__init__()
        self.spec = EnvSpec(
            name="pointmass",
            obs_dim=6,
            act_dim=2,
            action_low=np.array([-1.0, -1.0]),
            action_high=np.array([1.0, 1.0]),
            episode_len=100,
            dt=0.1,
        )
        self.pos = np.zeros(2)
        self.vel = np.zeros(2)
        self.goal = np.zeros(2)

    def _reset_state(self, rng: np.random.Generator) -> None:
        self.pos = rng.uniform(-self.START_BOX, self.START_BOX, size=2)
        self.vel = np.zeros(2)
        self.goal = rng.uniform(-self.GOAL_BOX, self.GOAL_BOX, size=2)

    def set_state(self, pos, vel, goal) -> None:
        self.pos = np.asarray(pos, dtype=np.float64).copy()
        self.vel = np.asarray(vel, dtype=np.float64).copy()
        self.goal = np.asarray(goal, dtype=np.float64).copy()
        self._needs_reset = False

    def _advance(self, action: np.ndarray) -> float:
        dt = self.spec.dt
        self.vel = np.clip(self.vel + action * dt, -1.0, 1.0)
        self.pos = np.clip(self.pos + self.vel * dt, -1.0, 1.0)
        return -float(np.linalg.norm(self.pos - self.goal))

    def _observe(self) -> np.ndarray:
        return np.concatenate([self.pos, self.vel, self.goal])


class DelayedReward(Env):
    """Accumulates the inner reward and emits the sum every d-th step.

    With a 1-indexed in-episode step counter t, the emitted reward is 0 when
    t mod d != 0 and the sum of the last d inner rewards otherwise. Any
    remainder at episode end is flushed into the final step so episode
    returns are conserved.
    """

    def __init__(self, env: Env, d: int) -> None:
        if d < 1:
            raise ValueError(f"delay must be >= 1, got {d}")
        self.env = env
        self.d = int(d)
        self.spec = env.spec
        self._acc = 0.0

    def __getattr__(self, name):
        return getattr(self.env, name)

    def reset(self, seed: int | None = None) -> np.ndarray:
        self._acc = 0.0
        return self.env.reset(seed)

    def step(self, action: np.ndarray):
        obs, reward, done = self.env.step(action)
        self._acc += reward
        t = self.env.step_count
        if t % self.d == 0 or done:
            emitted, self._acc = self._acc, 0.0
        else:
            emitted = 0.0
        return obs, emitted, done


def wrap_delayed(env: Env, d: int) -> Env:
    """Identity for d == 1, otherwise the delayed-reward wrapper."""
    if d == 1:
        return env
    return DelayedReward(env, d)


ENV_NAMES = ("pendulum", "pointmass")


def make_env(name: str, delay: int = 1) -> Env:
    if name == "pendulum":
        env: Env = Pendulum()
    elif name == "pointmass":
        env = PointMass()
    else:
        raise ValueError(f"unknown env {name!r}; known: {ENV_NAMES}")
    return wrap_delayed(env, delay)
