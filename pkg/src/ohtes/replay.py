"""Shared FIFO replay buffer with uncorrected n-step sampling.

Transitions carry (episode_id, step_index) so successor lookups survive
interleaved episodes from multiple population members. Sampling walks
successor links forward for up to n rewards, truncating at physical
terminals (bootstrap weight 0) or at episode edges / time limits
(bootstrap weight gamma^m with m < n). No importance corrections are
applied anywhere.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass

import numpy as np


class EmptyBufferError(RuntimeError):
    """Sampling requested from a buffer with no complete samples."""


@dataclass
class Transition:
    obs: np.ndarray
    action: np.ndarray
    reward: float
    next_obs: np.ndarray
    terminal: bool  # true physical terminal, not a time limit
    episode_id: int
    step_index: int


@dataclass
class NStepBatch:
    obs0: np.ndarray
    act0: np.ndarray
    ret_n: np.ndarray  # sum_{i<m} gamma^i r_i
    obs_n: np.ndarray
    bootstrap_weight: np.ndarray  # gamma^m, or 0 when a terminal was reached
    m: np.ndarray  # realized horizon per sample, in [1, n]


class ReplayBuffer:
    """Fixed-capacity FIFO store; appends and samples are serialized by one lock."""

    def __init__(self, capacity: int, obs_dim: int, act_dim: int) -> None:
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity = int(capacity)
        self.obs_dim = int(obs_dim)
        self.act_dim = int(act_dim)
        self._obs = np.zeros((capacity, obs_dim), dtype=np.float32)
        self._act = np.zeros((capacity, act_dim), dtype=np.float32)
        self._rew = np.zeros(capacity, dtype=np.float64)
        self._next_obs = np.zeros((capacity, obs_dim), dtype=np.float32)
        self._terminal = np.zeros(capacity, dtype=bool)
        self._episode = np.full(capacity, -1, dtype=np.int64)
        self._step = np.full(capacity, -1, dtype=np.int64)
        self._next_slot = np.full(capacity, -1, dtype=np.int64)
        self._slot_of: dict[tuple[int, int], int] = {}
        self._head = 0
        self._size = 0
        self._episode_counter = 0
        self._lock = threading.Lock()

    def __len__(self) -> int:
        return self._size

    def new_episode_id(self) -> int:
        with self._lock:
            eid = self._episode_counter
            self._episode_counter += 1
            return eid

    def append(self, tr: Transition) -> None:
        obs = np.asarray(tr.obs, dtype=np.float32)
        act = np.asarray(tr.action, dtype=np.float32)
        nxt = np.asarray(tr.next_obs, dtype=np.float32)
        if obs.shape != (self.obs_dim,) or nxt.shape != (self.obs_dim,):
            raise ValueError(f"observation shape mismatch (expected ({self.obs_dim},))")
        if act.shape != (self.act_dim,):
            raise ValueError(f"action shape mismatch (expected ({self.act_dim},))")
        with self._lock:
            slot = self._head
            if self._size == self.capacity:
                old = (int(self._episode[slot]), int(self._step[slot]))
                self._slot_of.pop(old, None)
            self._obs[slot] = obs
            self._act[slot] = act
            self._rew[slot] = float(tr.reward)
            self._next_obs[slot] = nxt
            self._terminal[slot] = bool(tr.terminal)
            self._episode[slot] = tr.episode_id
            self._step[slot] = tr.step_index
            self._next_slot[slot] = -1
            key = (int(tr.episode_id), int(tr.step_index))
            self._slot_of[key] = slot
            prev = self._slot_of.get((key[0], key[1] - 1))
            if prev is not None:
                self._next_slot[prev] = slot
            self._head = (self._head + 1) % self.capacity
            self._size = min(self._size + 1, self.capacity)

    def sample_nstep(
        self, batch_size: int, n: int, gamma: float, rng: np.random.Generator
    ) -> NStepBatch:
        if n < 1:
            raise ValueError("n must be >= 1")
        if not 0.0 < gamma < 1.0:
            raise ValueError("gamma must be in (0, 1)")
        with self._lock:
            if self._size == 0:
                raise EmptyBufferError("cannot sample from an empty buffer")
            discounts = [gamma**j for j in range(n + 1)]
            start = rng.integers(0, self._size, size=batch_size)
            cur = start.copy()
            ret = self._rew[cur].copy()
            m = np.ones(batch_size, dtype=np.int64)
            alive = np.ones(batch_size, dtype=bool)
            for j in range(1, n):
                nxt = self._next_slot[cur]
                ok = alive & (nxt >= 0) & ~self._terminal[cur]
                cur = np.where(ok, nxt, cur)
                ret += np.where(ok, discounts[j] * self._rew[cur], 0.0)
                m += ok
                alive = ok
            weight = np.where(
                self._terminal[cur], 0.0, np.asarray(discounts, dtype=np.float64)[m]
            )
            return NStepBatch(
                obs0=self._obs[start].copy(),
                act0=self._act[start].copy(),
                ret_n=ret,
                obs_n=self._next_obs[cur].copy(),
                bootstrap_weight=weight,
                m=m,
            )

    # test / oracle access to raw storage
    def raw_transitions(self) -> list[Transition]:
        with self._lock:
            out = []
            if self._size < self.capacity:
                order = range(self._size)
            else:
                order = [(self._head + i) % self.capacity for i in range(self.capacity)]
            for slot in order:
                out.append(
                    Transition(
                        self._obs[slot].copy(),
                        self._act[slot].copy(),
                        float(self._rew[slot]),
                        self._next_obs[slot].copy(),
                        bool(self._terminal[slot]),
                        int(self._episode[slot]),
                        int(self._step[slot]),
                    )
                )
            return out
