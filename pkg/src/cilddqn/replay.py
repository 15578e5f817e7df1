"""Bounded experience replay with per-experience importance decay.

Each stored transition carries an importance value e, set to 1.0 on
insertion and multiplied by a decay rate at every episode boundary, so
experiences gathered under stale teammate policies gradually stop
driving the loss. Storage is flat numpy arrays grown geometrically up
to the configured capacity; beyond that the buffer overwrites oldest
entries first.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class Experience:
    obs: np.ndarray
    action: int
    reward: float
    next_obs: np.ndarray
    done: bool
    importance: float


@dataclass
class Batch:
    """Column-wise view of a sampled mini-batch."""

    obs: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    next_obs: np.ndarray
    dones: np.ndarray
    importance: np.ndarray
    indices: np.ndarray  # buffer slots, for callers keeping side tables

    def __len__(self):
        return len(self.actions)


class ReplayMemory:
    def __init__(self, capacity, obs_dim):
        if capacity < 1:
            raise ValueError(f"capacity must be >= 1, got {capacity}")
        self.capacity = int(capacity)
        self.obs_dim = int(obs_dim)
        self.size = 0
        self._next = 0  # ring position of the next write
        self._alloc = 0
        self._obs = self._next_obs = self._actions = None
        self._rewards = self._dones = self._e = None
        self._grow(min(self.capacity, 1024))

    def _grow(self, alloc):
        def extend(arr, shape, dtype):
            new = np.zeros(shape, dtype=dtype)
            if arr is not None:
                new[: len(arr)] = arr
            return new

        self._obs = extend(self._obs, (alloc, self.obs_dim), np.float64)
        self._next_obs = extend(self._next_obs, (alloc, self.obs_dim), np.float64)
        self._actions = extend(self._actions, (alloc,), np.int64)
        self._rewards = extend(self._rewards, (alloc,), np.float64)
        self._dones = extend(self._dones, (alloc,), np.bool_)
        self._e = extend(self._e, (alloc,), np.float64)
        self._alloc = alloc

    @property
    def last_index(self):
        """Slot written by the most recent push (None if empty)."""
        if self.size == 0:
            return None
        return (self._next - 1) % self.capacity if self.size == self.capacity else self._next - 1

    def __len__(self):
        return self.size

    def push(self, obs, action, reward, next_obs, done):
        """Append a transition with importance 1.0, evicting oldest at capacity."""
        obs = np.asarray(obs, dtype=np.float64)
        next_obs = np.asarray(next_obs, dtype=np.float64)
        if obs.shape != (self.obs_dim,) or next_obs.shape != (self.obs_dim,):
            raise ValueError(
                f"observation shape {obs.shape}/{next_obs.shape} != ({self.obs_dim},)"
            )
        if self.size == self._alloc and self._alloc < self.capacity:
            self._grow(min(self.capacity, self._alloc * 2))
        i = self._next
        self._obs[i] = obs
        self._next_obs[i] = next_obs
        self._actions[i] = action
        self._rewards[i] = reward
        self._dones[i] = done
        self._e[i] = 1.0
        self._next = (i + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def sample(self, batch_size, rng):
        """Uniform sample without replacement; None if not enough data yet."""
        if batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {batch_size}")
        if self.size < batch_size:
            return None
        idx = rng.choice(self.size, size=batch_size, replace=False, shuffle=False)
        return Batch(
            obs=self._obs[idx],
            actions=self._actions[idx],
            rewards=self._rewards[idx],
            next_obs=self._next_obs[idx],
            dones=self._dones[idx],
            importance=self._e[idx],
            indices=idx,
        )

    def decay_importance(self, d_e):
        """Multiply every stored importance by d_e (call at episode end)."""
        if not 0.0 < d_e <= 1.0:
            raise ValueError(f"importance decay must be in (0, 1], got {d_e}")
        self._e[: self.size] *= d_e

    def dump(self):
        """All stored experiences oldest-first, for tests and debugging."""
        if self.size < self.capacity:
            order = range(self.size)
        else:
            order = [(self._next + k) % self.capacity for k in range(self.size)]
        return [
            Experience(
                obs=self._obs[i].copy(),
                action=int(self._actions[i]),
                reward=float(self._rewards[i]),
                next_obs=self._next_obs[i].copy(),
                done=bool(self._dones[i]),
                importance=float(self._e[i]),
            )
            for i in order
        ]
