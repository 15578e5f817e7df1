"""Independent learners: CIL-DDQN plus the IDDQN and LDQN ablations.

Every agent owns its own online/target networks, replay memory, rng and
schedules; nothing is shared across agents. CIL-DDQN augments a plain
double-Q learner with two per-sample loss weights:

  * importance e, decayed at every episode boundary (forgetting), and
  * a leniency factor (1 - l) applied only to negative TD errors, with
    l decaying linearly to 0 over training.

IDDQN is exactly CIL-DDQN with l pinned to 0 and no importance decay,
so the reduction is testable bit-for-bit. LDQN instead keeps a
per-(state, action) temperature table and stochastically discards
negative-error samples.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace

import numpy as np

from .nn import AdamState, Network, load_network, save_network, soft_update, train_step

ALGORITHMS = ("cil-ddqn", "iddqn", "ldqn")


@dataclass
class AgentConfig:
    learning_rate: float = 0.001
    gamma: float = 0.9
    erm_capacity: int = 200_000
    tau: float = 0.001
    epsilon_init: float = 0.8
    epsilon_final: float = 0.001
    epsilon_decay: float = 0.8 / 360_000
    leniency_init: float = 0.5
    leniency_final: float = 0.0
    leniency_decay: float = 0.5 / 800_000
    importance_decay: float = 0.995
    batch_size: int = 32
    hidden_sizes: tuple = (200, 200)
    # LDQN-only knobs
    ldqn_moderation: float = 2.0  # K in the leniency function
    ldqn_temperature_init: float = 1.0
    ldqn_temperature_decay: float = 0.95  # per-visit multiplicative decay
    ldqn_mu: float = 2.0  # retained from the reference schedule; unused by the simple decay

    def validate(self):
        if not 0.0 <= self.gamma < 1.0:
            raise ValueError(f"gamma must be in [0, 1), got {self.gamma}")
        if not 0.0 < self.importance_decay <= 1.0:
            raise ValueError(f"importance_decay must be in (0, 1], got {self.importance_decay}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if not 0.0 <= self.leniency_init <= 1.0:
            raise ValueError(f"leniency_init must be in [0, 1], got {self.leniency_init}")
        return self


def refined_weights(delta, importance, leniency):
    """Per-sample loss weight: e for positive TD error, (1-l)*e otherwise."""
    return np.where(np.asarray(delta) > 0.0, importance, (1.0 - leniency) * importance)


def refine_td(delta, importance, leniency):
    """Refined TD error: e*delta if delta > 0 else (1-l)*e*delta."""
    return refined_weights(delta, importance, leniency) * delta


def ldqn_apply_update(delta, leniency, x):
    """LDQN gate: keep a sample iff its error is positive or x beats leniency."""
    return bool(delta > 0.0 or x > leniency)


class LenientTemperatureTable:
    """Per-(state, action) temperatures mapped to leniency values.

    leniency = 1 - exp(-K * T); T starts at the configured initial value
    and is multiplied by the decay rate on every lookup, so repeatedly
    visited pairs are treated ever more strictly.
    """

    def __init__(self, moderation=2.0, temperature_init=1.0, temperature_decay=0.95, mu=2.0):
        if moderation <= 0.0:
            raise ValueError(f"moderation factor must be positive, got {moderation}")
        self.moderation = float(moderation)
        self.temperature_init = float(temperature_init)
        self.temperature_decay = float(temperature_decay)
        self.mu = float(mu)
        self._t = {}

    def leniency(self, state_key, action):
        key = (state_key, int(action))
        t = self._t.get(key, self.temperature_init)
        value = 1.0 - np.exp(-self.moderation * t)
        self._t[key] = t * self.temperature_decay
        return float(value)

    def __len__(self):
        return len(self._t)


def state_key(obs):
    """Hashable key for an observation: components rounded to integer bins."""
    return tuple(int(round(float(v))) for v in np.asarray(obs).reshape(-1))


class CilDdqnAgent:
    """One independent CIL-DDQN learner (IDDQN when leniency/forgetting are off)."""

    def __init__(self, obs_dim, n_actions, config=None, seed=0):
        from .replay import ReplayMemory

        self.config = (config or AgentConfig()).validate()
        self.obs_dim = int(obs_dim)
        self.n_actions = int(n_actions)
        sizes = [self.obs_dim, *self.config.hidden_sizes, self.n_actions]
        self.online = Network(sizes, seed=[seed, 0])
        self.target = self.online.copy()
        self.opt = AdamState(self.online, learning_rate=self.config.learning_rate)
        self.erm = ReplayMemory(self.config.erm_capacity, self.obs_dim)
        self.rng = np.random.default_rng([seed, 1])
        self.epsilon = self.config.epsilon_init
        self.leniency = self.config.leniency_init

    def select_action(self, obs):
        """Epsilon-greedy on the online net; greedy ties go to the lowest index."""
        if self.rng.random() < self.epsilon:
            return int(self.rng.integers(self.n_actions))
        return int(np.argmax(self.online.forward(obs)))

    def greedy_action(self, obs):
        return int(np.argmax(self.online.forward(obs)))

    def ddqn_target(self, reward, next_obs, done):
        """Double-Q target: online net picks the action, target net scores it."""
        if done:
            return float(reward)
        q_online = self.online.forward(next_obs)
        q_target = self.target.forward(next_obs)
        return float(reward + self.config.gamma * q_target[int(np.argmax(q_online))])

    def observe(self, obs, action, reward, next_obs, done):
        self.erm.push(obs, action, reward, next_obs, done)

    def _batch_targets(self, batch):
        q_online_next = self.online.forward_batch(batch.next_obs)
        q_target_next = self.target.forward_batch(batch.next_obs)
        best = np.argmax(q_online_next, axis=1)
        rows = np.arange(len(batch))
        boot = q_target_next[rows, best]
        return batch.rewards + self.config.gamma * np.where(batch.dones, 0.0, boot)

    def _sample_weights(self, batch, delta):
        return refined_weights(delta, batch.importance, self.leniency)

    def learn(self, batch):
        """One training step on a sampled batch; returns the weighted loss."""
        targets = self._batch_targets(batch)
        q_now = self.online.forward_batch(batch.obs)
        rows = np.arange(len(batch))
        delta = targets - q_now[rows, batch.actions]
        weights = self._sample_weights(batch, delta)
        loss = train_step(self.online, self.opt, batch.obs, batch.actions, targets, weights)
        soft_update(self.target, self.online, self.config.tau)
        return loss

    def train_if_ready(self):
        """Sample and learn once the memory holds a full batch."""
        batch = self.erm.sample(self.config.batch_size, self.rng)
        if batch is None:
            return None
        return self.learn(batch)

    def step_schedules(self):
        """Linear decay of epsilon and leniency, clamped at their floors."""
        cfg = self.config
        self.epsilon = max(cfg.epsilon_final, self.epsilon - cfg.epsilon_decay)
        self.leniency = max(cfg.leniency_final, self.leniency - cfg.leniency_decay)

    def end_episode(self):
        self.erm.decay_importance(self.config.importance_decay)

    # -- checkpointing ---------------------------------------------------

    def save(self, path):
        save_network(str(path) + ".online.npz", self.online, self.opt)
        save_network(str(path) + ".target.npz", self.target)
        state = {
            "kind": type(self).__name__,
            "obs_dim": self.obs_dim,
            "n_actions": self.n_actions,
            "epsilon": self.epsilon,
            "leniency": self.leniency,
            "rng_state": self.rng.bit_generator.state,
            "config": {k: list(v) if isinstance(v, tuple) else v
                       for k, v in vars(self.config).items()},
        }
        with open(str(path) + ".state.json", "w") as fh:
            json.dump(state, fh)

    @classmethod
    def load(cls, path):
        with open(str(path) + ".state.json") as fh:
            state = json.load(fh)
        cfg_kwargs = dict(state["config"])
        cfg_kwargs["hidden_sizes"] = tuple(cfg_kwargs["hidden_sizes"])
        agent = cls.__new__(cls)
        agent.config = AgentConfig(**cfg_kwargs)
        agent.obs_dim = int(state["obs_dim"])
        agent.n_actions = int(state["n_actions"])
        agent.online, agent.opt = load_network(str(path) + ".online.npz")
        agent.target, _ = load_network(str(path) + ".target.npz")
        from .replay import ReplayMemory

        agent.erm = ReplayMemory(agent.config.erm_capacity, agent.obs_dim)
        agent.rng = np.random.default_rng()
        agent.rng.bit_generator.state = state["rng_state"]
        agent.epsilon = float(state["epsilon"])
        agent.leniency = float(state["leniency"])
        if isinstance(agent, LdqnAgent):
            agent.table = LenientTemperatureTable(
                agent.config.ldqn_moderation,
                agent.config.ldqn_temperature_init,
                agent.config.ldqn_temperature_decay,
                agent.config.ldqn_mu,
            )
            agent._stored_leniency = np.zeros(0)
        return agent


class LdqnAgent(CilDdqnAgent):
    """Lenient learner: per-(state, action) temperatures gate negative updates."""

    def __init__(self, obs_dim, n_actions, config=None, seed=0):
        super().__init__(obs_dim, n_actions, config, seed)
        cfg = self.config
        self.table = LenientTemperatureTable(
            cfg.ldqn_moderation, cfg.ldqn_temperature_init, cfg.ldqn_temperature_decay, cfg.ldqn_mu
        )
        # leniency recorded at storage time, aligned with replay slots
        self._stored_leniency = np.zeros(0)

    def observe(self, obs, action, reward, next_obs, done):
        self.erm.push(obs, action, reward, next_obs, done)
        if len(self._stored_leniency) < self.erm._alloc:
            grown = np.zeros(self.erm._alloc)
            grown[: len(self._stored_leniency)] = self._stored_leniency
            self._stored_leniency = grown
        self._stored_leniency[self.erm.last_index] = self.table.leniency(state_key(obs), action)

    def _sample_weights(self, batch, delta):
        lens = self._stored_leniency[batch.indices]
        x = self.rng.random(len(batch))
        keep = (delta > 0.0) | (x > lens)
        return keep.astype(np.float64)

    def step_schedules(self):
        cfg = self.config
        self.epsilon = max(cfg.epsilon_final, self.epsilon - cfg.epsilon_decay)

    def end_episode(self):
        pass  # no importance decay in the LDQN baseline


def iddqn_config(config=None):
    """CIL-DDQN config with leniency and forgetting switched off."""
    cfg = config or AgentConfig()
    return replace(cfg, leniency_init=0.0, leniency_final=0.0, leniency_decay=0.0,
                   importance_decay=1.0)


def make_agent(algorithm, obs_dim, n_actions, config=None, seed=0):
    if algorithm == "cil-ddqn":
        return CilDdqnAgent(obs_dim, n_actions, config, seed)
    if algorithm == "iddqn":
        return CilDdqnAgent(obs_dim, n_actions, iddqn_config(config), seed)
    if algorithm == "ldqn":
        return LdqnAgent(obs_dim, n_actions, config, seed)
    raise ValueError(f"unknown learning algorithm {algorithm!r}; expected one of {ALGORITHMS}")
