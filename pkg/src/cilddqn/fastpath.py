"""Stacked execution engine for homogeneous agent groups.

All agents in a run share one architecture and train in lockstep, so
their per-step work (action selection, replay sampling, the weighted
double-Q update, the soft target update) can be executed as stacked
3-d array operations: one matmul over an agent axis instead of a Python
loop of tiny matmuls. On a single core this is the difference between
minutes and hours for the grid experiments.

Semantics are those of CilDdqnAgent exactly: per-agent rng streams are
consumed in the same order as the per-agent code path, the loss/weight
algebra is identical, and agents can be exported to ordinary
CilDdqnAgent objects at any time (for evaluation and checkpoints). An
equivalence test pins this engine against the reference implementation.
"""

from __future__ import annotations

import numpy as np

from .agents import CilDdqnAgent, make_agent
from .nn import ADAM_EPS, Network


class PooledReplay:
    """Replay storage for n lockstep agents: same pushes, same size, own rngs."""

    def __init__(self, n_agents, capacity, obs_dim):
        self.n = int(n_agents)
        self.capacity = int(capacity)
        self.obs_dim = int(obs_dim)
        self.size = 0
        self._next = 0
        self._alloc = 0
        self._obs = self._next_obs = self._actions = None
        self._rewards = self._dones = self._e = None
        self._grow(min(self.capacity, 1024))

    def _grow(self, alloc):
        def extend(arr, shape, dtype):
            new = np.zeros(shape, dtype=dtype)
            if arr is not None:
                new[:, : arr.shape[1]] = arr
            return new

        self._obs = extend(self._obs, (self.n, alloc, self.obs_dim), np.float64)
        self._next_obs = extend(self._next_obs, (self.n, alloc, self.obs_dim), np.float64)
        self._actions = extend(self._actions, (self.n, alloc), np.int64)
        self._rewards = extend(self._rewards, (self.n, alloc), np.float64)
        self._dones = extend(self._dones, (self.n, alloc), np.bool_)
        self._e = extend(self._e, (self.n, alloc), np.float64)
        self._alloc = alloc

    def push(self, obs, actions, rewards, next_obs, done):
        """obs/next_obs: (n, obs_dim); actions/rewards: (n,); done: scalar."""
        if self.size == self._alloc and self._alloc < self.capacity:
            self._grow(min(self.capacity, self._alloc * 2))
        i = self._next
        self._obs[:, i] = obs
        self._next_obs[:, i] = next_obs
        self._actions[:, i] = actions
        self._rewards[:, i] = rewards
        self._dones[:, i] = done
        self._e[:, i] = 1.0
        self._next = (i + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def sample(self, batch_size, rngs):
        """Per-agent uniform sample without replacement; None until ready."""
        if self.size < batch_size:
            return None
        idx = np.empty((self.n, batch_size), dtype=np.intp)
        for a, rng in enumerate(rngs):
            idx[a] = rng.choice(self.size, size=batch_size, replace=False, shuffle=False)
        rows = np.arange(self.n)[:, None]
        return (
            self._obs[rows, idx],
            self._actions[rows, idx],
            self._rewards[rows, idx],
            self._next_obs[rows, idx],
            self._dones[rows, idx],
            self._e[rows, idx],
        )

    def decay_importance(self, d_e):
        self._e[:, : self.size] *= d_e


class _StackedNet:
    """Parameters of n same-shape networks as one (n, P) array with
    per-layer (n, out, in) weight views."""

    def __init__(self, layer_sizes, n):
        self.layer_sizes = [int(s) for s in layer_sizes]
        self.n = n
        self.psize = sum((i + 1) * o for i, o in zip(self.layer_sizes[:-1], self.layer_sizes[1:]))
        self.flat = np.zeros((n, self.psize))
        self.weights, self.biases = self._views(self.flat)

    def _views(self, flat):
        weights, biases, off = [], [], 0
        for fan_in, fan_out in zip(self.layer_sizes[:-1], self.layer_sizes[1:]):
            w = flat[:, off : off + fan_in * fan_out].reshape(self.n, fan_out, fan_in)
            assert np.shares_memory(w, flat)
            weights.append(w)
            off += fan_in * fan_out
            b = flat[:, off : off + fan_out]
            biases.append(b)
            off += fan_out
        return weights, biases

    def load_rows(self, nets):
        for a, net in enumerate(nets):
            self.flat[a] = net.flat

    def export_row(self, a):
        net = Network.__new__(Network)
        net.layer_sizes = list(self.layer_sizes)
        net.flat = self.flat[a].copy()
        net.weights, net.biases = net._views(net.flat)
        return net

    def forward(self, xs, keep=False):
        """xs: (n, b, in) -> (n, b, out); optionally keep post-activations."""
        activations = [xs] if keep else None
        h = xs
        last = len(self.weights) - 1
        for k, (w, b) in enumerate(zip(self.weights, self.biases)):
            z = np.matmul(h, np.swapaxes(w, 1, 2))
            z += b[:, None, :]
            h = z if k == last else np.maximum(z, 0.0)
            if keep:
                activations.append(h)
        return (h, activations) if keep else h

    def backward(self, activations, grad_out):
        """Flat per-agent gradients (n, P) of a scalar loss.

        The buffer is reused across calls; consume before the next pass.
        """
        cache = getattr(self, "_grad_cache", None)
        if cache is None:
            buf = np.empty_like(self.flat)
            cache = (buf, *self._views(buf))
            self._grad_cache = cache
        grad, gw, gb = cache
        g = grad_out
        for k in range(len(self.weights) - 1, -1, -1):
            np.matmul(np.swapaxes(g, 1, 2), activations[k], out=gw[k])
            g.sum(axis=1, out=gb[k])
            if k > 0:
                g = np.matmul(g, self.weights[k])
                g *= activations[k] > 0.0
        return grad


class VectorTrainer:
    """Trains n CIL-DDQN/IDDQN agents in lockstep with stacked array ops."""

    def __init__(self, algorithm, n_agents, obs_dim, n_actions, config, seeds):
        if algorithm not in ("cil-ddqn", "iddqn"):
            raise ValueError(f"vector engine supports cil-ddqn/iddqn, not {algorithm!r}")
        # build reference agents once to reuse their seeding scheme, then
        # lift the parameters into stacked storage
        protos = [make_agent(algorithm, obs_dim, n_actions, config, seed=s) for s in seeds]
        self.algorithm = algorithm
        self.config = protos[0].config
        self.n = int(n_agents)
        self.obs_dim = int(obs_dim)
        self.n_actions = int(n_actions)
        sizes = protos[0].online.layer_sizes
        self.online = _StackedNet(sizes, self.n)
        self.target = _StackedNet(sizes, self.n)
        self.online.load_rows([p.online for p in protos])
        self.target.load_rows([p.target for p in protos])
        self.rngs = [p.rng for p in protos]
        self.erm = PooledReplay(self.n, self.config.erm_capacity, obs_dim)
        self.m = np.zeros_like(self.online.flat)
        self.v = np.zeros_like(self.online.flat)
        self.step_counts = np.zeros(self.n, dtype=np.int64)
        self.epsilon = self.config.epsilon_init
        self.leniency = self.config.leniency_init

    def select_actions(self, obs_matrix):
        """Epsilon-greedy per agent; one stacked forward for the greedy arm."""
        q = self.online.forward(np.asarray(obs_matrix)[:, None, :])[:, 0, :]
        greedy = np.argmax(q, axis=1)
        actions = np.empty(self.n, dtype=np.int64)
        eps = self.epsilon
        for a, rng in enumerate(self.rngs):
            if rng.random() < eps:
                actions[a] = rng.integers(self.n_actions)
            else:
                actions[a] = greedy[a]
        return actions

    def observe(self, obs_matrix, actions, rewards, next_obs_matrix, done):
        self.erm.push(obs_matrix, actions, rewards, next_obs_matrix, done)

    def learn_if_ready(self):
        batch = self.erm.sample(self.config.batch_size, self.rngs)
        if batch is None:
            return None
        obs, actions, rewards, next_obs, dones, e = batch
        cfg = self.config
        q_online_next = self.online.forward(next_obs)
        q_target_next = self.target.forward(next_obs)
        best = np.argmax(q_online_next, axis=2)[..., None]
        boot = np.take_along_axis(q_target_next, best, axis=2)[..., 0]
        targets = rewards + cfg.gamma * np.where(dones, 0.0, boot)

        q, activations = self.online.forward(obs, keep=True)
        q_sel = np.take_along_axis(q, actions[..., None], axis=2)[..., 0]
        delta = targets - q_sel
        weights = np.where(delta > 0.0, e, (1.0 - self.leniency) * e)
        wdelta = weights * delta
        losses = np.mean(wdelta * wdelta, axis=1)

        b = obs.shape[1]
        grad_sel = -(2.0 / b) * weights * wdelta
        grad_out = np.zeros_like(q)
        np.put_along_axis(grad_out, actions[..., None], grad_sel[..., None], axis=2)
        grad = self.online.backward(activations, grad_out)
        self._adam(grad)
        # soft target update regardless of the optimizer skip, as in the
        # per-agent implementation
        scratch = self._scratch()
        self.target.flat *= 1.0 - cfg.tau
        np.multiply(self.online.flat, cfg.tau, out=scratch)
        self.target.flat += scratch
        return losses

    def _scratch(self):
        buf = getattr(self, "_scratch_buf", None)
        if buf is None:
            buf = np.empty_like(self.online.flat)
            self._scratch_buf = buf
        return buf

    def _adam(self, grad):
        cfg = self.config
        active = (grad != 0.0).any(axis=1)  # zero-gradient agents are skipped entirely
        if not active.any():
            return
        b1, b2 = 0.9, 0.999
        if active.all():
            self.step_counts += 1
            t = self.step_counts[:, None].astype(np.float64)
            m, v, flat = self.m, self.v, self.online.flat
            scratch = self._scratch()
        else:
            self.step_counts[active] += 1
            t = self.step_counts[active, None].astype(np.float64)
            m, v, flat, grad = self.m[active], self.v[active], self.online.flat[active], grad[active]
            scratch = np.empty_like(grad)
        m *= b1
        np.multiply(grad, 1.0 - b1, out=scratch)
        m += scratch
        v *= b2
        np.multiply(grad, grad, out=scratch)
        scratch *= 1.0 - b2
        v += scratch
        np.divide(v, 1.0 - b2 ** t, out=scratch)
        np.sqrt(scratch, out=scratch)
        scratch += ADAM_EPS
        np.divide(m, scratch, out=scratch)
        scratch *= cfg.learning_rate / (1.0 - b1 ** t)
        flat -= scratch
        if not active.all():  # fancy indexing copies; write the rows back
            self.m[active] = m
            self.v[active] = v
            self.online.flat[active] = flat

    def step_schedules(self):
        cfg = self.config
        self.epsilon = max(cfg.epsilon_final, self.epsilon - cfg.epsilon_decay)
        self.leniency = max(cfg.leniency_final, self.leniency - cfg.leniency_decay)

    def end_episode(self):
        self.erm.decay_importance(self.config.importance_decay)

    def greedy_actions(self, obs_matrix):
        q = self.online.forward(np.asarray(obs_matrix)[:, None, :])[:, 0, :]
        return np.argmax(q, axis=1)

    def export_agents(self):
        """Materialize ordinary per-agent objects (for eval / checkpoints)."""
        from .nn import AdamState
        from .replay import ReplayMemory

        agents = []
        for a in range(self.n):
            ag = CilDdqnAgent.__new__(CilDdqnAgent)
            ag.config = self.config
            ag.obs_dim = self.obs_dim
            ag.n_actions = self.n_actions
            ag.online = self.online.export_row(a)
            ag.target = self.target.export_row(a)
            ag.opt = AdamState(ag.online, learning_rate=self.config.learning_rate)
            ag.opt.step_count = int(self.step_counts[a])
            ag.opt.m = self.m[a].copy()
            ag.opt.v = self.v[a].copy()
            ag.erm = ReplayMemory(self.config.erm_capacity, self.obs_dim)
            ag.rng = self.rngs[a]
            ag.epsilon = self.epsilon
            ag.leniency = self.leniency
            agents.append(ag)
        return agents
