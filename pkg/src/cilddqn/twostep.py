"""Two-step cooperative matrix game used as a correctness probe.

Two agents pick between actions A and B. Agent 1's first action selects
which 2x2 payoff matrix is played at the second step (Agent 2's first
action is ignored); at the second step both agents act and receive the
same team reward. The default payoffs make the high-payoff joint
strategy hard for averaging learners to find: one matrix pays a flat 7,
the other pays 8 only when both agents commit to B.

The module also provides exact game-theory helpers (equivalent one-shot
matrix, pure Nash equilibria, Pareto-optimal equilibria) and the two
closed-form value predictions for independent learners under full
exploration: plain averaging vs. the optimistic (lenient) limit.
"""

from __future__ import annotations

import json

import numpy as np

A, B = 0, 1
STATE_FIRST, STATE_2A, STATE_2B, STATE_TERMINAL = 0, 1, 2, 3

# Combined strategies: first-step action then second-step action for agent 1;
# (action in 2A, action in 2B) for agent 2.
STRATEGIES = ("AA", "AB", "BA", "BB")

DEFAULT_PAYOFF_2A = ((7.0, 7.0), (7.0, 7.0))
DEFAULT_PAYOFF_2B = ((0.0, 1.0), (1.0, 8.0))


class TwoStepGame:
    """The game itself, doubling as a 2-agent training environment.

    Observations are one-hot encodings of the three non-terminal states,
    identical for both agents.
    """

    n_agents = 2
    n_actions = 2
    obs_dim = 3
    horizon = 2

    def __init__(self, payoff_2a=DEFAULT_PAYOFF_2A, payoff_2b=DEFAULT_PAYOFF_2B):
        self.payoff_2a = np.asarray(payoff_2a, dtype=np.float64)
        self.payoff_2b = np.asarray(payoff_2b, dtype=np.float64)
        if self.payoff_2a.shape != (2, 2) or self.payoff_2b.shape != (2, 2):
            raise ValueError("payoff matrices must be 2x2")
        self.state = STATE_TERMINAL

    @classmethod
    def from_file(cls, path):
        with open(path) as fh:
            data = json.load(fh)
        if data.get("version") != 1 or data.get("kind") != "two-step":
            raise ValueError(f"{path}: not a version-1 two-step game file")
        return cls(data["payoff_2a"], data["payoff_2b"])

    def _obs(self):
        onehot = np.zeros(3)
        if self.state != STATE_TERMINAL:
            onehot[self.state] = 1.0
        return [onehot.copy(), onehot.copy()]

    def reset(self):
        self.state = STATE_FIRST
        return self._obs()

    def step(self, actions):
        """Advance one decision; returns (observations, rewards, done, info)."""
        a1, a2 = int(actions[0]), int(actions[1])
        if self.state == STATE_TERMINAL:
            raise RuntimeError("step() called on a finished episode; reset() first")
        if a1 not in (A, B) or a2 not in (A, B):
            raise ValueError(f"actions must be 0 (A) or 1 (B), got {actions}")
        if self.state == STATE_FIRST:
            self.state = STATE_2A if a1 == A else STATE_2B
            return self._obs(), [0.0, 0.0], False, {}
        payoff = self.payoff_2a if self.state == STATE_2A else self.payoff_2b
        r = float(payoff[a1, a2])
        self.state = STATE_TERMINAL
        return self._obs(), [r, r], True, {}

    def play(self, strat1, strat2):
        """Terminal reward when both agents follow fixed combined strategies."""
        x, y = strat1
        u, v = strat2
        self.reset()
        self.step([x, u])  # agent 2's first move has no effect
        second = u if x == A else v
        _, rewards, done, _ = self.step([y, second])
        assert done
        return rewards[0]


def equivalent_matrix(game):
    """4x4 one-shot payoff matrix over combined strategies.

    Rows index agent 1's (first action, second action); columns index
    agent 2's (action in 2A, action in 2B).
    """
    m = np.zeros((4, 4))
    for r, (x, y) in enumerate(((A, A), (A, B), (B, A), (B, B))):
        for c, (u, v) in enumerate(((A, A), (A, B), (B, A), (B, B))):
            if x == A:
                m[r, c] = game.payoff_2a[y, u]
            else:
                m[r, c] = game.payoff_2b[y, v]
    return m


def nash_equilibria(matrix):
    """All pure-strategy equilibria of a team game with shared payoff.

    A cell is an equilibrium iff neither player can strictly improve the
    shared payoff by deviating alone. Brute force over all cells.
    """
    m = np.asarray(matrix, dtype=np.float64)
    nes = []
    for r in range(m.shape[0]):
        for c in range(m.shape[1]):
            if m[r, c] >= m[:, c].max() and m[r, c] >= m[r, :].max():
                nes.append((r, c))
    return nes


def pareto_optimal_nes(matrix, nes):
    """Equilibria not payoff-dominated by another equilibrium.

    With a shared payoff, Pareto dominance collapses to a scalar
    comparison, so this is just the argmax set among the equilibria.
    """
    m = np.asarray(matrix, dtype=np.float64)
    if not nes:
        return []
    best = max(m[r, c] for r, c in nes)
    return [(r, c) for r, c in nes if m[r, c] == best]


def expected_q_uniform(game):
    """Values each agent would attribute to its combined strategies when the
    other agent acts uniformly at random and all experience is weighted
    equally: row and column averages of the equivalent matrix."""
    m = equivalent_matrix(game)
    return m.mean(axis=1), m.mean(axis=0)


def expected_q_lenient(game):
    """The fully lenient limit: experiences below a strategy's best outcome
    are ignored, so values approach row and column maxima."""
    m = equivalent_matrix(game)
    return m.max(axis=1), m.max(axis=0)
