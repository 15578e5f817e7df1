"""Non-learning signal controllers used for comparison runs.

FixedTime cycles through the four phases on a fixed timetable. SOTL
("self-organizing") holds a phase until it has served a minimum green
time and some red lane group has built up enough accumulated demand,
then jumps to the neediest phase.
"""

from __future__ import annotations

import numpy as np

from .traffic import N_PHASES, PHASE_LANE_INDEX


def fixedtime_action(t, phase_durations):
    """Phase index at step t for a fixed cyclic timetable (dwell in steps)."""
    durations = [int(d) for d in phase_durations]
    if len(durations) != N_PHASES or any(d < 1 for d in durations):
        raise ValueError(f"need {N_PHASES} positive dwell times, got {phase_durations}")
    pos = t % sum(durations)
    for phase, d in enumerate(durations):
        if pos < d:
            return phase
        pos -= d
    raise AssertionError("unreachable")  # pragma: no cover


class FixedTimeController:
    def __init__(self, phase_durations=(3, 3, 3, 3)):
        fixedtime_action(0, phase_durations)  # validate early
        self.phase_durations = tuple(int(d) for d in phase_durations)

    def act(self, env, i, t):
        return fixedtime_action(t, self.phase_durations)

    def reset(self):
        pass


class SotlController:
    """Demand-actuated switching for one intersection.

    Per phase, accumulate the queued-vehicle count of its lane group
    while the phase is red. Once the current phase has been held for
    min_green_steps and some red group's accumulator exceeds the
    threshold, switch to the phase with the largest accumulator (ties to
    the lowest phase index).
    """

    def __init__(self, threshold=5.0, min_green_steps=2):
        if threshold <= 0:
            raise ValueError(f"threshold must be positive, got {threshold}")
        if min_green_steps < 1:
            raise ValueError(f"min_green_steps must be >= 1, got {min_green_steps}")
        self.threshold = float(threshold)
        self.min_green_steps = int(min_green_steps)
        self.reset()

    def reset(self):
        self.phase = 0
        self.hold = 0
        self.acc = np.zeros(N_PHASES)

    def act(self, env, i, t):
        waits = env.wait_counts(i)
        for p in range(N_PHASES):
            if p == self.phase:
                self.acc[p] = 0.0
            else:
                self.acc[p] += sum(waits[lane] for lane in PHASE_LANE_INDEX[p])
        self.hold += 1
        if self.hold >= self.min_green_steps and self.acc.max() > self.threshold:
            self.phase = int(np.argmax(self.acc))
            self.acc[self.phase] = 0.0
            self.hold = 0
        return self.phase


def make_controller(algorithm, **kwargs):
    if algorithm == "fixedtime":
        return FixedTimeController(**kwargs)
    if algorithm == "sotl":
        return SotlController(**kwargs)
    raise ValueError(f"unknown controller {algorithm!r}; expected 'fixedtime' or 'sotl'")
