"""Queue-based multi-intersection traffic simulator.

A deliberately simple point-queue world standing in for a microscopic
simulator: no car following, no lane changing, no clearance phases.
Vehicles sit in per-lane FIFO queues, a green (or right-turn) lane
discharges up to a fixed number of vehicles per control step, and
discharged vehicles spend a fixed number of steps "in transit" on the
link to their next intersection. All arrivals and routes are sampled up
front from the scenario seed, so an episode is a pure function of the
joint action sequence.

Conventions:
  * approaches are indexed N=0, E=1, S=2, W=3 (the side traffic comes from);
  * movements are L=0, T=1, R=2;
  * the 12 incoming lanes of an intersection are ordered approach-major
    (N_L, N_T, N_R, E_L, ... W_R) and observation vectors follow it;
  * phases: 0 = north/south through, 1 = east/west through,
            2 = north/south left, 3 = east/west left;
  * right-turn lanes discharge regardless of the phase;
  * wave[l] counts queued plus inbound vehicles headed for lane l
    (what an approach detector would see); wait[l] counts queued only.
"""

from __future__ import annotations

import json
from collections import deque
from dataclasses import dataclass, field

import numpy as np

N_APPROACHES = 4
N_MOVEMENTS = 3
N_LANES = N_APPROACHES * N_MOVEMENTS
N_PHASES = 4

LEFT, THROUGH, RIGHT = 0, 1, 2
APPROACH_NAMES = ("N", "E", "S", "W")
MOVEMENT_NAMES = ("L", "T", "R")
PHASE_NAMES = ("NS-through", "EW-through", "NS-left", "EW-left")
REWARD_MODES = ("local", "global", "discount")

# (approach, movement) pairs granted green per phase; right turns are
# handled separately (always allowed).
PHASE_LANES = (
    ((0, THROUGH), (2, THROUGH)),
    ((1, THROUGH), (3, THROUGH)),
    ((0, LEFT), (2, LEFT)),
    ((1, LEFT), (3, LEFT)),
)

SCENARIO_VERSION = 1
FLOW_VERSION = 1


def lane_index(approach, movement):
    return approach * N_MOVEMENTS + movement


RIGHT_TURN_LANES = tuple(lane_index(a, RIGHT) for a in range(N_APPROACHES))
PHASE_LANE_INDEX = tuple(
    tuple(lane_index(a, m) for a, m in pairs) for pairs in PHASE_LANES
)


def heading_of_travel(approach):
    """Compass direction a vehicle on this approach is moving toward."""
    return (approach + 2) % N_APPROACHES


def turn_heading(heading, movement):
    if movement == THROUGH:
        return heading
    if movement == LEFT:
        return (heading + 3) % N_APPROACHES
    return (heading + 1) % N_APPROACHES


def movement_between(heading_in, heading_out):
    """Movement that takes heading_in to heading_out; None for a U-turn."""
    if heading_out == heading_in:
        return THROUGH
    if heading_out == (heading_in + 3) % N_APPROACHES:
        return LEFT
    if heading_out == (heading_in + 1) % N_APPROACHES:
        return RIGHT
    return None


@dataclass
class ScenarioConfig:
    rows: int = 4
    cols: int = 4
    horizon_steps: int = 360
    control_interval_s: float = 10.0
    discharge_rate: int = 3
    link_delay_steps: int = 2
    lane_capacity: int = 40
    # left/through/right fractions used when sampling synthetic routes
    turn_ratios: tuple = (0.10, 0.60, 0.30)
    # per-side mean/std of boundary arrivals, vehicles per step per entry approach
    arrival_mean: dict = field(default_factory=lambda: {"N": 0.8, "E": 0.8, "S": 0.8, "W": 0.8})
    arrival_std: dict = field(default_factory=lambda: {"N": 0.3, "E": 0.3, "S": 0.3, "W": 0.3})
    seed: int = 0
    discount_beta: float = 0.9  # per-hop weight for the distance-discounted reward
    flows: list | None = None  # explicit vehicle list overrides Gaussian sampling

    def validate(self):
        if self.rows < 1 or self.cols < 1:
            raise ValueError(f"grid must be at least 1x1, got {self.rows}x{self.cols}")
        if self.horizon_steps < 1:
            raise ValueError(f"horizon must be >= 1 step, got {self.horizon_steps}")
        if abs(sum(self.turn_ratios) - 1.0) > 1e-9:
            raise ValueError(f"turn ratios must sum to 1, got {self.turn_ratios}")
        if any(r < 0 for r in self.turn_ratios):
            raise ValueError(f"turn ratios must be non-negative, got {self.turn_ratios}")
        if self.discharge_rate < 1:
            raise ValueError(f"discharge rate must be >= 1, got {self.discharge_rate}")
        if self.lane_capacity < 1:
            raise ValueError(f"lane capacity must be >= 1, got {self.lane_capacity}")
        if self.link_delay_steps < 1:
            raise ValueError(f"link delay must be >= 1 step, got {self.link_delay_steps}")
        if self.flows is None:
            for side in APPROACH_NAMES:
                if self.arrival_mean.get(side, 0.0) < 0 or self.arrival_std.get(side, 0.0) < 0:
                    raise ValueError("arrival rates must be non-negative")
        return self

    def to_dict(self):
        d = {
            "version": SCENARIO_VERSION,
            "kind": "grid",
            "rows": self.rows,
            "cols": self.cols,
            "horizon_steps": self.horizon_steps,
            "control_interval_s": self.control_interval_s,
            "discharge_rate": self.discharge_rate,
            "link_delay_steps": self.link_delay_steps,
            "lane_capacity": self.lane_capacity,
            "turn_ratios": list(self.turn_ratios),
            "arrival_mean": dict(self.arrival_mean),
            "arrival_std": dict(self.arrival_std),
            "seed": self.seed,
            "discount_beta": self.discount_beta,
        }
        if self.flows is not None:
            d["flows"] = self.flows
        return d

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=1)

    @classmethod
    def from_dict(cls, data):
        if data.get("version") != SCENARIO_VERSION:
            raise ValueError(f"unsupported scenario version {data.get('version')!r}")
        if data.get("kind") != "grid":
            raise ValueError(f"unsupported scenario kind {data.get('kind')!r}")
        kwargs = {k: data[k] for k in (
            "rows", "cols", "horizon_steps", "control_interval_s", "discharge_rate",
            "link_delay_steps", "lane_capacity", "seed", "discount_beta",
        ) if k in data}
        if "turn_ratios" in data:
            kwargs["turn_ratios"] = tuple(data["turn_ratios"])
        if "arrival_mean" in data:
            kwargs["arrival_mean"] = dict(data["arrival_mean"])
        if "arrival_std" in data:
            kwargs["arrival_std"] = dict(data["arrival_std"])
        if "flows" in data:
            kwargs["flows"] = data["flows"]
        return cls(**kwargs).validate()

    @classmethod
    def from_file(cls, path):
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


@dataclass
class Vehicle:
    vid: int
    depart_step: int
    # hops: list of (intersection id, lane index); the movement at the last
    # hop carries the vehicle off the grid
    hops: list
    enter_step: int = -1   # step it actually joined its first queue
    exit_step: int = -1
    hop: int = 0           # index of the next/current hop


class GridNetwork:
    """Geometry of a rows x cols grid: ids, neighbors, hop distances."""

    def __init__(self, rows, cols):
        self.rows = rows
        self.cols = cols
        self.n = rows * cols
        self.neighbors = []  # per intersection: dict approach -> neighbor id
        for i in range(self.n):
            r, c = divmod(i, cols)
            nb = {}
            if r > 0:
                nb[0] = i - cols      # N
            if c < cols - 1:
                nb[1] = i + 1         # E
            if r < rows - 1:
                nb[2] = i + cols      # S
            if c > 0:
                nb[3] = i - 1         # W
            self.neighbors.append(nb)
        self.neighbor_ids = [sorted(nb.values()) for nb in self.neighbors]
        self._distances = self._bfs_distances()

    def _bfs_distances(self):
        dist = np.full((self.n, self.n), -1, dtype=np.int64)
        for src in range(self.n):
            dist[src, src] = 0
            frontier = deque([src])
            while frontier:
                u = frontier.popleft()
                for v in self.neighbors[u].values():
                    if dist[src, v] < 0:
                        dist[src, v] = dist[src, u] + 1
                        frontier.append(v)
        return dist

    def hop_distance(self, i, j):
        return int(self._distances[i, j])

    def downstream(self, i, heading):
        """Neighbor id in the given compass direction, or None (off grid)."""
        return self.neighbors[i].get(heading)

    def entry_points(self):
        """(intersection, approach) pairs fed from outside the grid."""
        out = []
        for i in range(self.n):
            for a in range(N_APPROACHES):
                if a not in self.neighbors[i]:
                    out.append((i, a))
        return out


def _sample_route(net, entry, approach, ratios, rng, max_hops=200):
    """Random route from a boundary entry: movement drawn per hop until the
    vehicle leaves the grid. Falls back to going straight (which always
    exits) if the walk exceeds max_hops."""
    hops = []
    i, a = entry, approach
    for k in range(max_hops + net.rows + net.cols):
        if k < max_hops:
            m = int(rng.choice(N_MOVEMENTS, p=ratios))
        else:
            m = THROUGH
        hops.append((i, lane_index(a, m)))
        heading = turn_heading(heading_of_travel(a), m)
        nxt = net.downstream(i, heading)
        if nxt is None:
            return hops
        i, a = nxt, (heading + 2) % N_APPROACHES
    raise RuntimeError("route sampling failed to leave the grid")  # pragma: no cover


def _sample_vehicles(cfg, net, rng):
    """Pre-sample the whole episode's arrivals. Returns vehicles sorted by
    (depart_step, vid). Arrivals start at step 1 so entry times are
    strictly positive in the throughput metric."""
    ratios = [float(r) for r in cfg.turn_ratios]
    vehicles = []
    vid = 0
    for step in range(1, cfg.horizon_steps):
        for (i, a) in net.entry_points():
            side = APPROACH_NAMES[a]
            mean = float(cfg.arrival_mean.get(side, 0.0))
            std = float(cfg.arrival_std.get(side, 0.0))
            count = int(round(rng.normal(mean, std))) if (mean > 0 or std > 0) else 0
            for _ in range(max(0, count)):
                hops = _sample_route(net, i, a, ratios, rng)
                vehicles.append(Vehicle(vid=vid, depart_step=step, hops=hops))
                vid += 1
    return vehicles


def _vehicles_from_flows(cfg, net):
    """Build vehicles from an explicit flow list (see import_flow_file)."""
    vehicles = []
    for rec_no, rec in enumerate(cfg.flows or []):
        try:
            vehicles.append(_flow_record_to_vehicle(rec_no, rec, cfg, net))
        except ValueError as err:
            raise ValueError(f"flow record {rec_no}: {err}") from None
    if len({v.vid for v in vehicles}) != len(vehicles):
        raise ValueError("duplicate vehicle ids in flow list")
    vehicles.sort(key=lambda v: (v.depart_step, v.vid))
    return vehicles


def _flow_record_to_vehicle(rec_no, rec, cfg, net):
    route = rec.get("route")
    if not route:
        raise ValueError("missing or empty route")
    for node in route:
        if not 0 <= int(node) < net.n:
            raise ValueError(f"unknown intersection {node}")
    for a, b in zip(route[:-1], route[1:]):
        if int(b) not in net.neighbors[int(a)].values():
            raise ValueError(f"intersections {a} and {b} are not adjacent")
    start_s = float(rec.get("start_time", 0.0))
    depart = int(start_s // cfg.control_interval_s)
    headings = []
    for a, b in zip(route[:-1], route[1:]):
        for h, nb in net.neighbors[int(a)].items():
            if nb == int(b):
                headings.append(h)
                break
    # entry approach: explicit, else assume the vehicle drove straight
    # through its first intersection
    if "entry" in rec:
        entry_a = APPROACH_NAMES.index(rec["entry"])
    elif headings:
        entry_a = (headings[0] + 2) % N_APPROACHES
    else:
        boundary = [a for a in range(N_APPROACHES) if a not in net.neighbors[int(route[0])]]
        if not boundary:
            raise ValueError(f"single-hop route at interior intersection {route[0]} needs an 'entry'")
        entry_a = boundary[0]
    hops = []
    a = entry_a
    for k, node in enumerate(route):
        node = int(node)
        h_in = heading_of_travel(a)
        if k < len(headings):
            h_out = headings[k]
        else:
            h_out = _exit_heading(rec, net, node, h_in)
        m = movement_between(h_in, h_out)
        if m is None:
            raise ValueError(f"route makes a U-turn at intersection {node}")
        hops.append((node, lane_index(a, m)))
        a = (h_out + 2) % N_APPROACHES
    return Vehicle(vid=int(rec.get("id", rec_no)), depart_step=depart, hops=hops)


def _exit_heading(rec, net, node, h_in):
    if "exit" in rec:
        h = APPROACH_NAMES.index(rec["exit"])
        if net.downstream(node, h) is not None:
            raise ValueError(f"exit {rec['exit']} from intersection {node} is not a boundary")
        return h
    for h in (h_in, (h_in + 1) % 4, (h_in + 3) % 4):  # prefer straight, then right, left
        if net.downstream(node, h) is None:
            return h
    raise ValueError(f"route ends at interior intersection {node}")


def import_flow_file(path, base_config=None):
    """Read a flow file (list of vehicles with start time and route) into a
    ScenarioConfig. Unknown per-record fields are ignored so trimmed-down
    exports from other tools can be fed in directly."""
    with open(path) as fh:
        data = json.load(fh)
    if data.get("version") != FLOW_VERSION:
        raise ValueError(f"{path}: unsupported flow file version {data.get('version')!r}")
    cfg = base_config or ScenarioConfig()
    flows = []
    for rec_no, rec in enumerate(data.get("vehicles", [])):
        if not isinstance(rec, dict):
            raise ValueError(f"{path}: flow record {rec_no} is not an object")
        flows.append({k: rec[k] for k in ("id", "start_time", "route", "entry", "exit") if k in rec})
    cfg = ScenarioConfig(**{**vars(cfg), "flows": flows}).validate()
    # fail fast on bad routes
    _vehicles_from_flows(cfg, GridNetwork(cfg.rows, cfg.cols))
    return cfg


def export_flow_file(path, cfg):
    """Write the scenario's (explicit or sampled) vehicles as a flow file."""
    env = TrafficEnv(cfg)
    records = []
    for v in env.vehicles:
        last_approach, last_movement = divmod(v.hops[-1][1], N_MOVEMENTS)
        exit_heading = turn_heading(heading_of_travel(last_approach), last_movement)
        records.append({
            "id": v.vid,
            "start_time": v.depart_step * cfg.control_interval_s,
            "route": [node for node, _ in v.hops],
            "entry": APPROACH_NAMES[v.hops[0][1] // N_MOVEMENTS],
            "exit": APPROACH_NAMES[exit_heading],
        })
    with open(path, "w") as fh:
        json.dump({"version": FLOW_VERSION, "vehicles": records}, fh, indent=1)


@dataclass
class MetricsRecord:
    throughput: int
    travel_time_s: float
    queue_length: float
    no_vehicles: bool = False  # travel time reported as 0 because nothing entered


class TrafficEnv:
    """Multi-agent control surface over the queue world.

    One step() call advances one control interval: set phases, discharge
    green and right-turn lanes, deliver matured in-transit vehicles
    (capacity permitting), inject scheduled boundary arrivals, then
    report observations and rewards.
    """

    def __init__(self, config, reward_mode="local"):
        self.cfg = config.validate()
        if reward_mode not in REWARD_MODES:
            raise ValueError(f"unknown reward mode {reward_mode!r}; expected {REWARD_MODES}")
        self.reward_mode = reward_mode
        self.net = GridNetwork(self.cfg.rows, self.cfg.cols)
        self.n_agents = self.net.n
        self.obs_dim = N_PHASES + N_LANES
        self.n_actions = N_PHASES
        rng = np.random.default_rng(self.cfg.seed)
        if self.cfg.flows is not None:
            self.vehicles = _vehicles_from_flows(self.cfg, self.net)
        else:
            self.vehicles = _sample_vehicles(self.cfg, self.net, rng)
        self._beta_weights = self.cfg.discount_beta ** self.net._distances
        self.reset()

    # -- episode lifecycle -------------------------------------------------

    def reset(self):
        self.t = 0
        self.done = False
        self.phases = [0] * self.n_agents
        self.queues = [[deque() for _ in range(N_LANES)] for _ in range(self.n_agents)]
        # inbound[i][lane]: FIFO of (arrival step, vid); matured entries wait
        # at the head when the destination lane is full (spillback)
        self.inbound = [[deque() for _ in range(N_LANES)] for _ in range(self.n_agents)]
        self.pending_entry = [[deque() for _ in range(N_LANES)] for _ in range(self.n_agents)]
        # nonempty-buffer keys, so the delivery/injection sweeps skip the
        # (usually empty) remainder of the 192 lane pairs; lanes are
        # independent, so sweep order does not affect the dynamics
        self._active_inbound = {}
        self._active_pending = {}
        self.exited = 0
        self.entered = 0
        self._arrival_cursor = 0
        for v in self.vehicles:
            v.enter_step = -1
            v.exit_step = -1
            v.hop = 0
        self._wait_sum_steps = np.zeros(self.n_agents)  # sum over steps of per-lane-avg wait
        self._steps_recorded = 0
        self.step_log = None
        return [self.observe(i) for i in range(self.n_agents)]

    def enable_step_log(self):
        """Record (step, intersection, phase, wait per lane, reward) rows."""
        self.step_log = []

    # -- dynamics ----------------------------------------------------------

    def step(self, joint_action):
        if self.done:
            raise RuntimeError("episode finished; call reset()")
        if len(joint_action) != self.n_agents:
            raise ValueError(f"need one action per intersection ({self.n_agents}), got {len(joint_action)}")
        for i, a in enumerate(joint_action):
            a = int(a)
            if not 0 <= a < N_PHASES:
                raise ValueError(f"invalid phase {a} for intersection {i}")
            self.phases[i] = a

        for i in range(self.n_agents):
            served = PHASE_LANE_INDEX[self.phases[i]] + RIGHT_TURN_LANES
            for lane in served:
                q = self.queues[i][lane]
                for _ in range(min(self.cfg.discharge_rate, len(q))):
                    self._route_onward(q.popleft())

        self._deliver_inbound()
        self._inject_arrivals()

        self.t += 1
        self.done = self.t >= self.cfg.horizon_steps

        totals = [self._total_wait(i) for i in range(self.n_agents)]
        rewards = self._rewards_from_totals(totals)
        self._record_step(rewards, totals)
        obs = [self.observe(i) for i in range(self.n_agents)]
        info = {"step": self.t, "exited": self.exited, "entered": self.entered}
        return obs, rewards, self.done, info

    def _route_onward(self, vid):
        v = self.vehicles[self._vindex[vid]]
        v.hop += 1
        if v.hop >= len(v.hops):
            v.exit_step = self.t
            self.exited += 1
            return
        node, lane = v.hops[v.hop]
        self.inbound[node][lane].append((self.t + self.cfg.link_delay_steps, vid))
        self._active_inbound[(node, lane)] = True

    def _deliver_inbound(self):
        cap = self.cfg.lane_capacity
        for (i, lane) in list(self._active_inbound):
            buf = self.inbound[i][lane]
            q = self.queues[i][lane]
            while buf and buf[0][0] <= self.t and len(q) < cap:
                q.append(buf.popleft()[1])
            if not buf:
                del self._active_inbound[(i, lane)]

    def _inject_arrivals(self):
        vs = self.vehicles
        while self._arrival_cursor < len(vs) and vs[self._arrival_cursor].depart_step <= self.t:
            v = vs[self._arrival_cursor]
            node, lane = v.hops[0]
            self.pending_entry[node][lane].append(v.vid)
            self._active_pending[(node, lane)] = True
            self._arrival_cursor += 1
        cap = self.cfg.lane_capacity
        for (i, lane) in list(self._active_pending):
            pend = self.pending_entry[i][lane]
            q = self.queues[i][lane]
            while pend and len(q) < cap:
                vid = pend.popleft()
                self.vehicles[self._vindex[vid]].enter_step = self.t
                q.append(vid)
                self.entered += 1
            if not pend:
                del self._active_pending[(i, lane)]

    def _record_step(self, rewards, totals):
        for i in range(self.n_agents):
            self._wait_sum_steps[i] += totals[i] / N_LANES
        self._steps_recorded += 1
        if self.step_log is not None:
            for i in range(self.n_agents):
                waits = [len(q) for q in self.queues[i]]
                self.step_log.append((self.t, i, self.phases[i], waits, rewards[i]))

    # -- observation and reward -------------------------------------------

    def observe(self, i):
        """Current phase one-hot plus the wave count of each incoming lane."""
        out = np.zeros(self.obs_dim)
        out[self.phases[i]] = 1.0
        out[N_PHASES:] = [len(q) + len(b) for q, b in zip(self.queues[i], self.inbound[i])]
        return out

    def wait_counts(self, i):
        """Queued-vehicle count per incoming lane (the reward quantity)."""
        return [len(q) for q in self.queues[i]]

    def _total_wait(self, i):
        return sum(len(q) for q in self.queues[i])

    def reward(self, i, mode=None):
        totals = [self._total_wait(j) for j in range(self.n_agents)]
        return self._rewards_from_totals(totals, mode)[i]

    def _rewards_from_totals(self, totals, mode=None):
        mode = mode or self.reward_mode
        if mode == "local":
            out = []
            for i in range(self.n_agents):
                group = [i] + self.net.neighbor_ids[i]
                out.append(-sum(totals[j] for j in group) / len(group))
            return out
        if mode == "global":
            g = -sum(totals) / self.n_agents
            return [g] * self.n_agents
        if mode == "discount":
            return [-float(sum(self._beta_weights[i][j] * totals[j]
                               for j in range(self.n_agents)))
                    for i in range(self.n_agents)]
        raise ValueError(f"unknown reward mode {mode!r}; expected {REWARD_MODES}")

    # -- accounting ---------------------------------------------------------

    @property
    def _vindex(self):
        idx = getattr(self, "_vindex_cache", None)
        if idx is None or len(idx) != len(self.vehicles):
            idx = {v.vid: k for k, v in enumerate(self.vehicles)}
            self._vindex_cache = idx
        return idx

    def census(self):
        """Vehicle counts by location, for conservation checks."""
        queued = sum(len(q) for qs in self.queues for q in qs)
        in_transit = sum(len(b) for bs in self.inbound for b in bs)
        pending = sum(len(p) for ps in self.pending_entry for p in ps)
        scheduled = len(self.vehicles) - self._arrival_cursor
        return {
            "queued": queued,
            "in_transit": in_transit,
            "exited": self.exited,
            "entered": self.entered,
            "pending_entry": pending,
            "not_yet_scheduled": scheduled,
            "total": len(self.vehicles),
        }

    def metrics(self):
        """End-of-episode throughput, mean travel time, mean queue length."""
        if not self.done:
            raise RuntimeError("metrics() is only valid after the episode finished")
        interval = self.cfg.control_interval_s
        horizon_s = self.cfg.horizon_steps * interval
        throughput = 0
        total_tt = 0.0
        entered = 0
        for v in self.vehicles:
            if v.enter_step < 0:
                continue
            entered += 1
            t_in = v.enter_step * interval
            t_out = (v.exit_step if v.exit_step >= 0 else self.cfg.horizon_steps) * interval
            total_tt += t_out - t_in
            if 0 < t_in < t_out < horizon_s and v.exit_step >= 0:
                throughput += 1
        no_vehicles = entered == 0
        travel_time = 0.0 if no_vehicles else total_tt / entered
        queue_length = float(np.mean(self._wait_sum_steps / max(1, self._steps_recorded)))
        return MetricsRecord(
            throughput=throughput,
            travel_time_s=travel_time,
            queue_length=queue_length,
            no_vehicles=no_vehicles,
        )


def load_scenario(config, reward_mode="local"):
    """Build a TrafficEnv from a ScenarioConfig (or a scenario file path)."""
    if isinstance(config, (str, bytes)):
        config = ScenarioConfig.from_file(config)
    return TrafficEnv(config, reward_mode=reward_mode)
