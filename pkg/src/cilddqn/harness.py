"""Experiment orchestration: training, evaluation, ablations, sweeps.

Every run is a pure function of (config, seed): agents get per-agent
seeds derived from the run seed, the environment's arrival schedule
comes from the scenario seed, and all emitted files use deterministic
formatting, so re-running a config reproduces identical bytes.

Outputs per experiment directory:
  train_<algo>_<mode>_seed<k>.csv   one row per episode (curve data)
  ckpt_<algo>_seed<k>.agent<i>.*    final per-agent checkpoints
  eval_summary.csv                  metrics table, one row per algorithm
  manifest.json                     resolved config + package version
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field, replace

import numpy as np

from . import __version__
from .agents import ALGORITHMS, AgentConfig, CilDdqnAgent, LdqnAgent, make_agent
from .baselines import FixedTimeController, SotlController
from .traffic import ScenarioConfig, TrafficEnv
from .twostep import TwoStepGame

CONTROLLERS = ("fixedtime", "sotl")
TRAIN_HEADER = "episode,mean_cum_reward,throughput,travel_time_s,queue_length"
TRAIN_HEADER_PLAIN = "episode,mean_cum_reward"
EVAL_HEADER = "algorithm,travel_time_s,queue_length,throughput"

# Agent sizing used by the built-in desk scenarios. The full-size network
# (two 200-unit layers) trains the same way, just slower; these keep the
# whole experiment suite tractable on one core. The batch is kept at 16
# because late training (epsilon and leniency at their floors) is
# gradient-noise sensitive: smaller batches let the policy drift off its
# optimum after the schedules finish.
DESK_AGENT = {"hidden_sizes": (20, 20), "batch_size": 16}
TWO_STEP_AGENT = {"hidden_sizes": (32, 32), "batch_size": 32, "erm_capacity": 50_000}


def builtin_scenario(name):
    if name == "grid-2x2":
        return ScenarioConfig(rows=2, cols=2, horizon_steps=120,
                              arrival_mean={"N": 0.5, "E": 0.3, "S": 0.5, "W": 0.3},
                              arrival_std={"N": 0.3, "E": 0.2, "S": 0.3, "W": 0.2},
                              seed=2024)
    if name == "grid-4x4":
        # asymmetric demand: the north-south axis carries most of the traffic,
        # so an even fixed-time split wastes a lot of green time
        return ScenarioConfig(rows=4, cols=4, horizon_steps=360,
                              arrival_mean={"N": 1.3, "E": 0.55, "S": 1.3, "W": 0.55},
                              arrival_std={"N": 0.3, "E": 0.2, "S": 0.3, "W": 0.2},
                              seed=2024)
    return None


def resolve_scenario(scenario):
    """Registry name, path to a scenario file, or a ready ScenarioConfig."""
    if isinstance(scenario, ScenarioConfig):
        return scenario
    cfg = builtin_scenario(scenario)
    if cfg is not None:
        return cfg
    if os.path.exists(scenario):
        return ScenarioConfig.from_file(scenario)
    raise ValueError(f"unknown scenario {scenario!r} (not a registry name or readable file)")


@dataclass
class ExperimentConfig:
    algorithm: str
    scenario: str = "grid-4x4"
    reward_mode: str = "local"
    episodes: int = 300
    seeds: tuple = (1, 2, 3, 4, 5)
    out_dir: str = "runs"
    agent_overrides: dict = field(default_factory=dict)
    scale_schedules: bool = True
    engine: str = "vector"  # "vector" (stacked execution) or "reference"
    save_checkpoints: bool = True
    log_steps: bool = False
    eval_episodes: int = 1
    fixedtime_durations: tuple = (3, 3, 3, 3)
    sotl_threshold: float = 5.0
    sotl_min_green: int = 2

    def validate(self):
        if self.algorithm not in ALGORITHMS + CONTROLLERS:
            raise ValueError(f"unknown algorithm {self.algorithm!r}")
        if self.episodes < 1:
            raise ValueError("episodes must be >= 1")
        if not self.seeds:
            raise ValueError("need at least one seed")
        return self


def agent_seed(run_seed, agent_index):
    return int(run_seed) * 1_000_003 + int(agent_index)


# fraction of the planned budget by which the longest schedule should have
# reached its floor; the remainder trains with exploration and leniency at
# their final values so the learned values settle before evaluation
SCHEDULE_COMPLETION = 0.85


def scaled_agent_config(overrides, total_steps, scale=True, desk_defaults=None):
    """AgentConfig with schedule decay rates rescaled to the planned budget.

    The stock decay rates assume a long full-scale run in which the
    leniency schedule (the longer of the two) runs to its floor. Scaling
    multiplies both decay rates by the same factor so the longest
    schedule completes near the end of the planned budget (at
    SCHEDULE_COMPLETION of it) and the two schedules keep their relative
    shape (epsilon bottoms out a bit before halfway, leniency late).
    Explicit overrides always win over scaling.
    """
    base = AgentConfig()
    if scale and total_steps > 0:
        horizons = []
        if base.epsilon_decay > 0:
            horizons.append((base.epsilon_init - base.epsilon_final) / base.epsilon_decay)
        if base.leniency_decay > 0:
            horizons.append((base.leniency_init - base.leniency_final) / base.leniency_decay)
        factor = max(horizons) / (SCHEDULE_COMPLETION * total_steps)
        # the replay capacity shrinks with the budget too (at full scale the
        # buffer evicts old transitions long before training ends), but only
        # half as aggressively: too small a window starves learners of state
        # coverage once exploration has annealed, too large a one drowns the
        # decayed-importance batches in stale samples
        capacity = max(4 * base.batch_size, int(round(2 * base.erm_capacity / factor)))
        base = replace(base, epsilon_decay=base.epsilon_decay * factor,
                       leniency_decay=base.leniency_decay * factor,
                       erm_capacity=capacity)
    merged = dict(desk_defaults or {})
    merged.update(overrides or {})
    if "hidden_sizes" in merged:
        merged["hidden_sizes"] = tuple(merged["hidden_sizes"])
    return replace(base, **merged).validate()


def _fmt(x):
    if isinstance(x, float):
        return repr(x)
    return str(x)


def write_csv(path, header, rows):
    with open(path, "w", newline="\n") as fh:
        fh.write(header + "\n")
        for row in rows:
            fh.write(",".join(_fmt(v) for v in row) + "\n")


def read_csv(path):
    with open(path) as fh:
        header = fh.readline().strip().split(",")
        rows = []
        for line in fh:
            parts = line.strip().split(",")
            rows.append({k: v for k, v in zip(header, parts)})
    return header, rows


def write_manifest(out_dir, config, extra=None):
    payload = {
        "version": __version__,
        "config": {k: (list(v) if isinstance(v, tuple) else v) for k, v in vars(config).items()},
    }
    if extra:
        payload.update(extra)
    with open(os.path.join(out_dir, "manifest.json"), "w") as fh:
        json.dump(payload, fh, indent=1, sort_keys=True)


# -- environment construction ----------------------------------------------


def make_env(config):
    if config.scenario == "two-step":
        return TwoStepGame()
    return TrafficEnv(resolve_scenario(config.scenario), reward_mode=config.reward_mode)


def _resolve_agent_config(config, env, total_steps):
    desk = TWO_STEP_AGENT if isinstance(env, TwoStepGame) else DESK_AGENT
    return scaled_agent_config(config.agent_overrides, total_steps,
                               config.scale_schedules, desk)


class _ReferenceGroup:
    """Run the per-agent reference implementation, one object per agent."""

    def __init__(self, config, env, run_seed, agent_cfg):
        self.agents = [
            make_agent(config.algorithm, env.obs_dim, env.n_actions, agent_cfg,
                       seed=agent_seed(run_seed, i))
            for i in range(env.n_agents)
        ]

    def act(self, obs):
        return [ag.select_action(o) for ag, o in zip(self.agents, obs)]

    def record_and_train(self, obs, actions, rewards, next_obs, done):
        for i, ag in enumerate(self.agents):
            ag.observe(obs[i], actions[i], rewards[i], next_obs[i], done)
            ag.train_if_ready()
            ag.step_schedules()

    def end_episode(self):
        for ag in self.agents:
            ag.end_episode()

    def export(self):
        return self.agents


class _VectorGroup:
    """Same algorithm executed by the stacked-array engine."""

    def __init__(self, config, env, run_seed, agent_cfg):
        from .fastpath import VectorTrainer

        self.trainer = VectorTrainer(
            config.algorithm, env.n_agents, env.obs_dim, env.n_actions, agent_cfg,
            seeds=[agent_seed(run_seed, i) for i in range(env.n_agents)],
        )

    def act(self, obs):
        return [int(a) for a in self.trainer.select_actions(np.asarray(obs))]

    def record_and_train(self, obs, actions, rewards, next_obs, done):
        t = self.trainer
        t.observe(np.asarray(obs), np.asarray(actions), np.asarray(rewards),
                  np.asarray(next_obs), done)
        t.learn_if_ready()
        t.step_schedules()

    def end_episode(self):
        self.trainer.end_episode()

    def export(self):
        return self.trainer.export_agents()


def _make_group(config, env, run_seed, total_steps):
    agent_cfg = _resolve_agent_config(config, env, total_steps)
    if config.engine == "vector" and config.algorithm in ("cil-ddqn", "iddqn"):
        return _VectorGroup(config, env, run_seed, agent_cfg)
    return _ReferenceGroup(config, env, run_seed, agent_cfg)


def _make_controllers(config, env):
    if config.algorithm == "fixedtime":
        return [FixedTimeController(config.fixedtime_durations) for _ in range(env.n_agents)]
    return [SotlController(config.sotl_threshold, config.sotl_min_green)
            for _ in range(env.n_agents)]


# -- training ----------------------------------------------------------------


def train_one_seed(config, run_seed):
    """Run one seeded training (or controller rollout); returns a summary dict."""
    config.validate()
    env = make_env(config)
    horizon = env.cfg.horizon_steps if isinstance(env, TrafficEnv) else env.horizon
    total_steps = config.episodes * horizon
    learning = config.algorithm in ALGORITHMS
    if learning:
        group = _make_group(config, env, run_seed, total_steps)
    else:
        controllers = _make_controllers(config, env)

    os.makedirs(config.out_dir, exist_ok=True)
    has_metrics = isinstance(env, TrafficEnv)
    rows = []
    curve = []
    for ep in range(config.episodes):
        obs = env.reset()
        if config.log_steps and has_metrics:
            env.enable_step_log()
        if not learning:
            for c in controllers:
                c.reset()
        cum = np.zeros(env.n_agents)
        done = False
        t = 0
        while not done:
            if learning:
                actions = group.act(obs)
            else:
                actions = [controllers[i].act(env, i, t) for i in range(env.n_agents)]
            next_obs, rewards, done, _ = env.step(actions)
            if learning:
                group.record_and_train(obs, actions, rewards, next_obs, done)
            cum += rewards
            obs = next_obs
            t += 1
        if learning:
            group.end_episode()
        mean_cum = float(cum.mean())
        curve.append(mean_cum)
        if has_metrics:
            m = env.metrics()
            rows.append((ep, mean_cum, m.throughput, m.travel_time_s, m.queue_length))
        else:
            rows.append((ep, mean_cum))
        if config.log_steps and has_metrics:
            _write_step_log(config.out_dir, config, run_seed, ep, env.step_log)

    tag = f"{config.algorithm}_{config.reward_mode}_seed{run_seed}"
    csv_path = os.path.join(config.out_dir, f"train_{tag}.csv")
    write_csv(csv_path, TRAIN_HEADER if has_metrics else TRAIN_HEADER_PLAIN, rows)

    summary = {"seed": run_seed, "csv": csv_path, "curve": curve}
    if learning:
        agents = group.export()
        summary["agents"] = agents
        if config.save_checkpoints:
            prefix = os.path.join(config.out_dir, f"ckpt_{config.algorithm}_seed{run_seed}")
            for i, ag in enumerate(agents):
                ag.save(f"{prefix}.agent{i:02d}")
            summary["ckpt_prefix"] = prefix
            summary["n_agents"] = env.n_agents
    if has_metrics:
        summary["final_metrics"] = env.metrics()
    return summary


def run_training(config):
    """Train (or roll out) every seed sequentially; returns per-seed summaries."""
    config.validate()
    os.makedirs(config.out_dir, exist_ok=True)
    write_manifest(config.out_dir, config)
    return [train_one_seed(config, s) for s in config.seeds]


# -- evaluation ---------------------------------------------------------------


def _load_agents(prefix, n_agents, algorithm):
    cls = LdqnAgent if algorithm == "ldqn" else CilDdqnAgent
    return [cls.load(f"{prefix}.agent{i:02d}") for i in range(n_agents)]


def evaluate_policy(env, act_fn, episodes):
    """Greedy rollouts; returns mean MetricsRecord fields over episodes."""
    tp, tt, ql = [], [], []
    for _ in range(episodes):
        obs = env.reset()
        done = False
        t = 0
        while not done:
            actions = act_fn(env, obs, t)
            obs, _, done, _ = env.step(actions)
            t += 1
        m = env.metrics()
        tp.append(m.throughput)
        tt.append(m.travel_time_s)
        ql.append(m.queue_length)
    return float(np.mean(tt)), float(np.mean(ql)), float(np.mean(tp))


def eval_agents(agents, scenario, reward_mode="local", episodes=1):
    env = TrafficEnv(resolve_scenario(scenario), reward_mode=reward_mode)
    if env.obs_dim != agents[0].obs_dim or env.n_agents != len(agents):
        raise ValueError(
            f"checkpoint shape mismatch: scenario has {env.n_agents} agents with "
            f"obs dim {env.obs_dim}, checkpoints have {len(agents)} with {agents[0].obs_dim}"
        )

    def act(env_, obs, t):
        return [agents[i].greedy_action(obs[i]) for i in range(env_.n_agents)]

    return evaluate_policy(env, act, episodes)


def eval_controller(config, episodes=None):
    env = make_env(config)
    controllers = _make_controllers(config, env)

    def act(env_, obs, t):
        if t == 0:
            for c in controllers:
                c.reset()
        return [controllers[i].act(env_, i, t) for i in range(env_.n_agents)]

    return evaluate_policy(env, act, episodes or config.eval_episodes)


def run_eval(config, train_summaries=None):
    """Greedy evaluation over seeds -> rows of (algorithm, metrics means).

    For learning algorithms the final checkpoints of each seed are
    evaluated; controllers are rolled out directly.
    """
    config.validate()
    os.makedirs(config.out_dir, exist_ok=True)
    if config.algorithm in CONTROLLERS:
        tt, ql, tp = eval_controller(config)
        per_seed = [(config.algorithm, 0, tt, ql, tp)]
    else:
        per_seed = []
        for s in config.seeds:
            prefix = os.path.join(config.out_dir, f"ckpt_{config.algorithm}_seed{s}")
            if train_summaries is not None:
                agents = next(r["agents"] for r in train_summaries if r["seed"] == s)
            else:
                n = resolve_scenario(config.scenario).rows * resolve_scenario(config.scenario).cols
                agents = _load_agents(prefix, n, config.algorithm)
            tt, ql, tp = eval_agents(agents, config.scenario, config.reward_mode,
                                     config.eval_episodes)
            per_seed.append((config.algorithm, s, tt, ql, tp))
    seed_csv = os.path.join(config.out_dir, f"eval_{config.algorithm}_per_seed.csv")
    write_csv(seed_csv, "algorithm,seed,travel_time_s,queue_length,throughput", per_seed)
    tt = float(np.mean([r[2] for r in per_seed]))
    ql = float(np.mean([r[3] for r in per_seed]))
    tp = float(np.mean([r[4] for r in per_seed]))
    return (config.algorithm, tt, ql, tp)


def write_eval_table(out_dir, rows):
    path = os.path.join(out_dir, "eval_summary.csv")
    write_csv(path, EVAL_HEADER, rows)
    return path


# -- the named experiments ---------------------------------------------------


def run_reward_ablation(config, algorithms=("cil-ddqn", "iddqn"),
                        modes=("local", "global", "discount")):
    """Train algorithms x reward modes on one scenario; emit a travel-time table."""
    config.validate()
    os.makedirs(config.out_dir, exist_ok=True)
    write_manifest(config.out_dir, config, {"experiment": "reward-ablation"})
    rows = []
    results = {}
    for algo in algorithms:
        for mode in modes:
            sub = replace(config, algorithm=algo, reward_mode=mode,
                          out_dir=os.path.join(config.out_dir, f"{algo}_{mode}"))
            summaries = run_training(sub)
            _, tt, ql, tp = run_eval(sub, summaries)
            rows.append((algo, mode, tt))
            results[(algo, mode)] = {"travel_time_s": tt, "queue_length": ql,
                                     "throughput": tp, "summaries": summaries}
    path = os.path.join(config.out_dir, "ablation_travel_time.csv")
    write_csv(path, "algorithm,reward_mode,travel_time_s", rows)
    return results


def final_mean_reward(summaries, tail_fraction=0.1):
    """Mean cumulative reward over the last tail of training, seed-averaged."""
    vals = []
    for s in summaries:
        curve = s["curve"]
        k = max(1, int(len(curve) * tail_fraction))
        vals.append(float(np.mean(curve[-k:])))
    return float(np.mean(vals))


def run_param_study(config, parameter, values):
    """Sweep the importance decay (d_e) or leniency decay (d_l) rate."""
    if parameter not in ("d_e", "d_l"):
        raise ValueError(f"parameter must be 'd_e' or 'd_l', got {parameter!r}")
    key = "importance_decay" if parameter == "d_e" else "leniency_decay"
    config.validate()
    os.makedirs(config.out_dir, exist_ok=True)
    write_manifest(config.out_dir, config, {"experiment": f"param-study-{parameter}"})
    results = {}
    rows = []
    for v in values:
        overrides = dict(config.agent_overrides)
        overrides[key] = v
        sub = replace(config, agent_overrides=overrides,
                      out_dir=os.path.join(config.out_dir, f"{parameter}_{v}"))
        summaries = run_training(sub)
        fr = final_mean_reward(summaries)
        results[v] = {"summaries": summaries, "final_mean_reward": fr}
        rows.append((parameter, v, fr))
    write_csv(os.path.join(config.out_dir, f"study_{parameter}.csv"),
              "parameter,value,final_mean_reward", rows)
    return results


def greedy_two_step_payoff(agents, game=None):
    """Payoff of one fully greedy joint episode on the two-step game."""
    game = game or TwoStepGame()
    obs = game.reset()
    done = False
    reward = 0.0
    while not done:
        actions = [agents[i].greedy_action(obs[i]) for i in range(2)]
        obs, rewards, done, _ = game.step(actions)
        reward = rewards[0]
    return float(reward)


def learned_state_values(agent):
    """Q(state, action) of the online net at the three one-hot states."""
    out = {}
    for s, name in enumerate(("1", "2A", "2B")):
        onehot = np.zeros(3)
        onehot[s] = 1.0
        q = agent.online.forward(onehot)
        out[name] = [float(q[0]), float(q[1])]
    return out


def run_two_step(config):
    """Train on the two-step game over seeds; record final greedy payoffs."""
    config = replace(config, scenario="two-step", save_checkpoints=False)
    config.validate()
    os.makedirs(config.out_dir, exist_ok=True)
    write_manifest(config.out_dir, config, {"experiment": "two-step"})
    rows = []
    results = []
    for s in config.seeds:
        summary = train_one_seed(config, s)
        agents = summary["agents"]
        payoff = greedy_two_step_payoff(agents)
        results.append({"seed": s, "payoff": payoff,
                        "values": [learned_state_values(a) for a in agents]})
        rows.append((s, payoff))
    path = os.path.join(config.out_dir, f"twostep_{config.algorithm}.csv")
    write_csv(path, "seed,final_greedy_payoff", rows)
    return results


def _write_step_log(out_dir, config, seed, ep, log):
    path = os.path.join(out_dir, f"steplog_{config.algorithm}_seed{seed}_ep{ep}.csv")
    with open(path, "w", newline="\n") as fh:
        lane_cols = ",".join(f"wait_l{k}" for k in range(12))
        fh.write(f"step,intersection,phase,{lane_cols},reward\n")
        for (t, i, phase, waits, reward) in log:
            waits_s = ",".join(str(w) for w in waits)
            fh.write(f"{t},{i},{phase},{waits_s},{_fmt(float(reward))}\n")
