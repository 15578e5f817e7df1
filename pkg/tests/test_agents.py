import numpy as np
import pytest

from cilddqn.agents import (
    AgentConfig,
    CilDdqnAgent,
    LdqnAgent,
    LenientTemperatureTable,
    ldqn_apply_update,
    make_agent,
    refine_td,
    refined_weights,
    state_key,
)
from cilddqn.replay import Batch

SMALL = dict(hidden_sizes=(8, 8), batch_size=4, erm_capacity=100)


def small_agent(algo="cil-ddqn", seed=0, **kw):
    cfg = AgentConfig(**{**SMALL, **kw})
    return make_agent(algo, obs_dim=3, n_actions=4, config=cfg, seed=seed)


class TestRefineTd:
    def test_positive_branch(self):
        assert refine_td(2.0, 0.5, 0.7) == 1.0

    def test_negative_branch(self):
        assert refine_td(-2.0, 1.0, 0.5) == -1.0

    def test_identity_when_unlenient_and_fresh(self):
        for d in (-3.0, -0.1, 0.1, 3.0):
            assert refine_td(d, 1.0, 0.0) == d

    def test_properties_bulk(self):
        rng = np.random.default_rng(0)
        d = rng.normal(scale=5.0, size=100_000)
        e = rng.uniform(1e-9, 1.0, size=100_000)
        l = rng.uniform(0.0, 1.0, size=100_000)
        r = refine_td(d, e, l)
        assert (np.abs(r) <= np.abs(d)).all()          # never amplifies
        assert (r * d >= 0.0).all()                    # never flips sign
        assert (refine_td(np.abs(d), e, 0.1) == refine_td(np.abs(d), e, 0.9)).all()

    def test_full_leniency_zeroes_negative(self):
        assert refine_td(-5.0, 1.0, 1.0) == 0.0


class TestSelectAction:
    def test_pure_exploration_uniform(self):
        ag = small_agent(epsilon_init=1.0)
        counts = np.zeros(4)
        obs = np.zeros(3)
        for _ in range(10_000):
            counts[ag.select_action(obs)] += 1
        # chi-squared against uniform, 3 dof, 99.9% quantile ~ 16.3
        chi2 = ((counts - 2500.0) ** 2 / 2500.0).sum()
        assert chi2 < 16.3

    def test_greedy_argmax(self):
        ag = small_agent(epsilon_init=0.0, epsilon_final=0.0)
        ag.online.flat[:] = 0.0
        ag.online.biases[-1][:] = [1.0, 5.0, 2.0, 0.0]
        assert ag.select_action(np.zeros(3)) == 1

    def test_tie_breaks_to_lowest_index(self):
        ag = small_agent(epsilon_init=0.0, epsilon_final=0.0)
        ag.online.flat[:] = 0.0
        ag.online.biases[-1][:] = [3.0, 3.0, 1.0, 1.0]
        assert ag.select_action(np.zeros(3)) == 0

    def test_argmax_invariant_to_constant_shift(self):
        ag = small_agent(epsilon_init=0.0, epsilon_final=0.0)
        obs = np.array([0.5, -1.0, 2.0])
        a1 = ag.select_action(obs)
        ag.online.biases[-1][:] += 123.0
        assert ag.select_action(obs) == a1


class TestDdqnTarget:
    def test_terminal_uses_reward_only(self):
        ag = small_agent()
        assert ag.ddqn_target(-4.0, np.zeros(3), True) == -4.0

    def test_decoupled_selection_and_evaluation(self):
        ag = small_agent(gamma=0.9, hidden_sizes=(4,), batch_size=2)
        ag.online.flat[:] = 0.0
        ag.target.flat[:] = 0.0
        # online prefers action 1; target scores it -10
        ag.online.biases[-1][:] = [1.0, 2.0, -99.0, -99.0]
        ag.target.biases[-1][:] = [10.0, -10.0, 0.0, 0.0]
        y = ag.ddqn_target(0.0, np.zeros(3), False)
        assert y == pytest.approx(0.9 * -10.0)

    def test_gamma_zero(self):
        ag = small_agent(gamma=0.0)
        assert ag.ddqn_target(1.5, np.ones(3), False) == 1.5


def _fabricate_batch(ag, n=4):
    rng = np.random.default_rng(3)
    return Batch(obs=rng.normal(size=(n, 3)), actions=rng.integers(4, size=n),
                 rewards=rng.normal(size=n), next_obs=rng.normal(size=(n, 3)),
                 dones=np.zeros(n, dtype=bool), importance=np.ones(n),
                 indices=np.arange(n))


class TestLearn:
    def test_zero_delta_batch_is_noop(self):
        ag = small_agent()
        rng = np.random.default_rng(1)
        obs = rng.normal(size=(4, 3))
        actions = rng.integers(4, size=4)
        # terminal samples with reward equal to the current prediction: delta 0
        q = ag.online.forward_batch(obs)[np.arange(4), actions]
        batch = Batch(obs=obs, actions=actions, rewards=q, next_obs=obs,
                      dones=np.ones(4, dtype=bool), importance=np.ones(4),
                      indices=np.arange(4))
        before = ag.online.flat.copy()
        loss = ag.learn(batch)
        assert loss == 0.0
        # soft update still ran; online params untouched
        assert (ag.online.flat == before).all()

    def test_full_leniency_masks_all_punishment(self):
        ag = small_agent(leniency_init=1.0)
        rng = np.random.default_rng(2)
        obs = rng.normal(size=(4, 3))
        actions = rng.integers(4, size=4)
        q = ag.online.forward_batch(obs)[np.arange(4), actions]
        batch = Batch(obs=obs, actions=actions, rewards=q - 1.0, next_obs=obs,
                      dones=np.ones(4, dtype=bool), importance=np.ones(4),
                      indices=np.arange(4))
        before = ag.online.flat.copy()
        loss = ag.learn(batch)
        assert loss == 0.0
        assert (ag.online.flat == before).all()

    def test_learn_moves_parameters_and_updates_target(self):
        ag = small_agent()
        batch = _fabricate_batch(ag)
        online_before = ag.online.flat.copy()
        target_before = ag.target.flat.copy()
        ag.learn(batch)
        assert not (ag.online.flat == online_before).all()
        assert not (ag.target.flat == target_before).all()


class TestSchedules:
    def test_linear_decay_with_floor(self):
        ag = small_agent(epsilon_init=0.8, epsilon_final=0.001, epsilon_decay=0.8 / 100,
                         leniency_init=0.5, leniency_final=0.0, leniency_decay=0.5 / 100)
        for _ in range(100):
            ag.step_schedules()
        assert ag.epsilon == pytest.approx(0.001)
        assert ag.leniency == pytest.approx(0.0, abs=1e-12)
        for _ in range(10):
            ag.step_schedules()
        assert ag.epsilon == 0.001
        assert ag.leniency == 0.0

    def test_zero_decay_keeps_value(self):
        ag = small_agent(leniency_decay=0.0)
        before = ag.leniency
        for _ in range(5):
            ag.step_schedules()
        assert ag.leniency == before

    def test_schedules_nonincreasing(self):
        ag = small_agent()
        eps, lens = [ag.epsilon], [ag.leniency]
        for _ in range(50):
            ag.step_schedules()
            eps.append(ag.epsilon)
            lens.append(ag.leniency)
        assert all(a >= b for a, b in zip(eps, eps[1:]))
        assert all(a >= b for a, b in zip(lens, lens[1:]))


class TestEndEpisode:
    def test_decays_stored_importance(self):
        ag = small_agent(importance_decay=0.995)
        ag.observe(np.zeros(3), 0, 0.0, np.zeros(3), False)
        ag.end_episode()
        assert ag.erm.dump()[0].importance == 0.995
        ag.end_episode()
        assert ag.erm.dump()[0].importance == 0.995 * 0.995

    def test_empty_memory_noop(self):
        ag = small_agent()
        ag.end_episode()  # should not raise


class TestLdqn:
    def test_leniency_formula(self):
        table = LenientTemperatureTable(moderation=2.0)
        l = table.leniency(("s",), 0)
        assert l == pytest.approx(1.0 - np.exp(-2.0))

    def test_temperature_decays_per_visit(self):
        table = LenientTemperatureTable(moderation=2.0, temperature_decay=0.95)
        l1 = table.leniency(("s",), 0)
        l2 = table.leniency(("s",), 0)
        assert l2 == pytest.approx(1.0 - np.exp(-2.0 * 0.95))
        assert l2 < l1

    def test_unseen_key_treated_as_initial_temperature(self):
        table = LenientTemperatureTable()
        table.leniency(("a",), 0)
        assert table.leniency(("b",), 1) == pytest.approx(1.0 - np.exp(-2.0))

    def test_strict_limit(self):
        table = LenientTemperatureTable(temperature_decay=0.5)
        for _ in range(60):
            l = table.leniency(("s",), 0)
        assert l < 1e-8

    def test_apply_update_gate(self):
        assert ldqn_apply_update(1.0, 1.0, 0.0) is True
        assert ldqn_apply_update(-1.0, 1.0, 1.0) is False
        assert ldqn_apply_update(-1.0, 0.0, 0.5) is True

    def test_state_key_quantizes(self):
        assert state_key(np.array([1.0, 0.0, 3.0])) == (1, 0, 3)
        assert state_key(np.array([1.2, 0.4, 2.6])) == (1, 0, 3)

    def test_ldqn_agent_trains(self):
        ag = small_agent("ldqn", seed=5)
        rng = np.random.default_rng(0)
        obs = rng.normal(size=3)
        for k in range(40):
            nxt = rng.normal(size=3)
            a = ag.select_action(obs)
            ag.observe(obs, a, rng.normal(), nxt, k % 10 == 9)
            ag.train_if_ready()
            ag.step_schedules()
            obs = nxt
        assert np.isfinite(ag.online.flat).all()
        assert len(ag.table) > 0


class TestReduction:
    def test_cil_with_leniency_off_equals_iddqn_bitwise(self):
        cfg_cil = AgentConfig(**SMALL, leniency_init=0.0, leniency_final=0.0,
                              leniency_decay=0.0, importance_decay=1.0)
        a = make_agent("cil-ddqn", 3, 4, cfg_cil, seed=42)
        b = make_agent("iddqn", 3, 4, AgentConfig(**SMALL), seed=42)
        rng_env = np.random.default_rng(7)
        obs = rng_env.normal(size=3)
        for k in range(500):
            nxt = rng_env.normal(size=3)
            r = rng_env.normal()
            done = k % 50 == 49
            aa, ab = a.select_action(obs), b.select_action(obs)
            assert aa == ab
            for ag, act in ((a, aa), (b, ab)):
                ag.observe(obs, act, r, nxt, done)
                ag.train_if_ready()
                ag.step_schedules()
            if done:
                a.end_episode()
                b.end_episode()
            obs = nxt
        assert (a.online.flat == b.online.flat).all()
        assert (a.target.flat == b.target.flat).all()


def test_make_agent_rejects_unknown():
    with pytest.raises(ValueError):
        make_agent("dqn-classic", 3, 4, None, 0)


def test_refined_weights_match_refine_td():
    rng = np.random.default_rng(8)
    d = rng.normal(size=100)
    e = rng.uniform(0.01, 1, size=100)
    l = rng.uniform(0, 1, size=100)
    assert np.allclose(refined_weights(d, e, l) * d, refine_td(d, e, l))


def test_checkpoint_roundtrip(tmp_path):
    ag = small_agent(seed=3)
    rng = np.random.default_rng(0)
    obs = rng.normal(size=3)
    for k in range(30):
        nxt = rng.normal(size=3)
        act = ag.select_action(obs)
        ag.observe(obs, act, rng.normal(), nxt, False)
        ag.train_if_ready()
        ag.step_schedules()
        obs = nxt
    path = tmp_path / "agent"
    ag.save(path)
    loaded = CilDdqnAgent.load(path)
    assert (loaded.online.flat == ag.online.flat).all()
    assert (loaded.target.flat == ag.target.flat).all()
    assert loaded.epsilon == ag.epsilon and loaded.leniency == ag.leniency
    # rng stream continues identically
    assert loaded.rng.random() == ag.rng.random()
    obs = np.array([0.1, 0.2, 0.3])
    assert loaded.greedy_action(obs) == ag.greedy_action(obs)
