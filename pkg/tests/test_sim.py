import json

import numpy as np
import pytest

from shopdispatch import sim
from shopdispatch.heuristics import HeuristicDispatcher
from shopdispatch.sim import (INVALID, SCHEDULED, VOID, VOIDED, ConfigError, JobSpec, ShopConfig, advance_time,
                              apply_action, find_block, init_env, lateness_tardiness, population, run_episode,
                              slack_of, step_reward, write_trajectory_csv)

from conftest import make_state


def test_init_env_default_geometry():
    st = init_env(ShopConfig(), 7)
    assert st.schedule.shape == (15,) and np.all(st.schedule == -1)
    assert st.slots == [None] * 10
    assert len(st.backlog) == 0 and st.clock == 0


def test_invalid_configs_rejected():
    with pytest.raises(ConfigError):
        ShopConfig(lam=1.0)
    with pytest.raises(ConfigError):
        ShopConfig(n=0)
    with pytest.raises(ConfigError):
        ShopConfig(short_range=(3, 2))
    with pytest.raises(ConfigError):
        ShopConfig(T=8)  # default long jobs reach 10 > T
    with pytest.raises(ConfigError):
        ShopConfig(objective="makespan")
    with pytest.raises(ConfigError):
        init_env("not a config", 0)


def test_config_json_roundtrip(tmp_path):
    cfg = ShopConfig(T=8, Z=3, n=5, m=10, long_range=(6, 8), lam=0.7, objective="tardiness")
    path = tmp_path / "cfg.json"
    cfg.to_json(path)
    assert ShopConfig.from_json(path) == cfg
    data = json.loads(cfg.to_json())
    assert set(data) == {"T", "Z", "n", "m", "lam", "p_small", "short_range", "long_range", "p_urgent",
                         "urgent_slack_range", "nonurgent_slack_range", "drop_penalty", "gamma", "traj_len",
                         "objective"}
    assert ShopConfig.from_dict({"λ": 0.3}).lam == 0.3
    with pytest.raises(ConfigError):
        ShopConfig.from_dict({"lambda_": 0.3})
    with pytest.raises(ConfigError):
        ShopConfig.from_json("{not json")


def test_slack_examples():
    assert slack_of(JobSpec(0, 0, 3, 10), 5) == 2
    assert slack_of(JobSpec(0, 0, 2, 4), 3) == -1
    # slot-1 job of the reference picture: p=3 and one step of slack at t=0
    assert slack_of(JobSpec(0, 0, 3, 4), 0) == 1


def test_lateness_tardiness_examples():
    assert lateness_tardiness(12, 10) == (2, 2)
    assert lateness_tardiness(8, 10) == (2, 0)
    assert lateness_tardiness(10, 10) == (0, 0)


def test_jobspec_requires_positive_length():
    with pytest.raises(ValueError):
        JobSpec(0, 0, 0, 3)


def test_earliest_fit_on_empty_schedule():
    cfg = ShopConfig(T=5, Z=3, n=4, m=10, long_range=(4, 5))
    st = make_state(cfg, slots={1: (3, 2)}, clock=4)
    out = apply_action(st, 1)
    assert out.kind == SCHEDULED and out.completion == 4 + 3
    assert list(st.schedule[:3] >= 0) == [True] * 3 and np.all(st.schedule[3:] == -1)
    assert st.slots[0] is None


def test_reference_schedule_rejects_two_step_job():
    cfg = ShopConfig(T=5, Z=3, n=4, m=10, long_range=(4, 5))
    st = make_state(cfg, schedule=[(0, 4, 6)], slots={1: (2, 1)})
    # free cells of the occupancy (1,1,1,1,0): only a run of length 1
    free_runs = [p for p in range(1, 6) if find_block(st.schedule, p) is not None]
    assert free_runs == [1]
    before = st.schedule.copy()
    assert apply_action(st, 1).kind == INVALID
    assert np.array_equal(st.schedule, before) and st.slots[0] is not None


def test_empty_slot_and_void_leave_state_alone():
    cfg = ShopConfig(T=5, Z=3, n=4, m=10, long_range=(4, 5))
    st = make_state(cfg, slots={1: (2, 1)})
    snap = (st.schedule.copy(), list(st.slots))
    assert apply_action(st, 3).kind == INVALID
    out = apply_action(st, VOID)
    assert out.kind == VOIDED and out.ends_phase
    assert np.array_equal(st.schedule, snap[0]) and st.slots == snap[1]
    with pytest.raises(ValueError):
        apply_action(st, 5)
    with pytest.raises(ValueError):
        apply_action(st, -1)


def test_reward_for_job_in_first_cell():
    cfg = ShopConfig(T=5, Z=3, n=4, m=10, long_range=(4, 5), lam=1e-12)
    # p=4 block at cells 0..3, committed c=4, due 6 -> L=2
    st = make_state(cfg, schedule=[(0, 4, 6)])
    assert step_reward(st) == pytest.approx(-0.5)
    _, r, dropped = advance_time(st, cfg)
    assert r == pytest.approx(-0.5) and not dropped


def test_tardiness_reward_per_step():
    cfg = ShopConfig(T=5, Z=3, n=4, m=10, long_range=(4, 5), objective="tardiness")
    st = make_state(cfg, schedule=[(0, 3, 0)])  # c=3, d=0
    assert step_reward(st) == pytest.approx(-1.0)
    assert step_reward(st, "lateness") == pytest.approx(-1.0)
    st2 = make_state(cfg, schedule=[(0, 3, 9)])  # early: no tardiness
    assert step_reward(st2) == 0.0


def test_idle_machine_no_arrival():
    cfg = ShopConfig(T=5, Z=3, n=4, m=10, long_range=(4, 5), lam=1e-12)
    st = init_env(cfg, 0)
    _, r, dropped = advance_time(st, cfg)
    assert r == 0.0 and not dropped and np.all(st.schedule == -1) and st.clock == 1


def test_drop_penalty_when_full():
    cfg = ShopConfig(T=5, Z=3, n=2, m=1, long_range=(4, 5), lam=0.999999)
    st = make_state(cfg, slots={1: (1, 1), 2: (1, 1)}, backlog=1)
    _, r, dropped = advance_time(st, cfg)
    assert dropped and st.dropped == 1 and r == pytest.approx(-10.0)


def test_arrival_rate_monte_carlo():
    cfg = ShopConfig(lam=0.9, m=60)
    st = init_env(cfg, 3)
    for _ in range(10_000):
        advance_time(st, cfg)
    assert abs(st.arrived / 10_000 - 0.9) <= 0.02


def test_due_date_from_sampled_slack():
    cfg = ShopConfig(lam=0.9)
    st = init_env(cfg, 11)
    seen = []
    for _ in range(200):
        advance_time(st, cfg)
        seen += [j for j in st.slots if j is not None and j.arrival_time == st.clock]
    assert seen
    for job in seen:
        slack = job.due_time - job.arrival_time - job.proc_time
        assert cfg.urgent_slack_range[0] <= slack <= cfg.nonurgent_slack_range[1]
        assert job.proc_time <= cfg.long_range[1]


def test_backlog_fifo_promotion():
    cfg = ShopConfig(T=5, Z=3, n=1, m=3, long_range=(4, 5), lam=1e-12)
    st = make_state(cfg, backlog=2)
    first = st.backlog[0].id
    advance_time(st, cfg)
    assert st.slots[0].id == first and len(st.backlog) == 1


def _rollout_with_oracle(cfg, seed, policy_seed):
    """Run random dispatching while attributing each step's reward to the job in cell 0."""
    st = init_env(cfg, seed)
    rng = np.random.default_rng(policy_seed)
    per_job = {}
    for _ in range(cfg.traj_len):
        while True:
            a = int(rng.integers(cfg.n + 1))
            if apply_action(st, a).ends_phase:
                break
        jid = int(st.schedule[0])
        pre_drop = st.dropped
        _, r, _ = advance_time(st, cfg)
        r -= cfg.drop_penalty * (st.dropped - pre_drop)
        if jid >= 0:
            per_job[jid] = per_job.get(jid, 0.0) + r
        else:
            assert r == 0.0
    return st, per_job


@pytest.mark.parametrize("objective", ["lateness", "tardiness"])
def test_reward_telescopes_to_job_penalty(objective):
    cfg = ShopConfig(T=8, Z=3, n=5, m=10, traj_len=120, long_range=(6, 8), lam=0.7, objective=objective)
    st, per_job = _rollout_with_oracle(cfg, 5, 6)
    assert len(st.completed) > 20
    for jid, c, d, p in st.completed:
        expected = -abs(c - d) if objective == "lateness" else -max(c - d, 0)
        assert abs(per_job[jid] - expected) < 1e-9


def test_conservation_and_non_preemption():
    cfg = ShopConfig(T=8, Z=3, n=5, m=10, traj_len=200, long_range=(6, 8), lam=0.8)
    st = init_env(cfg, 2)
    rng = np.random.default_rng(0)
    for _ in range(cfg.traj_len):
        while not apply_action(st, int(rng.integers(cfg.n + 1))).ends_phase:
            pass
        blocks = {}
        for i, jid in enumerate(st.schedule):
            if jid >= 0:
                blocks.setdefault(int(jid), []).append(i)
        for jid, cells in blocks.items():
            assert cells == list(range(cells[0], cells[0] + len(cells)))
            assert cells[-1] + 1 == st.completions[jid] - st.clock
        before = {j: len(c) for j, c in blocks.items() if c[0] == 0}
        advance_time(st, cfg)
        for jid, length in before.items():
            assert int(np.sum(st.schedule == jid)) == length - 1
        assert sum(population(st).values()) == st.arrived


def test_determinism_same_seed():
    cfg = ShopConfig(T=8, Z=3, n=5, m=10, traj_len=60, long_range=(6, 8))
    a = run_episode(cfg, HeuristicDispatcher("random", 1), 4)
    b = run_episode(cfg, HeuristicDispatcher("random", 1), 4)
    assert np.array_equal(a[1], b[1])
    assert a[0].completed == b[0].completed and [r.action for r in a[2]] == [r.action for r in b[2]]
    c = run_episode(cfg, HeuristicDispatcher("random", 1), 5)
    assert not np.array_equal(a[1], c[1])


def test_seed_sequence_streams_are_distinct():
    cfg = ShopConfig(lam=0.5)
    a = init_env(cfg, np.random.SeedSequence(0, spawn_key=(1,)))
    b = init_env(cfg, np.random.SeedSequence(0, spawn_key=(2,)))
    xs = [a.rngs["arrivals"].random() for _ in range(5)]
    ys = [b.rngs["arrivals"].random() for _ in range(5)]
    assert xs != ys


def test_trajectory_csv(tmp_path):
    cfg = ShopConfig(T=8, Z=3, n=5, m=10, traj_len=20, long_range=(6, 8))
    _, rewards, log = run_episode(cfg, HeuristicDispatcher("edf"), 0)
    path = tmp_path / "traj.csv"
    write_trajectory_csv(log, path)
    lines = path.read_text().splitlines()
    assert lines[0] == "t,action,reward,dropped_flag"
    assert len(lines) == len(log) + 1
    total = sum(float(l.split(",")[2]) for l in lines[1:])
    assert total == pytest.approx(rewards.sum())


def test_state_copy_is_independent():
    st = init_env(ShopConfig(), 0)
    cp = st.copy()
    advance_time(st)
    assert cp.clock == 0 and st.clock == 1
    assert sim.population(cp)["slots"] == 0
