"""Single-machine shop-floor simulator.

The machine keeps a schedule ``T`` steps ahead. Jobs arrive with probability
``lam`` per step, wait in ``n`` visible slots (overflowing into an ``m``-deep
FIFO backlog) and are dropped once both are full. At each step the dispatcher
issues actions until it emits Void or an Invalid action; the clock then
advances by one step.

Actions are plain integers: ``0`` is Void, ``i`` in ``1..n`` selects slot ``i``.
"""
from __future__ import annotations

import csv
import dataclasses
import json
from collections import deque
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

VOID = 0

# Outcome kinds returned by apply_action.
SCHEDULED = "scheduled"
INVALID = "invalid"
VOIDED = "void"

_STREAMS = {"arrivals": 0, "attributes": 1, "placement": 2}


class ConfigError(ValueError):
    """Raised for an inconsistent ShopConfig."""


@dataclass(frozen=True)
class JobSpec:
    id: int
    arrival_time: int
    proc_time: int
    due_time: int

    def __post_init__(self):
        if self.proc_time < 1:
            raise ValueError(f"processing time must be >= 1, got {self.proc_time}")


def slack_of(job: JobSpec, t_curr: int) -> int:
    """Slack of ``job`` at time ``t_curr``: due - now - processing time."""
    return job.due_time - t_curr - job.proc_time


def lateness_tardiness(c: int, d: int) -> tuple[int, int]:
    return abs(c - d), max(c - d, 0)


@dataclass(frozen=True)
class ShopConfig:
    T: int = 15
    Z: int = 5
    n: int = 10
    m: int = 60
    lam: float = 0.5
    p_small: float = 0.8
    short_range: tuple[int, int] = (1, 2)
    long_range: tuple[int, int] = (6, 10)
    p_urgent: float = 0.5
    urgent_slack_range: tuple[int, int] = (1, 5)
    nonurgent_slack_range: tuple[int, int] = (5, 10)
    drop_penalty: float = -10.0
    gamma: float = 0.99
    traj_len: int = 100
    objective: str = "lateness"

    def __post_init__(self):
        for name in ("short_range", "long_range", "urgent_slack_range", "nonurgent_slack_range"):
            object.__setattr__(self, name, tuple(int(v) for v in getattr(self, name)))
        self.validate()

    def validate(self) -> None:
        for name in ("T", "Z", "n", "m", "traj_len"):
            if int(getattr(self, name)) < 1:
                raise ConfigError(f"{name} must be a positive integer")
        if not 0.0 < self.lam < 1.0:
            raise ConfigError("lam must lie in (0, 1)")
        for name in ("p_small", "p_urgent"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ConfigError(f"{name} must lie in [0, 1]")
        if not 0.0 < self.gamma <= 1.0:
            raise ConfigError("gamma must lie in (0, 1]")
        for name in ("short_range", "long_range", "urgent_slack_range", "nonurgent_slack_range"):
            lo, hi = getattr(self, name)
            if lo > hi:
                raise ConfigError(f"{name}: lower bound {lo} exceeds upper bound {hi}")
        for name in ("short_range", "long_range"):
            lo, hi = getattr(self, name)
            if lo < 1:
                raise ConfigError(f"{name}: job lengths must be >= 1")
            if hi > self.T:
                raise ConfigError(f"{name}: job length {hi} exceeds the horizon T={self.T}")
        if self.objective not in ("lateness", "tardiness"):
            raise ConfigError(f"unknown objective {self.objective!r}")

    def replace(self, **changes) -> "ShopConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        for k, v in d.items():
            if isinstance(v, tuple):
                d[k] = list(v)
        return d

    @classmethod
    def from_dict(cls, data: dict) -> "ShopConfig":
        aliases = {"λ": "lam", "lambda": "lam", "γ": "gamma"}
        known = {f.name for f in dataclasses.fields(cls)}
        kwargs = {}
        for key, value in data.items():
            name = aliases.get(key, key)
            if name not in known:
                raise ConfigError(f"unknown ShopConfig field {key!r}")
            kwargs[name] = value
        return cls(**kwargs)

    def to_json(self, path=None, indent: int = 2) -> str:
        text = json.dumps(self.to_dict(), indent=indent, ensure_ascii=False)
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text + "\n")
        return text

    @classmethod
    def from_json(cls, source) -> "ShopConfig":
        """Load from a JSON string or a path to a JSON file."""
        text = str(source)
        if not text.lstrip().startswith("{"):
            with open(source) as fh:
                text = fh.read()
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"malformed ShopConfig JSON: {exc}") from exc
        return cls.from_dict(data)


@dataclass(frozen=True)
class DispatchOutcome:
    kind: str
    completion: int | None = None

    @property
    def ends_phase(self) -> bool:
        return self.kind != SCHEDULED


@dataclass
class ShopState:
    config: ShopConfig
    clock: int
    schedule: np.ndarray  # length T, job id or -1
    slots: list
    backlog: deque
    jobs: dict = field(default_factory=dict)  # scheduled job id -> JobSpec
    completions: dict = field(default_factory=dict)  # scheduled job id -> committed c
    completed: list = field(default_factory=list)  # (id, c, d, p)
    dropped: int = 0
    arrived: int = 0
    rngs: dict = field(default_factory=dict, repr=False)
    next_id: int = 0

    @property
    def n_scheduled(self) -> int:
        return len(self.jobs)

    def occupied(self) -> np.ndarray:
        return self.schedule >= 0

    def copy(self) -> "ShopState":
        """Deep copy, RNG states included."""
        import copy as _copy

        return _copy.deepcopy(self)


def _stream(seed, name: str) -> np.random.Generator:
    if isinstance(seed, np.random.SeedSequence):
        entropy = seed.entropy
        spawn_key = tuple(seed.spawn_key) + (_STREAMS[name],)
        ss = np.random.SeedSequence(entropy, spawn_key=spawn_key)
    else:
        ss = np.random.SeedSequence(int(seed), spawn_key=(_STREAMS[name],))
    return np.random.default_rng(ss)


def init_env(config: ShopConfig, seed) -> ShopState:
    """Fresh, empty shop at clock 0 with seed-derived random streams."""
    if not isinstance(config, ShopConfig):
        raise ConfigError("config must be a ShopConfig")
    config.validate()
    return ShopState(
        config=config,
        clock=0,
        schedule=np.full(config.T, -1, dtype=np.int64),
        slots=[None] * config.n,
        backlog=deque(),
        rngs={name: _stream(seed, name) for name in _STREAMS},
    )


def find_block(schedule: np.ndarray, p: int) -> int | None:
    """Start of the earliest run of ``p`` free cells, or None."""
    run = 0
    for i, cell in enumerate(schedule):
        run = run + 1 if cell < 0 else 0
        if run == p:
            return i - p + 1
    return None


def job_fits(state: ShopState, job: JobSpec | None) -> bool:
    return job is not None and find_block(state.schedule, job.proc_time) is not None


def apply_action(state: ShopState, action: int) -> DispatchOutcome:
    n = state.config.n
    if not 0 <= action <= n:
        raise ValueError(f"action {action} outside 0..{n}")
    if action == VOID:
        return DispatchOutcome(VOIDED)
    job = state.slots[action - 1]
    if job is None:
        return DispatchOutcome(INVALID)
    start = find_block(state.schedule, job.proc_time)
    if start is None:
        return DispatchOutcome(INVALID)
    state.schedule[start:start + job.proc_time] = job.id
    c = state.clock + start + job.proc_time
    state.jobs[job.id] = job
    state.completions[job.id] = c
    state.slots[action - 1] = None
    return DispatchOutcome(SCHEDULED, c)


def step_reward(state: ShopState, objective: str | None = None) -> float:
    """Penalty for the job occupying the current cell (one machine, so at most one)."""
    objective = objective or state.config.objective
    jid = int(state.schedule[0])
    if jid < 0:
        return 0.0
    job = state.jobs[jid]
    late, tardy = lateness_tardiness(state.completions[jid], job.due_time)
    penalty = late if objective == "lateness" else tardy
    return -penalty / job.proc_time


def _empty_slots(state: ShopState) -> list[int]:
    return [i for i, job in enumerate(state.slots) if job is None]


def _sample_job(state: ShopState, arrival_time: int) -> JobSpec:
    cfg = state.config
    rng = state.rngs["attributes"]
    short = rng.random() < cfg.p_small
    lo, hi = cfg.short_range if short else cfg.long_range
    p = int(rng.integers(lo, hi + 1))
    urgent = rng.random() < cfg.p_urgent
    lo, hi = cfg.urgent_slack_range if urgent else cfg.nonurgent_slack_range
    slack = int(rng.integers(lo, hi + 1))
    job = JobSpec(state.next_id, arrival_time, p, arrival_time + p + slack)
    state.next_id += 1
    return job


def advance_time(state: ShopState, config: ShopConfig | None = None) -> tuple[ShopState, float, bool]:
    """Close the current step: reward, completion, shift, arrival, promotion, clock.

    Returns ``(state, reward, dropped)``; the state is updated in place.
    """
    cfg = config or state.config
    reward = step_reward(state, cfg.objective)

    jid = int(state.schedule[0])
    if jid >= 0 and (cfg.T == 1 or int(state.schedule[1]) != jid):
        job = state.jobs.pop(jid)
        c = state.completions.pop(jid)
        state.completed.append((jid, c, job.due_time, job.proc_time))

    state.schedule[:-1] = state.schedule[1:]
    state.schedule[-1] = -1

    dropped = False
    if state.rngs["arrivals"].random() < cfg.lam:
        job = _sample_job(state, state.clock + 1)
        state.arrived += 1
        empty = _empty_slots(state)
        if empty:
            slot = empty[int(state.rngs["placement"].integers(len(empty)))]
            state.slots[slot] = job
        elif len(state.backlog) < cfg.m:
            state.backlog.append(job)
        else:
            state.dropped += 1
            reward += cfg.drop_penalty
            dropped = True

    empty = _empty_slots(state)
    while state.backlog and empty:
        slot = empty.pop(int(state.rngs["placement"].integers(len(empty))))
        state.slots[slot] = state.backlog.popleft()

    state.clock += 1
    return state, reward, dropped


def population(state: ShopState) -> dict:
    """Job counts per location; their sum equals ``state.arrived``."""
    return {
        "slots": sum(job is not None for job in state.slots),
        "backlog": len(state.backlog),
        "scheduled": len(state.jobs),
        "completed": len(state.completed),
        "dropped": state.dropped,
    }


@dataclass
class StepLog:
    t: int
    action: int
    reward: float
    dropped: bool


def write_trajectory_csv(rows: Iterable[StepLog], path) -> None:
    """Trajectory log: one row per decision, reward on the phase-ending row."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t", "action", "reward", "dropped_flag"])
        for row in rows:
            writer.writerow([row.t, row.action, repr(float(row.reward)), int(row.dropped)])


def run_episode(config: ShopConfig, choose, seed, max_decisions: int | None = None):
    """Roll out one episode with ``choose(state) -> action``.

    Returns ``(state, rewards, log)`` where ``rewards[t]`` is the reward of
    step ``t`` and ``log`` holds one StepLog per decision.
    """
    state = init_env(config, seed)
    cap = max_decisions or config.n + 1
    rewards = np.zeros(config.traj_len)
    log: list[StepLog] = []
    for t in range(config.traj_len):
        for _ in range(cap):
            action = choose(state)
            outcome = apply_action(state, action)
            log.append(StepLog(t, action, 0.0, False))
            if outcome.ends_phase:
                break
        _, r, dropped = advance_time(state, config)
        rewards[t] = r
        log[-1].reward = r
        log[-1].dropped = dropped
    return state, rewards, log


def episode_metrics(state: ShopState, rewards: Sequence[float], gamma: float) -> dict:
    """Discounted reward plus lateness/tardiness averaged over completed jobs."""
    discounts = gamma ** np.arange(len(rewards))
    late = [abs(c - d) for _, c, d, _ in state.completed]
    tardy = [max(c - d, 0) for _, c, d, _ in state.completed]
    return {
        "discounted_reward": float(np.dot(discounts, rewards)),
        "avg_lateness": float(np.mean(late)) if late else float("nan"),
        "avg_tardiness": float(np.mean(tardy)) if tardy else float("nan"),
        "completed": len(late),
        "dropped": state.dropped,
    }
