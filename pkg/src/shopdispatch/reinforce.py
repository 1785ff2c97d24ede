"""REINFORCE with a time-indexed baseline.

Returns and baselines are indexed by environment time. Every decision taken
during step ``t`` shares ``R_t`` and ``b_t``.
"""
from __future__ import annotations

import csv
import math
import time
from dataclasses import dataclass, field

import numpy as np

from . import codec
from .policy import Adam, PolicyParams, apply_step, forward, init_params, log_prob_grad, policy_dims, select_action
from .sim import ShopConfig, advance_time, apply_action, episode_metrics, init_env

DEFAULT_BATCH = 10
DEFAULT_ITERS = 500
DEFAULT_LR = 1e-3


class StaleBatchError(ValueError):
    """The batch was collected under different parameters."""


@dataclass
class Trajectory:
    times: np.ndarray
    states: np.ndarray
    actions: np.ndarray
    log_probs: np.ndarray
    phase_end: np.ndarray
    rewards: np.ndarray
    metrics: dict = field(default_factory=dict)
    fingerprint: str | None = None

    def __len__(self) -> int:
        return len(self.actions)


def discounted_returns(rewards, gamma: float) -> np.ndarray:
    rewards = np.asarray(rewards, dtype=float)
    out = np.empty_like(rewards)
    acc = 0.0
    for t in range(len(rewards) - 1, -1, -1):
        acc = rewards[t] + gamma * acc
        out[t] = acc
    return out


def compute_baselines(returns) -> np.ndarray:
    """Per-time mean of the returns over the batch (exactly rounded sums)."""
    returns = [np.asarray(r, dtype=float) for r in returns]
    if not returns:
        raise ValueError("empty batch")
    horizon = max(len(r) for r in returns)
    out = np.empty(horizon)
    for t in range(horizon):
        vals = [r[t] for r in returns if len(r) > t]
        out[t] = math.fsum(vals) / len(vals)
    return out


def _env_seed(seed, k: int) -> np.random.SeedSequence:
    return np.random.SeedSequence(int(seed), spawn_key=(k,))


def collect_trajectories(config: ShopConfig, params: PolicyParams, n_traj: int, seed, env_seeds=None,
                         mode: str = "sample", variant: str = codec.PROC_SLACK) -> list[Trajectory]:
    """Roll out ``n_traj`` episodes in lockstep.

    ``env_seeds`` fixes the job streams (one per trajectory); otherwise they
    are derived from ``seed``. Action sampling always draws from ``seed``.
    """
    if n_traj < 1:
        raise ValueError("need at least one trajectory")
    if env_seeds is None:
        env_seeds = [_env_seed(seed, k) for k in range(n_traj)]
    elif len(env_seeds) != n_traj:
        raise ValueError("env_seeds must provide one seed per trajectory")
    fp = params.fingerprint()
    envs = [init_env(config, s) for s in env_seeds]
    rngs = [np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=(k, 1 << 20)))
            for k in range(n_traj)]
    recs = [([], [], [], [], []) for _ in range(n_traj)]
    rewards = np.zeros((n_traj, config.traj_len))

    def observe(env):
        return codec.apply_variant(codec.encode_state(env, config), config, variant).ravel()

    for t in range(config.traj_len):
        obs = {k: observe(envs[k]) for k in range(n_traj)}
        active = list(range(n_traj))
        while active:
            probs = forward(params, np.stack([obs[k] for k in active]))
            still = []
            for row, k in enumerate(active):
                a = select_action(probs[row], mode, rngs[k])
                times, states, actions, logps, ends = recs[k]
                times.append(t)
                states.append(obs[k])
                actions.append(a)
                with np.errstate(divide="ignore"):
                    logps.append(float(np.log(probs[row, a])))
                outcome = apply_action(envs[k], a)
                ends.append(outcome.ends_phase)
                if not outcome.ends_phase:
                    obs[k] = observe(envs[k])
                    still.append(k)
            active = still
        for k in range(n_traj):
            _, rewards[k, t], _ = advance_time(envs[k], config)

    out = []
    for k in range(n_traj):
        times, states, actions, logps, ends = recs[k]
        out.append(Trajectory(
            times=np.asarray(times), states=np.asarray(states), actions=np.asarray(actions),
            log_probs=np.asarray(logps), phase_end=np.asarray(ends), rewards=rewards[k],
            metrics=episode_metrics(envs[k], rewards[k], config.gamma), fingerprint=fp))
    return out


def _canonical_order(times, adv, actions, states) -> np.ndarray:
    keys = [states[:, j] for j in range(states.shape[1] - 1, -1, -1)]
    keys += [actions, adv, times]
    return np.lexsort(keys)


def policy_gradient_update(params: PolicyParams, batch: list[Trajectory], gamma: float, lr: float,
                           clip: float | None = 5.0, optimizer=None) -> tuple[PolicyParams, float]:
    """Ascend the mean of log pi(a_t|s_t) * (R_t - b_t) over all decision records.

    Returns the new parameters and the surrogate loss (negated objective).
    """
    fp = params.fingerprint()
    for traj in batch:
        if traj.fingerprint is not None and traj.fingerprint != fp:
            raise StaleBatchError("batch was collected under different parameters")
    returns = [discounted_returns(tr.rewards, gamma) for tr in batch]
    base = compute_baselines(returns)
    times = np.concatenate([tr.times for tr in batch])
    adv = np.concatenate([R[tr.times] - base[tr.times] for R, tr in zip(returns, batch)])
    actions = np.concatenate([tr.actions for tr in batch])
    states = np.concatenate([tr.states for tr in batch]).reshape(len(actions), -1)
    order = _canonical_order(times, adv, actions, states)
    count = len(actions)
    value, grads = log_prob_grad(params, states[order], actions[order], adv[order] / count)
    if optimizer is not None:
        return optimizer.step(params, grads, ascend=True), -value
    return apply_step(params, grads, lr, clip, ascend=True), -value


@dataclass
class TrainRow:
    iteration: int
    mean_discounted_reward: float
    mean_lateness: float
    mean_tardiness: float
    loss: float
    wall_clock: float = 0.0


CURVE_FIELDS = ["iteration", "mean_discounted_reward", "mean_lateness", "mean_tardiness", "loss"]


@dataclass
class TrainReport:
    rows: list = field(default_factory=list)

    def rewards(self) -> np.ndarray:
        return np.array([r.mean_discounted_reward for r in self.rows])

    def to_csv(self, path, extra: dict | None = None) -> None:
        """Write one row per iteration; wall-clock is left out so files are reproducible."""
        extra = extra or {}
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(list(extra) + CURVE_FIELDS)
            for r in self.rows:
                writer.writerow(list(extra.values()) + [r.iteration] +
                                [repr(float(getattr(r, f))) for f in CURVE_FIELDS[1:]])


def _nanmean(values) -> float:
    vals = [v for v in values if not math.isnan(v)]
    return float(np.mean(vals)) if vals else float("nan")


def batch_summary(batch: list[Trajectory]) -> tuple[float, float, float]:
    return (float(np.mean([tr.metrics["discounted_reward"] for tr in batch])),
            _nanmean([tr.metrics["avg_lateness"] for tr in batch]),
            _nanmean([tr.metrics["avg_tardiness"] for tr in batch]))


STREAMS = ("shared", "fixed", "fresh")


def _iteration_streams(stream: str, it: int, batch: int, seed, env_seeds, train_seeds):
    if stream == "fixed":
        return env_seeds
    if stream == "shared":
        if train_seeds:
            s = train_seeds[it % len(train_seeds)]
        else:
            s = np.random.SeedSequence(int(seed), spawn_key=(it, 11))
        return [s] * batch
    return [np.random.SeedSequence(int(seed), spawn_key=(it, 11, k)) for k in range(batch)]


def train_reinforce(config: ShopConfig, iters: int = DEFAULT_ITERS, batch: int = DEFAULT_BATCH, seed=0,
                    lr: float = DEFAULT_LR, params: PolicyParams | None = None, env_seeds=None,
                    variant: str = codec.PROC_SLACK, clip: float | None = 5.0, callback=None,
                    optimizer: str = "adam", stream: str = "shared",
                    train_seeds=None) -> tuple[PolicyParams, TrainReport]:
    """Collect, compute returns and baselines, update; one report row per iteration.

    Job streams per iteration (``stream``):

    * ``"shared"``: every trajectory of a batch sees the same job stream, so
      the time-indexed baseline compares actions under identical arrivals.
      The stream cycles through ``train_seeds`` if given, else a fresh one is
      derived from ``seed`` each iteration.
    * ``"fixed"``: trajectory ``k`` always replays ``env_seeds[k]``
      (default ``0..batch-1``).
    * ``"fresh"``: independent new streams for every trajectory.

    Action sampling draws from its own stream, new every iteration.
    ``optimizer`` is ``"adam"`` or ``"sgd"``.
    """
    if stream not in STREAMS:
        raise ValueError(f"unknown stream mode {stream!r}")
    if optimizer not in ("adam", "sgd"):
        raise ValueError(f"unknown optimizer {optimizer!r}")
    if params is None:
        params = init_params(policy_dims(codec.state_dim(config), config.n + 1), seed)
    if stream == "fixed":
        env_seeds = list(range(batch)) if env_seeds is None else list(env_seeds)
        if len(env_seeds) != batch:
            raise ValueError("env_seeds must provide one seed per trajectory")
    opt = Adam(lr, clip=clip) if optimizer == "adam" else None
    report = TrainReport()
    start = time.perf_counter()
    for it in range(iters):
        collect_seed = np.random.SeedSequence(int(seed), spawn_key=(it, 7)).generate_state(1)[0]
        streams = _iteration_streams(stream, it, batch, seed, env_seeds, train_seeds)
        trajs = collect_trajectories(config, params, batch, int(collect_seed), env_seeds=streams,
                                     variant=variant)
        params, loss = policy_gradient_update(params, trajs, config.gamma, lr, clip, opt)
        reward, late, tardy = batch_summary(trajs)
        report.rows.append(TrainRow(it, reward, late, tardy, loss, time.perf_counter() - start))
        if callback is not None:
            callback(it, params, report)
    return params, report
