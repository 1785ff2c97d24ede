"""2-D observation matrix for a shop state.

Layout (height ``T + Z``, width ``1 + n + ceil(m / T)``):

* column 0: machine occupancy for the next ``T`` steps, then ``Z`` zero rows;
* columns ``1..n``: one per job slot, ``p`` ones stacked from the top of the
  first ``T`` rows, then ``Z`` slack cells (+1 for positive slack, -1 for
  negative, clamped to ``Z`` cells);
* remaining columns: backlog count as ones, filled ``T`` per column.
"""
from __future__ import annotations

import numpy as np

from .sim import ShopConfig, ShopState, slack_of

PROC_SLACK = "proc+slack"
PROC_ONLY = "proc"
SLACK_ONLY = "slack"
VARIANTS = (PROC_SLACK, PROC_ONLY, SLACK_ONLY)


def backlog_columns(config: ShopConfig) -> int:
    return -(-config.m // config.T)


def state_shape(config: ShopConfig) -> tuple[int, int]:
    return config.T + config.Z, 1 + config.n + backlog_columns(config)


def state_dim(config: ShopConfig) -> int:
    h, w = state_shape(config)
    return h * w


def encode_job_column(col: np.ndarray, p: int, slack: int, T: int, Z: int) -> None:
    if p > T:
        raise ValueError(f"processing time {p} exceeds horizon T={T}")
    col[:p] = 1
    if slack > 0:
        col[T:T + min(slack, Z)] = 1
    elif slack < 0:
        col[T:T + min(-slack, Z)] = -1


def encode_state(state: ShopState, config: ShopConfig | None = None) -> np.ndarray:
    cfg = config or state.config
    if len(state.schedule) != cfg.T or len(state.slots) != cfg.n or len(state.backlog) > cfg.m:
        raise ValueError("state does not match the config geometry")
    T, Z = cfg.T, cfg.Z
    s = np.zeros(state_shape(cfg))
    s[:T, 0] = state.schedule >= 0
    for i, job in enumerate(state.slots):
        if job is not None:
            encode_job_column(s[:, 1 + i], job.proc_time, slack_of(job, state.clock), T, Z)
    left = len(state.backlog)
    col = 1 + cfg.n
    while left > 0:
        take = min(T, left)
        s[:take, col] = 1
        left -= take
        col += 1
    return s


def remove_job_columns(s: np.ndarray, a: int, config: ShopConfig) -> np.ndarray:
    """Copy of ``s`` with job-slot column ``a`` (1-based) zeroed.

    Accepts either the 2-D matrix or its row-major flattening.
    """
    if not 1 <= a <= config.n:
        raise ValueError(f"slot index {a} outside 1..{config.n}")
    shape = state_shape(config)
    out = np.array(s, dtype=float, copy=True)
    view = out.reshape(shape)
    view[:, a] = 0
    return out


def apply_variant(s: np.ndarray, config: ShopConfig, variant: str = PROC_SLACK) -> np.ndarray:
    """Zero the processing or slack cells of the job-slot columns."""
    if variant == PROC_SLACK:
        return s
    if variant not in VARIANTS:
        raise ValueError(f"unknown state variant {variant!r}")
    out = np.array(s, copy=True)
    view = out.reshape(state_shape(config))
    cols = slice(1, 1 + config.n)
    if variant == PROC_ONLY:
        view[config.T:, cols] = 0
    else:
        view[:config.T, cols] = 0
    return out


def to_csv(s: np.ndarray, path, config: ShopConfig | None = None) -> None:
    """Dump rows top to bottom as integers (or reals for mapped states)."""
    mat = np.asarray(s)
    if mat.ndim == 1:
        mat = mat.reshape(state_shape(config))
    integral = np.all(mat == np.round(mat))
    np.savetxt(path, mat, delimiter=",", fmt="%d" if integral else "%.17g")


def from_csv(path) -> np.ndarray:
    return np.loadtxt(path, delimiter=",", ndmin=2)
