"""Rule-based dispatchers and the neural hyper-heuristic that imitates them."""
from __future__ import annotations

import enum

import numpy as np

from . import codec
from .policy import PolicyParams, init_params, policy_dims, train_supervised
from .sim import VOID, ShopConfig, ShopState, advance_time, apply_action, init_env, job_fits, slack_of


class HeuristicKind(str, enum.Enum):
    EDF = "edf"
    LST = "lst"
    RANDOM = "random"


def fitting_slots(state: ShopState) -> list[int]:
    """1-based slot indices whose job fits a free block of the horizon."""
    return [i + 1 for i, job in enumerate(state.slots) if job_fits(state, job)]


def heuristic_action(kind, state: ShopState, rng: np.random.Generator | None = None) -> int:
    kind = HeuristicKind(kind)
    slots = fitting_slots(state)
    if not slots:
        return VOID
    if kind is HeuristicKind.EDF:
        return min(slots, key=lambda i: (state.slots[i - 1].due_time, i))
    if kind is HeuristicKind.LST:
        return min(slots, key=lambda i: (slack_of(state.slots[i - 1], state.clock), i))
    if rng is None:
        raise ValueError("the random heuristic needs an rng")
    return slots[int(rng.integers(len(slots)))]


class HeuristicDispatcher:
    """Callable ``state -> action`` with its own seeded stream for the random rule."""

    def __init__(self, kind, seed=0):
        self.kind = HeuristicKind(kind)
        self.rng = np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=(31,)))

    def __call__(self, state: ShopState) -> int:
        return heuristic_action(self.kind, state, self.rng)


def rollout_pairs(choose, config: ShopConfig, samples: int, seed, max_episodes: int = 10_000):
    """Run ``choose`` over fresh episodes and record (encoded state, action) per decision."""
    states, actions = [], []
    episode = 0
    while len(actions) < samples and episode < max_episodes:
        env = init_env(config, np.random.SeedSequence(int(seed), spawn_key=(episode,)))
        for _ in range(config.traj_len):
            while len(actions) < samples:
                a = choose(env)
                states.append(codec.encode_state(env, config).ravel())
                actions.append(a)
                if apply_action(env, a).ends_phase:
                    break
            if len(actions) >= samples:
                break
            advance_time(env, config)
        episode += 1
    return np.asarray(states), np.asarray(actions, dtype=int)


def train_imitation(kind, config: ShopConfig, samples: int, seed=0, epochs: int = 60, lr: float = 0.05,
                    batch_size: int = 32, params: PolicyParams | None = None) -> PolicyParams:
    """Neural hyper-heuristic: fit the policy network to a rule's decisions."""
    if samples < 1:
        raise ValueError("samples must be >= 1")
    dispatcher = HeuristicDispatcher(kind, seed)
    states, actions = rollout_pairs(dispatcher, config, samples, seed)
    if params is None:
        params = init_params(policy_dims(codec.state_dim(config), config.n + 1), seed)
    return train_supervised(params, states, actions, epochs=epochs, lr=lr, batch_size=batch_size,
                            seed=seed).params
