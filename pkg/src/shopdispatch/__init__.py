"""Single-machine dispatching: simulator, state encoding, REINFORCE, heuristics and policy transfer."""

__version__ = "0.1.0"

from .sim import ShopConfig, init_env, apply_action, advance_time, run_episode, episode_metrics  # noqa: E402
from .codec import encode_state, state_dim, state_shape  # noqa: E402
from .policy import PolicyParams, init_params, forward, select_action, train_supervised  # noqa: E402
from .reinforce import train_reinforce, collect_trajectories, discounted_returns  # noqa: E402
from .heuristics import HeuristicDispatcher, train_imitation  # noqa: E402
from .transfer import AlignmentConfig, AlignmentModel, align, map_state, recover_action, transfer_pipeline  # noqa: E402
