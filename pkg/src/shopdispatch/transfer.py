"""Dispatching-policy transfer by manifold alignment.

Random states from a source and a target shop are projected into a shared
space (``alpha`` for the source, ``beta`` for the target) so that local
neighbourhood geometry is preserved within each space and matched across
them. ``chi = pinv(beta.T) @ alpha.T`` then maps source states into the
target space. Source trajectories mapped through ``chi`` are turned back
into (state, action) pairs by guessing which job column disappeared, and a
target policy is fitted to them and fine-tuned with REINFORCE.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import asdict, dataclass

import numpy as np

from . import codec, linalg
from .heuristics import fitting_slots, rollout_pairs
from .policy import PolicyParams, init_params, policy_dims, train_supervised
from .reinforce import TrainReport, collect_trajectories, train_reinforce
from .sim import VOID, ShopConfig


@dataclass(frozen=True)
class AlignmentConfig:
    mu: float = 1.0
    k: int = 4
    d_share: int = 32
    n_source: int = 2000
    n_target: int = 2000

    def __post_init__(self):
        if self.mu < 0:
            raise ValueError("mu must be >= 0")
        if not 2 <= self.k <= 6:
            raise ValueError("k must lie in 2..6 (k! permutations are enumerated)")
        if self.d_share < 1:
            raise ValueError("d_share must be >= 1")


# --------------------------------------------------------------------------
# local geometry


def _pairwise(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    sq = np.sum(a * a, axis=1)[:, None] + np.sum(b * b, axis=1)[None, :] - 2.0 * a @ b.T
    return np.sqrt(np.maximum(sq, 0.0))


def _neighbours(states: np.ndarray, k: int) -> np.ndarray:
    """Row i: i followed by its k nearest other samples (ties by index)."""
    n = len(states)
    out = np.empty((n, k + 1), dtype=int)
    for start in range(0, n, 512):
        block = _pairwise(states[start:start + 512], states)
        for r, row in enumerate(block):
            i = start + r
            row[i] = -1.0
            out[i] = np.argsort(row, kind="stable")[: k + 1]
    return out


def local_geometry(states, i: int, k: int) -> np.ndarray:
    """Distance matrix among ``states[i]`` and its ``k`` nearest neighbours."""
    states = np.asarray(states, dtype=float).reshape(len(states), -1)
    if len(states) < k + 1:
        raise ValueError(f"need at least k+1={k + 1} states, got {len(states)}")
    dist = np.linalg.norm(states - states[i], axis=1)
    dist[i] = -1.0
    z = states[np.argsort(dist, kind="stable")[: k + 1]]
    diff = z[:, None, :] - z[None, :, :]
    return np.sqrt(np.sum(diff * diff, axis=-1))


def _geometries(states: np.ndarray, k: int) -> np.ndarray:
    idx = _neighbours(states, k)
    z = states[idx]
    diff = z[:, :, None, :] - z[:, None, :, :]
    return np.sqrt(np.sum(diff * diff, axis=-1))


def _permutations(k: int) -> np.ndarray:
    return np.array([(0,) + p for p in itertools.permutations(range(1, k + 1))])


def _scaled_distance(target: np.ndarray, ref: np.ndarray) -> float:
    """|| target - w ref ||_F with the least-squares w (0 if ref vanishes)."""
    denom = np.sum(ref * ref)
    w = np.sum(ref * target) / denom if denom > 0 else 0.0
    return float(np.linalg.norm(target - w * ref))


def geometry_distance(Rx, Ry, k: int | None = None) -> float:
    """Scale- and neighbour-order-invariant distance between geometry matrices."""
    Rx = np.asarray(Rx, dtype=float)
    Ry = np.asarray(Ry, dtype=float)
    k = Rx.shape[0] - 1 if k is None else k
    if Rx.shape != (k + 1, k + 1) or Ry.shape != Rx.shape:
        raise ValueError("geometry matrices must both be (k+1) x (k+1)")
    best = math.inf
    for perm in _permutations(k):
        Ryh = Ry[np.ix_(perm, perm)]
        best = min(best, _scaled_distance(Ryh, Rx), _scaled_distance(Rx, Ryh))
    return best


def cross_weights(Gx: np.ndarray, Gy: np.ndarray, k: int, chunk: int = 128) -> np.ndarray:
    """``exp(-geometry_distance)`` for every (source, target) pair.

    Both directions' residuals shrink as the inner product between the two
    matrices grows, so the best permutation is the one maximising it.
    """
    perms = _permutations(k)
    size = (k + 1) ** 2
    fx = Gx.reshape(len(Gx), size)
    fy = np.stack([Gy[:, p][:, :, p] for p in perms], axis=1).reshape(len(Gy), len(perms), size)
    nx = np.sum(fx * fx, axis=1)
    ny = np.sum(fy[:, 0] ** 2, axis=1)
    W = np.empty((len(Gx), len(Gy)))
    flat_y = fy.reshape(-1, size).T
    for start in range(0, len(Gx), chunk):
        g = (fx[start:start + chunk] @ flat_y).reshape(-1, len(Gy), len(perms)).max(axis=2)
        a = nx[start:start + chunk, None]
        b = ny[None, :]
        with np.errstate(divide="ignore", invalid="ignore"):
            d1 = np.where(a > 0, b - g * g / a, b)
            d2 = np.where(b > 0, a - g * g / b, a)
        W[start:start + chunk] = np.exp(-np.sqrt(np.maximum(np.minimum(d1, d2), 0.0)))
    return W


def build_weights(Xs, Ys, k: int):
    """Cross-space weights W and within-space kernels W_x, W_y."""
    Xs = np.asarray(Xs, dtype=float).reshape(len(Xs), -1)
    Ys = np.asarray(Ys, dtype=float).reshape(len(Ys), -1)
    W = cross_weights(_geometries(Xs, k), _geometries(Ys, k), k)
    Wx = np.exp(-_pairwise(Xs, Xs))
    Wy = np.exp(-_pairwise(Ys, Ys))
    np.fill_diagonal(Wx, 1.0)
    np.fill_diagonal(Wy, 1.0)
    return W, 0.5 * (Wx + Wx.T), 0.5 * (Wy + Wy.T)


# --------------------------------------------------------------------------
# alignment


@dataclass
class AlignmentModel:
    alpha: np.ndarray
    beta: np.ndarray
    config: AlignmentConfig
    cost: float
    eigenvalues: np.ndarray | None = None

    @property
    def chi(self) -> np.ndarray:
        if getattr(self, "_chi", None) is None:
            self._chi = linalg.pinv(self.beta.T) @ self.alpha.T
        return self._chi

    @property
    def source_dim(self) -> int:
        return self.alpha.shape[0]

    @property
    def target_dim(self) -> int:
        return self.beta.shape[0]

    def save(self, path) -> None:
        cfg = asdict(self.config)
        with open(path, "wb") as fh:
            np.savez(fh, format_version=np.array(1),
                     dims=np.array([self.source_dim, self.target_dim, self.alpha.shape[1]]),
                     alpha=self.alpha, beta=self.beta, cost=np.array(self.cost),
                     config=np.array([cfg["mu"], cfg["k"], cfg["d_share"], cfg["n_source"], cfg["n_target"]]))

    @classmethod
    def load(cls, path) -> "AlignmentModel":
        with np.load(path) as data:
            mu, k, d_share, ns, nt = data["config"]
            model = cls(data["alpha"].copy(), data["beta"].copy(),
                        AlignmentConfig(float(mu), int(k), int(d_share), int(ns), int(nt)), float(data["cost"]))
            if tuple(data["dims"]) != (model.source_dim, model.target_dim, model.alpha.shape[1]):
                raise ValueError("alignment checkpoint header does not match arrays")
        return model


def _range_basis(M: np.ndarray, rtol: float = 1e-10) -> np.ndarray:
    U, S, _ = linalg.svd(M)
    if not len(S) or S[0] == 0:
        return U[:, :0]
    return U[:, S > rtol * S[0]]


def alignment_matrices(Xs, Ys, W, Wx, Wy, mu: float):
    """``Z L Z^T`` and ``Z D Z^T`` for the joint problem (feature-space blocks)."""
    X, Y = Xs.T, Ys.T
    dx, dy = X.shape[0], Y.shape[0]
    om1 = W.sum(axis=1)
    om4 = W.sum(axis=0)
    deg_x = Wx.sum(axis=1) + mu * om1
    deg_y = Wy.sum(axis=1) + mu * om4
    A = np.zeros((dx + dy, dx + dy))
    B = np.zeros_like(A)
    A[:dx, :dx] = (X * deg_x) @ X.T - X @ Wx @ X.T
    A[dx:, dx:] = (Y * deg_y) @ Y.T - Y @ Wy @ Y.T
    A[:dx, dx:] = -mu * X @ W @ Y.T
    A[dx:, :dx] = A[:dx, dx:].T
    B[:dx, :dx] = (X * deg_x) @ X.T
    B[dx:, dx:] = (Y * deg_y) @ Y.T
    return 0.5 * (A + A.T), 0.5 * (B + B.T)


def alignment_cost(alpha, beta, Xs, Ys, W, Wx, Wy, mu: float) -> float:
    """The alignment objective evaluated from the projected samples."""
    ex = np.asarray(Xs) @ alpha
    ey = np.asarray(Ys) @ beta

    def sq(a, b):
        return np.sum(a * a, 1)[:, None] + np.sum(b * b, 1)[None, :] - 2 * a @ b.T

    return float(mu * np.sum(sq(ex, ey) * W) + 0.5 * np.sum(sq(ex, ex) * Wx) + 0.5 * np.sum(sq(ey, ey) * Wy))


def align(Xs, Ys, cfg: AlignmentConfig = AlignmentConfig(), weights=None) -> AlignmentModel:
    """Fit ``alpha``, ``beta`` from unpaired source/target samples (rows are flat states).

    The eigenproblem is solved inside the span of the samples; directions the
    samples cannot see and the constant embedding are discarded.
    """
    Xs = np.asarray(Xs, dtype=float).reshape(len(Xs), -1)
    Ys = np.asarray(Ys, dtype=float).reshape(len(Ys), -1)
    W, Wx, Wy = weights if weights is not None else build_weights(Xs, Ys, cfg.k)
    A, B = alignment_matrices(Xs, Ys, W, Wx, Wy, cfg.mu)
    dx, dy = Xs.shape[1], Ys.shape[1]
    Qx = _range_basis(Xs.T)
    Qy = _range_basis(Ys.T)
    Q = np.zeros((dx + dy, Qx.shape[1] + Qy.shape[1]))
    Q[:dx, :Qx.shape[1]] = Qx
    Q[dx:, Qx.shape[1]:] = Qy
    Ar = Q.T @ A @ Q
    Br = Q.T @ B @ Q
    try:
        vals, vecs = linalg.sym_eig_smallest(0.5 * (Ar + Ar.T), Br)
    except linalg.NumericalError as exc:
        raise linalg.NumericalError(f"alignment eigenproblem failed ({Ar.shape[0]} reduced dims): {exc}") from exc
    phi = Q @ vecs
    emb = np.vstack([Xs @ phi[:dx], Ys @ phi[dx:]])
    var = emb.var(axis=0)
    keep = np.flatnonzero(var > 1e-10 * np.mean(emb * emb, axis=0))[: cfg.d_share]
    if not len(keep):
        raise linalg.NumericalError("no non-trivial alignment directions")
    phi = phi[:, keep]
    alpha, beta = phi[:dx], phi[dx:]
    cost = float(np.trace(phi.T @ A @ phi))
    return AlignmentModel(alpha, beta, cfg, cost, vals[keep])


def identity_model(dim: int) -> AlignmentModel:
    eye = np.eye(dim)
    return AlignmentModel(eye, eye, AlignmentConfig(d_share=dim), 0.0)


def map_state(model: AlignmentModel, s, lattice: bool = False) -> np.ndarray:
    """Source state(s) (flat, or one per row) into the target space."""
    s = np.asarray(s, dtype=float)
    flat = s.reshape(-1) if s.ndim != 2 or s.shape[1] != model.source_dim else s
    if flat.shape[-1] != model.source_dim:
        raise ValueError(f"state dimension {flat.shape[-1]} != source dimension {model.source_dim}")
    out = flat @ model.chi.T
    if lattice:
        out = np.clip(np.rint(out), -1, 1)
    return out


# --------------------------------------------------------------------------
# action and policy recovery


def recover_action(s_prev, s_next, config: ShopConfig) -> int:
    """Action whose job-column removal from ``s_prev`` lands closest to ``s_next``.

    The unchanged ``s_prev`` stands for Void; ties go to Void, then the
    lowest slot.
    """
    prev = np.asarray(s_prev, dtype=float).reshape(codec.state_shape(config))
    nxt = np.asarray(s_next, dtype=float).reshape(prev.shape)
    diff = nxt - prev
    base = np.sum(diff * diff)
    best, best_d = VOID, base
    for a in range(1, config.n + 1):
        col = prev[:, a]
        if not np.any(np.abs(col) > 1e-12):
            continue
        # zeroing column a swaps its residual from (next - prev) to next
        d = base - np.sum(diff[:, a] ** 2) + np.sum(nxt[:, a] ** 2)
        if d < best_d:
            best, best_d = a, d
    return best


def recover_labels(trajectories, config: ShopConfig):
    """(state, recovered action) for every consecutive pair of every trajectory."""
    states, labels = [], []
    for traj in trajectories:
        traj = np.asarray(traj, dtype=float)
        traj = traj.reshape(len(traj), -1)
        for prev, nxt in zip(traj[:-1], traj[1:]):
            states.append(prev)
            labels.append(recover_action(prev, nxt, config))
    return np.asarray(states), np.asarray(labels, dtype=int)


def recover_policy(trajectories, config: ShopConfig, seed=0, epochs: int = 40, lr: float = 0.05,
                   batch_size: int = 32, params: PolicyParams | None = None) -> PolicyParams:
    """Fit a target policy to actions recovered from state trajectories."""
    if not trajectories:
        raise ValueError("no trajectories to recover from")
    states, labels = recover_labels(trajectories, config)
    if not len(labels):
        raise ValueError("trajectories hold no consecutive state pairs")
    if params is None:
        params = init_params(policy_dims(codec.state_dim(config), config.n + 1), seed)
    return train_supervised(params, states, labels, epochs=epochs, lr=lr, batch_size=batch_size,
                            seed=seed).params


# --------------------------------------------------------------------------
# pipeline


def sample_states(config: ShopConfig, count: int, seed=0) -> np.ndarray:
    """Encoded states visited by a random dispatcher (uniform over Void and fitting slots)."""
    rng = np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=(53,)))

    def choose(state):
        options = [VOID] + fitting_slots(state)
        return options[int(rng.integers(len(options)))]

    states, _ = rollout_pairs(choose, config, count, seed)
    return states


def source_trajectories(config: ShopConfig, params: PolicyParams, n_traj: int, seed=0, env_seeds=None):
    """Decision-level encoded state sequences of the source policy played greedily."""
    trajs = collect_trajectories(config, params, n_traj, seed, env_seeds=env_seeds, mode="greedy")
    return [tr.states for tr in trajs]


@dataclass
class TransferResult:
    params: PolicyParams
    report: TrainReport
    scratch_params: PolicyParams | None
    scratch_report: TrainReport | None
    model: AlignmentModel
    recovered: PolicyParams


def transfer_pipeline(source_params: PolicyParams, source_cfg: ShopConfig, target_cfg: ShopConfig,
                      align_cfg: AlignmentConfig = AlignmentConfig(), fine_tune_iters: int = 300, seed=0,
                      n_source_traj: int = 10, lr: float = 1e-3, optimizer: str = "adam", batch: int = 10,
                      scratch: bool = True, chi: str = "aligned", recover_epochs: int = 40,
                      recover_lr: float = 0.05, stream: str = "shared", train_seeds=None) -> TransferResult:
    """Align, map source trajectories, recover a target policy, fine-tune it.

    With ``scratch`` a from-scratch run with the same seed and budget is
    trained for comparison. ``chi="identity"`` skips the alignment (same
    geometry only).
    """
    if chi == "identity":
        dim = codec.state_dim(source_cfg)
        if codec.state_dim(target_cfg) != dim or source_cfg.n != target_cfg.n:
            raise ValueError("identity mapping needs identical shop geometry")
        model = identity_model(dim)
    else:
        xs = sample_states(source_cfg, align_cfg.n_source, seed)
        ys = sample_states(target_cfg, align_cfg.n_target, int(seed) + 1)
        model = align(xs, ys, align_cfg)
    trajs = source_trajectories(source_cfg, source_params, n_source_traj, seed)
    mapped = [map_state(model, t) for t in trajs]
    recovered = recover_policy(mapped, target_cfg, seed=seed, epochs=recover_epochs, lr=recover_lr)
    rl = dict(seed=seed, lr=lr, optimizer=optimizer, stream=stream, train_seeds=train_seeds)
    params, report = train_reinforce(target_cfg, fine_tune_iters, batch, params=recovered, **rl)
    scratch_params = scratch_report = None
    if scratch:
        scratch_params, scratch_report = train_reinforce(target_cfg, fine_tune_iters, batch, **rl)
    return TransferResult(params, report, scratch_params, scratch_report, model, recovered)
