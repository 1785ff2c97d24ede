"""Feed-forward softmax dispatcher with hand-written backprop.

Input is a row-major flattened state matrix; output is a probability vector
over ``n + 1`` actions (index 0 = Void). Hidden layers use ReLU.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

HIDDEN = (128, 64)
CHECKPOINT_VERSION = 1
CLIP_NORM = 5.0


@dataclass
class PolicyParams:
    weights: list
    biases: list

    @property
    def layer_dims(self) -> tuple[int, ...]:
        return (self.weights[0].shape[0],) + tuple(w.shape[1] for w in self.weights)

    @property
    def n_actions(self) -> int:
        return self.weights[-1].shape[1]

    def copy(self) -> "PolicyParams":
        return PolicyParams([w.copy() for w in self.weights], [b.copy() for b in self.biases])

    def fingerprint(self) -> str:
        h = hashlib.blake2b(digest_size=16)
        for w, b in zip(self.weights, self.biases):
            h.update(np.ascontiguousarray(w).tobytes())
            h.update(np.ascontiguousarray(b).tobytes())
        return h.hexdigest()

    def flat(self) -> np.ndarray:
        return np.concatenate([a.ravel() for pair in zip(self.weights, self.biases) for a in pair])

    def save(self, path) -> None:
        arrays = {"format_version": np.array(CHECKPOINT_VERSION),
                  "layer_dims": np.array(self.layer_dims)}
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            arrays[f"W{i}"] = w
            arrays[f"b{i}"] = b
        with open(path, "wb") as fh:
            np.savez(fh, **arrays)

    @classmethod
    def load(cls, path) -> "PolicyParams":
        with np.load(path) as data:
            if int(data["format_version"]) != CHECKPOINT_VERSION:
                raise ValueError(f"unsupported checkpoint version {int(data['format_version'])}")
            dims = tuple(int(d) for d in data["layer_dims"])
            weights = [data[f"W{i}"].copy() for i in range(len(dims) - 1)]
            biases = [data[f"b{i}"].copy() for i in range(len(dims) - 1)]
        params = cls(weights, biases)
        if params.layer_dims != dims:
            raise ValueError("checkpoint header does not match stored arrays")
        return params


def policy_dims(input_dim: int, n_actions: int, hidden=HIDDEN) -> tuple[int, ...]:
    return (input_dim, *hidden, n_actions)


def init_params(dims, seed) -> PolicyParams:
    """Uniform weights in +-sqrt(6 / fan_in), zero biases."""
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        bound = np.sqrt(6.0 / fan_in)
        weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return PolicyParams(weights, biases)


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def _as_batch(params: PolicyParams, s) -> tuple[np.ndarray, bool]:
    x = np.asarray(s, dtype=float)
    single = x.ndim == 1 or (x.ndim == 2 and x.size == params.layer_dims[0] and x.shape[0] != 1
                             and x.shape[1] != params.layer_dims[0])
    if single:
        x = x.reshape(1, -1)
    elif x.ndim > 2:
        x = x.reshape(x.shape[0], -1)
    if x.shape[1] != params.layer_dims[0]:
        raise ValueError(f"input dimension {x.shape[1]} != policy input {params.layer_dims[0]}")
    return x, single


def _forward(params: PolicyParams, x: np.ndarray):
    acts = [x]
    h = x
    last = len(params.weights) - 1
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        z = h @ w + b
        h = z if i == last else np.maximum(z, 0.0)
        acts.append(h)
    return acts


def logits(params: PolicyParams, s) -> np.ndarray:
    x, single = _as_batch(params, s)
    out = _forward(params, x)[-1]
    return out[0] if single else out


def forward(params: PolicyParams, s) -> np.ndarray:
    """pi(. | s); ``s`` is one state (matrix or flat) or a batch of flat states."""
    x, single = _as_batch(params, s)
    probs = softmax(_forward(params, x)[-1])
    return probs[0] if single else probs


def _backward(params: PolicyParams, acts, dlogits: np.ndarray):
    gw = [None] * len(params.weights)
    gb = [None] * len(params.weights)
    delta = dlogits
    for i in range(len(params.weights) - 1, -1, -1):
        gw[i] = acts[i].T @ delta
        gb[i] = delta.sum(axis=0)
        if i:
            delta = (delta @ params.weights[i].T) * (acts[i] > 0)
    return PolicyParams(gw, gb)


def log_prob_grad(params: PolicyParams, states, actions, weights=None):
    """Gradient of ``sum_r weights[r] * log pi(actions[r] | states[r])``.

    Returns ``(value, grads)``.
    """
    x, _ = _as_batch(params, states)
    actions = np.atleast_1d(np.asarray(actions, dtype=int))
    w = np.ones(len(actions)) if weights is None else np.atleast_1d(np.asarray(weights, dtype=float))
    acts = _forward(params, x)
    probs = softmax(acts[-1])
    rows = np.arange(len(actions))
    logp = np.log(probs[rows, actions])
    dlogits = -probs
    dlogits[rows, actions] += 1.0
    dlogits *= w[:, None]
    return float(np.dot(w, logp)), _backward(params, acts, dlogits)


def cross_entropy_grad(params: PolicyParams, states, labels):
    """Mean cross-entropy and its gradient."""
    value, grads = log_prob_grad(params, states, labels)
    count = len(np.atleast_1d(labels))
    scale = -1.0 / count
    return -value / count, PolicyParams([g * scale for g in grads.weights],
                                        [g * scale for g in grads.biases])


def global_norm(grads: PolicyParams) -> float:
    return float(np.sqrt(sum(np.sum(g * g) for g in grads.weights + grads.biases)))


def apply_step(params: PolicyParams, grads: PolicyParams, lr: float, clip: float | None = CLIP_NORM,
               ascend: bool = False) -> PolicyParams:
    """One gradient step (descent unless ``ascend``) with global-norm clipping."""
    scale = lr if ascend else -lr
    if clip is not None:
        norm = global_norm(grads)
        if norm > clip:
            scale *= clip / norm
    return PolicyParams([w + scale * g for w, g in zip(params.weights, grads.weights)],
                        [b + scale * g for b, g in zip(params.biases, grads.biases)])


def select_action(probs: np.ndarray, mode: str = "greedy", rng: np.random.Generator | None = None) -> int:
    if mode == "greedy":
        return int(np.argmax(probs))
    if mode != "sample":
        raise ValueError(f"unknown selection mode {mode!r}")
    cdf = np.cumsum(probs)
    u = rng.random() * cdf[-1]
    return int(min(np.searchsorted(cdf, u, side="right"), len(probs) - 1))


@dataclass
class SupervisedFit:
    params: PolicyParams
    loss: float
    accuracy: float


def train_supervised(params: PolicyParams, states, labels, epochs: int = 50, lr: float = 1e-3,
                     batch_size: int = 64, seed=0, clip: float | None = CLIP_NORM) -> SupervisedFit:
    """Minimise mean cross-entropy with shuffled mini-batch gradient descent."""
    x = np.asarray(states, dtype=float)
    x = x.reshape(len(x), -1) if len(x) else x
    y = np.asarray(labels, dtype=int)
    if len(x) == 0:
        raise ValueError("empty training set")
    if len(x) != len(y):
        raise ValueError("states and labels differ in length")
    if y.min() < 0 or y.max() >= params.n_actions:
        raise ValueError("label outside the action space")
    rng = np.random.default_rng(seed)
    current = params
    for _ in range(epochs):
        order = rng.permutation(len(x))
        for start in range(0, len(x), batch_size):
            idx = order[start:start + batch_size]
            _, grads = cross_entropy_grad(current, x[idx], y[idx])
            current = apply_step(current, grads, lr, clip)
    probs = forward(current, x)
    loss = float(-np.mean(np.log(probs[np.arange(len(y)), y] + 1e-300)))
    accuracy = float(np.mean(np.argmax(probs, axis=1) == y))
    return SupervisedFit(current, loss, accuracy)


def greedy_actions(params: PolicyParams, states) -> np.ndarray:
    x = np.asarray(states, dtype=float).reshape(len(states), -1)
    return np.argmax(forward(params, x), axis=1)


class Adam:
    """Adam moments over a PolicyParams pytree; ``step`` returns new params."""

    def __init__(self, lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8,
                 clip: float | None = CLIP_NORM):
        self.lr, self.beta1, self.beta2, self.eps, self.clip = lr, beta1, beta2, eps, clip
        self.m = self.v = None
        self.t = 0

    def step(self, params: PolicyParams, grads: PolicyParams, ascend: bool = False) -> PolicyParams:
        g = grads.weights + grads.biases
        if self.clip is not None:
            norm = global_norm(grads)
            if norm > self.clip:
                g = [x * (self.clip / norm) for x in g]
        if ascend:
            g = [-x for x in g]
        if self.m is None:
            self.m = [np.zeros_like(x) for x in g]
            self.v = [np.zeros_like(x) for x in g]
        self.t += 1
        new = []
        for i, (p, gi) in enumerate(zip(params.weights + params.biases, g)):
            self.m[i] = self.beta1 * self.m[i] + (1 - self.beta1) * gi
            self.v[i] = self.beta2 * self.v[i] + (1 - self.beta2) * gi * gi
            mhat = self.m[i] / (1 - self.beta1 ** self.t)
            vhat = self.v[i] / (1 - self.beta2 ** self.t)
            new.append(p - self.lr * mhat / (np.sqrt(vhat) + self.eps))
        k = len(params.weights)
        return PolicyParams(new[:k], new[k:])
