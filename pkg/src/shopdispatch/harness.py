"""Seeded experiment runner: evaluation, training, CSV/JSON reports.

An experiment is described by a JSON spec::

    {"config": {...ShopConfig fields...},
     "dispatcher": "reinforce",
     "eval_trajectories": 10,
     "train_seeds": [0, ..., 9], "test_seeds": [100, ..., 109],
     "seed": 0, "out_dir": "runs/x",
     "train": {"iters": 300, "batch": 10, "lr": 0.001, "optimizer": "adam"},
     "variants": ["proc+slack", "proc", "slack"],
     "sweep": {"lam": [0.1, 0.3]}}

``run_experiment`` writes ``metrics.csv``, ``learning_curve.csv`` and
``manifest.json``; the manifest embeds the full spec, so running it again
reproduces both CSVs byte for byte.
"""
from __future__ import annotations

import csv
import dataclasses
import hashlib
import json
import math
import os
import platform
from dataclasses import dataclass, field

import numpy as np

from . import __version__, codec
from .heuristics import HeuristicDispatcher, HeuristicKind, train_imitation
from .policy import PolicyParams, forward
from .reinforce import CURVE_FIELDS, TrainReport, train_reinforce
from .sim import ConfigError, ShopConfig, episode_metrics, run_episode
from .transfer import AlignmentConfig, transfer_pipeline

DISPATCHERS = ("edf", "lst", "random", "imitation", "reinforce", "transfer")
METRIC_FIELDS = ["discounted_reward", "avg_lateness", "avg_tardiness", "completed", "dropped"]
TRAIN_DEFAULTS = {"iters": 300, "batch": 10, "lr": 1e-3, "optimizer": "adam", "stream": "shared", "pool": False}
IMITATION_DEFAULTS = {"rule": "edf", "samples": 2000, "epochs": 60, "lr": 0.05}
TRANSFER_DEFAULTS = {"source": {}, "source_iters": 300, "fine_tune_iters": 300, "chi": "aligned",
                     "mu": 1.0, "k": 4, "d_share": 32, "n_source": 2000, "n_target": 2000}


class SpecError(ValueError):
    """Malformed experiment spec; the message names the offending field."""


@dataclass
class MetricsRow:
    discounted_reward: float
    avg_lateness: float
    avg_tardiness: float
    completed: float
    dropped: float

    def values(self) -> list:
        return [getattr(self, f) for f in METRIC_FIELDS]


def _check_keys(section: str, data: dict, defaults: dict) -> dict:
    if not isinstance(data, dict):
        raise SpecError(f"{section}: expected an object")
    unknown = sorted(set(data) - set(defaults))
    if unknown:
        raise SpecError(f"{section}.{unknown[0]}: unknown field")
    return {**defaults, **data}


@dataclass
class ExperimentSpec:
    config: ShopConfig = field(default_factory=ShopConfig)
    dispatcher: str = "edf"
    eval_trajectories: int = 10
    train_seeds: list = field(default_factory=lambda: list(range(10)))
    test_seeds: list = field(default_factory=lambda: list(range(100, 110)))
    seed: int = 0
    out_dir: str = "runs/experiment"
    checkpoint: str | None = None
    train: dict = field(default_factory=dict)
    imitation: dict = field(default_factory=dict)
    transfer: dict = field(default_factory=dict)
    variants: list = field(default_factory=lambda: [codec.PROC_SLACK])
    sweep: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.dispatcher not in DISPATCHERS:
            raise SpecError(f"dispatcher: unknown kind {self.dispatcher!r} (choose from {', '.join(DISPATCHERS)})")
        if int(self.eval_trajectories) < 1:
            raise SpecError("eval_trajectories: must be >= 1")
        if len(self.test_seeds) < self.eval_trajectories:
            raise SpecError("test_seeds: fewer seeds than eval_trajectories")
        self.train = _check_keys("train", self.train, TRAIN_DEFAULTS)
        self.imitation = _check_keys("imitation", self.imitation, IMITATION_DEFAULTS)
        self.transfer = _check_keys("transfer", self.transfer, TRANSFER_DEFAULTS)
        for v in self.variants:
            if v not in codec.VARIANTS:
                raise SpecError(f"variants: unknown state variant {v!r}")
        known = {f.name for f in dataclasses.fields(ShopConfig)}
        for key, values in self.sweep.items():
            if key not in known:
                raise SpecError(f"sweep.{key}: not a ShopConfig field")
            if not isinstance(values, list) or not values:
                raise SpecError(f"sweep.{key}: expected a nonempty list")

    @property
    def eval_seeds(self) -> list:
        return list(self.test_seeds[: self.eval_trajectories])

    def to_dict(self) -> dict:
        d = {f.name: getattr(self, f.name) for f in dataclasses.fields(self)}
        d["config"] = self.config.to_dict()
        return json.loads(json.dumps(d))

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentSpec":
        if not isinstance(data, dict):
            raise SpecError("spec: expected a JSON object")
        known = {f.name for f in dataclasses.fields(cls)}
        for key in data:
            if key not in known:
                raise SpecError(f"{key}: unknown spec field")
        kwargs = dict(data)
        try:
            kwargs["config"] = ShopConfig.from_dict(data.get("config", {}))
        except (ConfigError, TypeError) as exc:
            raise SpecError(f"config: {exc}") from exc
        for key in ("eval_trajectories", "seed"):
            if key in kwargs and not isinstance(kwargs[key], int):
                raise SpecError(f"{key}: expected an integer")
        for key in ("train_seeds", "test_seeds", "variants"):
            if key in kwargs and not isinstance(kwargs[key], list):
                raise SpecError(f"{key}: expected a list")
        return cls(**kwargs)

    @classmethod
    def from_json(cls, source) -> "ExperimentSpec":
        """Load from a JSON string, a spec file, or a manifest (which embeds the spec)."""
        text = str(source)
        if not text.lstrip().startswith("{"):
            with open(source) as fh:
                text = fh.read()
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise SpecError(f"spec: malformed JSON at line {exc.lineno} column {exc.colno}: {exc.msg}") from exc
        if isinstance(data, dict) and "spec" in data and "config_hash" in data:
            data = data["spec"]
        return cls.from_dict(data)

    def config_hash(self) -> str:
        """sha256 of everything that determines the outputs (not where they go)."""
        d = self.to_dict()
        d.pop("out_dir")
        blob = json.dumps(d, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()


# --------------------------------------------------------------------------
# evaluation


def policy_dispatcher(params: PolicyParams, config: ShopConfig, variant: str = codec.PROC_SLACK):
    """Greedy ``state -> action`` for a trained network."""
    def choose(state):
        s = codec.apply_variant(codec.encode_state(state, config), config, variant)
        return int(np.argmax(forward(params, s.ravel())))
    return choose


def _resolve(dispatcher, config: ShopConfig, seed, variant: str):
    if isinstance(dispatcher, PolicyParams):
        return policy_dispatcher(dispatcher, config, variant)
    if callable(dispatcher) and not isinstance(dispatcher, str):
        return dispatcher
    if isinstance(dispatcher, str) and dispatcher in {k.value for k in HeuristicKind}:
        return HeuristicDispatcher(dispatcher, seed)
    path = str(dispatcher)
    if not os.path.exists(path):
        raise FileNotFoundError(f"dispatcher {path!r} is neither a rule nor an existing checkpoint")
    return policy_dispatcher(PolicyParams.load(path), config, variant)


def evaluate_runs(dispatcher, config: ShopConfig, seeds, variant: str = codec.PROC_SLACK) -> list[MetricsRow]:
    """One MetricsRow per test seed (paired comparisons use these)."""
    rows = []
    for s in seeds:
        choose = _resolve(dispatcher, config, s, variant)
        state, rewards, _ = run_episode(config, choose, s)
        m = episode_metrics(state, rewards, config.gamma)
        rows.append(MetricsRow(*(m[f] for f in METRIC_FIELDS)))
    return rows


def _mean(values) -> float:
    vals = [v for v in values if not math.isnan(v)]
    return float(np.mean(vals)) if vals else float("nan")


def evaluate_policy(dispatcher, spec: ExperimentSpec, variant: str = codec.PROC_SLACK) -> MetricsRow:
    """Means over the spec's held-out seeds.

    ``dispatcher``: a rule name, a PolicyParams, a checkpoint path or any
    ``state -> action`` callable. Lateness averages skip runs that finished
    no job.
    """
    rows = evaluate_runs(dispatcher, spec.config, spec.eval_seeds, variant)
    return MetricsRow(*(_mean([getattr(r, f) for r in rows]) for f in METRIC_FIELDS))


# --------------------------------------------------------------------------
# training


def train_policy(spec: ExperimentSpec, config: ShopConfig | None = None, variant: str = codec.PROC_SLACK,
                 params: PolicyParams | None = None):
    cfg = config or spec.config
    t = spec.train
    stream = t["stream"]
    env_seeds = list(spec.train_seeds) if stream == "fixed" else None
    batch = len(env_seeds) if env_seeds is not None else t["batch"]
    return train_reinforce(cfg, t["iters"], batch, seed=spec.seed, lr=t["lr"], params=params,
                           env_seeds=env_seeds, variant=variant, optimizer=t["optimizer"],
                           stream=stream, train_seeds=_pool(spec))


def _pool(spec: ExperimentSpec):
    return list(spec.train_seeds) if spec.train.get("pool") else None


def ablate_state(spec: ExperimentSpec, variant: str):
    """Train and evaluate with state cells outside ``variant`` masked to zero."""
    if variant not in codec.VARIANTS:
        raise ValueError(f"unknown state variant {variant!r}")
    params, report = train_policy(spec, variant=variant)
    return params, report, evaluate_policy(params, spec, variant)


def _alignment_config(t: dict) -> AlignmentConfig:
    return AlignmentConfig(mu=t["mu"], k=t["k"], d_share=t["d_share"], n_source=t["n_source"],
                           n_target=t["n_target"])


def run_transfer(spec: ExperimentSpec, config: ShopConfig | None = None):
    cfg = config or spec.config
    t = spec.transfer
    try:
        source_cfg = ShopConfig.from_dict({**cfg.to_dict(), **t["source"]})
    except (ConfigError, TypeError) as exc:
        raise SpecError(f"transfer.source: {exc}") from exc
    source_spec = ExperimentSpec(**{**_shallow(spec), "train": {**spec.train, "iters": t["source_iters"]}})
    source_params, _ = train_policy(source_spec, config=source_cfg)
    tr = spec.train
    return transfer_pipeline(source_params, source_cfg, cfg, _alignment_config(t), t["fine_tune_iters"],
                             seed=spec.seed, lr=tr["lr"], optimizer=tr["optimizer"], batch=tr["batch"],
                             chi=t["chi"], stream=tr["stream"], train_seeds=_pool(spec))


def _shallow(spec: ExperimentSpec) -> dict:
    return {f.name: getattr(spec, f.name) for f in dataclasses.fields(spec)}


# --------------------------------------------------------------------------
# reports


def _fmt(v) -> str:
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def _cells(spec: ExperimentSpec):
    if not spec.sweep:
        yield {}, spec.config
        return
    keys = sorted(spec.sweep)
    for combo in np.array(np.meshgrid(*[range(len(spec.sweep[k])) for k in keys], indexing="ij")).reshape(len(keys), -1).T:
        changes = {k: spec.sweep[k][i] for k, i in zip(keys, combo)}
        yield changes, ShopConfig.from_dict({**spec.config.to_dict(), **changes})


def run_experiment(spec_file, out_dir=None) -> dict:
    """Train if needed, evaluate, and write the report files; returns their paths."""
    spec = spec_file if isinstance(spec_file, ExperimentSpec) else ExperimentSpec.from_json(spec_file)
    out = out_dir or spec.out_dir
    os.makedirs(out, exist_ok=True)
    sweep_keys = sorted(spec.sweep)
    metrics, curves = [], []
    for changes, cfg in _cells(spec):
        cell_spec = ExperimentSpec(**{**_shallow(spec), "config": cfg, "sweep": {}})
        label = [changes[k] for k in sweep_keys]
        if spec.dispatcher in ("edf", "lst", "random"):
            metrics.append(label + [spec.dispatcher, codec.PROC_SLACK] +
                           evaluate_policy(spec.dispatcher, cell_spec).values())
        elif spec.dispatcher == "imitation":
            im = spec.imitation
            params = train_imitation(im["rule"], cfg, im["samples"], seed=spec.seed, epochs=im["epochs"], lr=im["lr"])
            params.save(os.path.join(out, "policy.npz"))
            metrics.append(label + ["imitation", codec.PROC_SLACK] + evaluate_policy(params, cell_spec).values())
        elif spec.dispatcher == "reinforce":
            for variant in spec.variants:
                params, report, row = ablate_state(cell_spec, variant)
                params.save(os.path.join(out, f"policy_{variant.replace('+', '_')}.npz"))
                metrics.append(label + ["reinforce", variant] + row.values())
                curves.append((label + ["reinforce", variant], report))
        else:
            res = run_transfer(cell_spec)
            res.params.save(os.path.join(out, "policy_transfer.npz"))
            res.model.save(os.path.join(out, "alignment.npz"))
            metrics.append(label + ["transfer", codec.PROC_SLACK] + evaluate_policy(res.params, cell_spec).values())
            curves.append((label + ["transfer", codec.PROC_SLACK], res.report))
            if res.scratch_report is not None:
                metrics.append(label + ["scratch", codec.PROC_SLACK] +
                               evaluate_policy(res.scratch_params, cell_spec).values())
                curves.append((label + ["scratch", codec.PROC_SLACK], res.scratch_report))

    paths = {"metrics": os.path.join(out, "metrics.csv"), "learning_curve": os.path.join(out, "learning_curve.csv"),
             "manifest": os.path.join(out, "manifest.json")}
    with open(paths["metrics"], "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(sweep_keys + ["dispatcher", "variant"] + METRIC_FIELDS)
        for row in metrics:
            w.writerow([_fmt(v) for v in row])
    with open(paths["learning_curve"], "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(sweep_keys + ["curve", "variant"] + CURVE_FIELDS)
        for label, report in curves:
            for r in report.rows:
                w.writerow([_fmt(v) for v in label] + [r.iteration] + [_fmt(getattr(r, f)) for f in CURVE_FIELDS[1:]])
    manifest = {
        "config_hash": spec.config_hash(),
        "seeds": {"seed": spec.seed, "train": spec.train_seeds, "test": spec.eval_seeds},
        "versions": {"shopdispatch": __version__, "numpy": np.__version__, "python": platform.python_version()},
        "outputs": ["metrics.csv", "learning_curve.csv"],
        "spec": spec.to_dict(),
    }
    with open(paths["manifest"], "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return paths


def read_curve(path) -> dict:
    """learning_curve.csv -> {(curve, variant, *sweep): TrainReport-like list of rewards}."""
    out: dict = {}
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            key = tuple(v for k, v in row.items() if k not in CURVE_FIELDS)
            out.setdefault(key, []).append(float(row["mean_discounted_reward"]))
    return out


__all__ = ["ExperimentSpec", "MetricsRow", "SpecError", "TrainReport", "evaluate_policy", "evaluate_runs",
           "run_experiment", "ablate_state", "train_policy", "run_transfer", "policy_dispatcher", "read_curve"]
