"""Losses, SGD and the continual-learning training loop.

The baselines differ from the full method only in their loss weights,
memory sampler and whether gates are used, so every method runs through
the same ``train_stream``.
"""

from __future__ import annotations

import math
import time
from dataclasses import asdict, dataclass, field, fields, replace

import numpy as np

from . import ndcore as nd
from .errors import ConfigError, DimensionError, DivergenceError
from .model import masked_logits, predict_from_logits
from .replay import (ReplayBuffer, capture, lrs_update, refresh_loss, reservoir_update,
                     sample_replay_batch, stack_items)
from .vbs import DEFAULT_PRUNE_THRESHOLD, GateMode, pruned_fraction, sparsity_report, vbs_loss

METHODS = ("sgd", "er", "der", "sncl", "custom")
SAMPLERS = ("none", "reservoir", "lrs")
SETTINGS = ("class_il", "task_il", "domain_il", "gcl")


@dataclass(frozen=True)
class LossWeights:
    alpha: float = 1.0  # memory cross entropy
    beta: float = 0.05  # logit replay
    gamma: float = 0.03  # feature replay
    eta: float = 1e-4  # sparsity prior

    def validate(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if not (math.isfinite(v) and v >= 0):
                raise ConfigError(f"loss weight {f.name} must be finite and >= 0, got {v}")
        return self


@dataclass(frozen=True)
class MethodConfig:
    method: str = "sncl"
    weights: LossWeights = field(default_factory=LossWeights)
    sampler: str = "lrs"
    gates: bool = True
    lr: float = 0.1
    batch_size: int = 32
    epochs: int = 1
    refresh_losses: bool = True
    lrs_admission: str = "reservoir"  # batch | ratio | reservoir
    lrs_ratio: float = 1.0
    eval_every: int = 100
    prune_threshold: float = DEFAULT_PRUNE_THRESHOLD
    lambda_lr_scale: float = 100.0  # log_lambda step = lr * lambda_lr_scale
    gate_noise: str = "channel"  # channel | sample | off

    @classmethod
    def preset(cls, method, **overrides):
        method = method.lower().replace("-style", "").replace("_", "")
        base = {
            "sgd": dict(weights=LossWeights(0.0, 0.0, 0.0, 0.0), sampler="none", gates=False),
            "er": dict(weights=LossWeights(1.0, 0.0, 0.0, 0.0), sampler="reservoir", gates=False),
            "der": dict(weights=LossWeights(1.0, 0.05, 0.0, 0.0), sampler="reservoir", gates=False),
            "sncl": dict(weights=LossWeights(), sampler="lrs", gates=True),
            # unconstrained starting point for ablations
            "custom": dict(weights=LossWeights(), sampler="lrs", gates=True),
        }
        if method not in base:
            raise ConfigError(f"unknown method {method!r}; expected one of {METHODS}")
        weight_keys = {"alpha", "beta", "gamma", "eta"}
        w = {k: overrides.pop(k) for k in list(overrides) if k in weight_keys}
        cfg = cls(method=method, **base[method])
        if w:
            cfg = replace(cfg, weights=replace(cfg.weights, **w))
        return replace(cfg, **overrides).validate()

    def validate(self):
        w = self.weights.validate()
        if self.method not in METHODS:
            raise ConfigError(f"unknown method {self.method!r}")
        if self.sampler not in SAMPLERS:
            raise ConfigError(f"unknown sampler {self.sampler!r}")
        if self.gate_noise not in ("channel", "sample", "off"):
            raise ConfigError(f"unknown gate_noise {self.gate_noise!r}")
        if self.lrs_admission not in ("batch", "ratio", "reservoir"):
            raise ConfigError(f"unknown lrs_admission {self.lrs_admission!r}")
        if not 0 < self.lrs_ratio <= 1:
            raise ConfigError("lrs_ratio must lie in (0, 1]")
        if not (self.lr > 0 and self.lambda_lr_scale > 0):
            raise ConfigError("learning rates must be positive")
        if self.batch_size < 2 or self.epochs < 1 or self.eval_every < 1:
            raise ConfigError("batch_size >= 2, epochs >= 1 and eval_every >= 1 required")
        replay_terms = w.alpha + w.beta + w.gamma
        if self.method == "sgd" and (replay_terms > 0 or self.sampler != "none"):
            raise ConfigError("sgd uses no memory: alpha = beta = gamma = 0 and sampler = none")
        if self.method in ("er", "der", "sncl") and self.sampler == "none":
            raise ConfigError(f"{self.method} needs a memory sampler")
        if self.method == "er" and self.sampler != "reservoir":
            raise ConfigError("er uses reservoir sampling")
        if self.method == "er" and not (w.alpha > 0 and w.beta == w.gamma == w.eta == 0):
            raise ConfigError("er: alpha > 0 and beta = gamma = eta = 0")
        if self.method == "der" and not w.beta > 0:
            raise ConfigError("der: beta > 0")
        if self.method == "sncl" and not (self.gates and self.sampler == "lrs"
                                          and min(w.alpha, w.beta, w.gamma, w.eta) > 0):
            raise ConfigError("sncl: gates on, lrs sampler, alpha, beta, gamma, eta > 0")
        return self

    def to_dict(self):
        d = asdict(self)
        return d


# ------------------------------------------------------------------ losses

def loss_current(trace, labels):
    """Cross entropy on the current-task samples; returns (loss, per-sample losses)."""
    return nd.softmax_cross_entropy(trace.logits, labels)


def loss_memory_ce(replay_trace, replay_labels):
    """Cross entropy on replayed samples; (0, empty) when nothing was replayed."""
    if replay_trace is None or len(replay_labels) == 0:
        return nd.Tensor(0.0), np.zeros(0)
    return nd.softmax_cross_entropy(replay_trace.logits, replay_labels)


def loss_fer_z(replay_trace, z_hats):
    """Mean squared distance between current logits and the stored ones."""
    z_hats = np.asarray(z_hats, dtype=np.float64)
    logits = replay_trace.logits
    if z_hats.shape != logits.shape:
        raise DimensionError(f"stored logits {z_hats.shape} vs current {logits.shape}")
    return nd.mul(nd.sum_sq_diff(logits, z_hats), 1.0 / logits.shape[0])


def loss_fer_h(replay_trace, h_hats):
    """Mean over samples of the squared feature drift summed over layers and units."""
    feats = replay_trace.features
    if len(h_hats) != len(feats):
        raise DimensionError(f"{len(h_hats)} stored feature layers, model has {len(feats)}")
    out = None
    for h, target in zip(feats, h_hats):
        target = np.asarray(target, dtype=np.float64)
        if target.shape != h.shape:
            raise DimensionError(f"stored features {target.shape} vs current {h.shape}")
        term = nd.sum_sq_diff(h, target)
        out = term if out is None else nd.add(out, term)
    return nd.mul(out, 1.0 / feats[0].shape[0])


def total_loss(current, memory_ce=None, fer_z=None, fer_h=None, vbs=None, weights=LossWeights()):
    """current + eta*vbs + alpha*memory_ce + beta*fer_z + gamma*fer_h; absent terms are skipped."""
    out = current
    for term, w in ((vbs, weights.eta), (memory_ce, weights.alpha), (fer_z, weights.beta), (fer_h, weights.gamma)):
        if term is not None and w != 0:
            out = nd.add(out, nd.mul(term, w))
    return out


def sgd_step(params, lr, grads=None, lrs=None):
    """In-place p <- p - lr * g. ``lrs`` optionally gives a per-parameter step size."""
    if not lr > 0:
        raise ConfigError(f"learning rate must be positive, got {lr}")
    grads = [p.grad for p in params] if grads is None else grads
    for g in grads:
        if g is not None and not np.all(np.isfinite(g)):
            raise DivergenceError("non-finite gradient; aborting run")
    for i, (p, g) in enumerate(zip(params, grads)):
        if g is None:
            continue
        p.data -= (lr if lrs is None else lrs[i]) * g


# --------------------------------------------------------------- evaluation

def evaluate(model, splits, setting):
    """Accuracy per split. ``splits`` holds (name, LabeledSet, class set) triples."""
    if setting not in SETTINGS:
        raise ConfigError(f"unknown setting {setting!r}")
    accs = []
    for _, data, classes in splits:
        trace = model.forward(data.inputs, GateMode.DETERMINISTIC)
        logits = trace.logits
        if setting == "task_il":
            if classes is None:
                raise ConfigError("task_il evaluation needs each split's class set")
            logits = masked_logits(trace, classes)
        pred = predict_from_logits(logits.data)
        accs.append(float(np.mean(pred == data.labels)))
    return accs


def forgetting(acc_rows):
    """Per-task best-ever accuracy minus final accuracy; rows are evaluation points."""
    a = np.asarray(acc_rows, dtype=np.float64)
    return (a.max(axis=0) - a[-1]).tolist()


@dataclass
class RunMetrics:
    protocol: str
    method: str
    seed: int
    setting: str
    split_names: list
    eval_steps: list = field(default_factory=list)
    accuracy: list = field(default_factory=list)  # accuracy[eval point][split]
    sparsity: list = field(default_factory=list)  # per eval point, per-layer report
    steps: int = 0
    status: str = "ok"
    message: str = ""
    config: dict = field(default_factory=dict)
    buffer_class_counts: dict = field(default_factory=dict)
    wall_clock: float = 0.0
    buffer: ReplayBuffer | None = field(default=None, repr=False, compare=False)

    @property
    def average_accuracy(self):
        return float(np.mean(self.accuracy[-1])) if self.accuracy else float("nan")

    @property
    def forgetting(self):
        return forgetting(self.accuracy) if self.accuracy else []

    @property
    def forgetting_mean(self):
        f = self.forgetting
        if not f:
            return float("nan")
        # the most recent task cannot have been forgotten yet
        f = f[:-1] if (len(f) > 1 and self.setting != "gcl") else f
        return float(np.mean(f))

    @property
    def final_pruned_fraction(self):
        return pruned_fraction(self.sparsity[-1]) if self.sparsity else 0.0

    def to_dict(self, with_timing=False):
        d = {
            "protocol": self.protocol,
            "method": self.method,
            "seed": self.seed,
            "setting": self.setting,
            "status": self.status,
            "message": self.message,
            "split_names": self.split_names,
            "eval_steps": self.eval_steps,
            "accuracy": self.accuracy,
            "average_accuracy": self.average_accuracy if self.status == "ok" else None,
            "forgetting": self.forgetting if self.status == "ok" else None,
            "forgetting_mean": self.forgetting_mean if self.status == "ok" else None,
            "sparsity": self.sparsity,
            "final_pruned_fraction": self.final_pruned_fraction,
            "steps": self.steps,
            "buffer_class_counts": {str(k): v for k, v in self.buffer_class_counts.items()},
            "config": self.config,
        }
        if with_timing:
            d["wall_clock"] = self.wall_clock
        return d

    @classmethod
    def from_dict(cls, d):
        m = cls(d["protocol"], d["method"], d["seed"], d["setting"], d["split_names"],
                d["eval_steps"], d["accuracy"], d["sparsity"], d["steps"], d["status"],
                d.get("message", ""), d.get("config", {}),
                {int(k): v for k, v in d.get("buffer_class_counts", {}).items()},
                d.get("wall_clock", 0.0))
        return m


# ----------------------------------------------------------------- training

def _batches(n, size):
    return [(i, min(i + size, n)) for i in range(0, n, size)]


def _admit(batch_items, cfg, buffer, rng):
    """The subset of an incoming batch offered to the loss-aware update."""
    if cfg.lrs_admission == "batch" or len(buffer.items) < buffer.capacity:
        return batch_items
    if cfg.lrs_admission == "ratio":
        k = max(1, int(round(cfg.lrs_ratio * len(batch_items))))
        idx = np.sort(rng.choice(len(batch_items), size=k, replace=False))
        return [batch_items[i] for i in idx]
    # reservoir admission: each item with probability M / (items seen so far)
    keep = []
    seen = buffer.seen_count
    for it in batch_items:
        seen += 1
        if rng.random() < buffer.capacity / seen:
            keep.append(it)
    return keep


def train_step(model, cfg, x_cur, y_cur, buffer, rng, step):
    """One optimisation step on a current half-batch plus a replayed half-batch."""
    w = cfg.weights
    n_rep = cfg.batch_size // 2
    replay = sample_replay_batch(buffer, n_rep, rng) if buffer is not None else None

    mode = GateMode.DETERMINISTIC if cfg.gate_noise == "off" else GateMode.SAMPLE
    model.zero_grad()
    trace = model.forward(x_cur, mode, rng, prune=False)
    ce_cur, per_cur = loss_current(trace, y_cur)
    vbs = vbs_loss(model.gates) if (model.gated and w.eta > 0) else None
    ce_mem = fer_z = fer_h = None
    per_mem = None
    if replay is not None:
        xm, ym, zm, hm = stack_items(replay)
        rtrace = model.forward(xm, mode, rng, prune=False)
        ce_mem, per_mem = loss_memory_ce(rtrace, ym)
        if w.beta > 0:
            fer_z = loss_fer_z(rtrace, zm)
        if w.gamma > 0:
            fer_h = loss_fer_h(rtrace, hm)
    loss = total_loss(ce_cur, ce_mem, fer_z, fer_h, vbs, w)
    if not math.isfinite(loss.item()):
        raise DivergenceError(f"non-finite loss at step {step}")
    nd.backward(loss)
    params = model.parameters()
    lrs = None
    if cfg.lambda_lr_scale != 1.0 and model.gated:
        lambdas = {id(g.log_lambda) for g in model.gates}
        lrs = [cfg.lr * cfg.lambda_lr_scale if id(p) in lambdas else cfg.lr for p in params]
    sgd_step(params, cfg.lr, lrs=lrs)

    if buffer is not None:
        items = [buffer.register(it) for it in capture(model, x_cur, y_cur, per_cur, step)]
        if cfg.sampler == "reservoir":
            for it in items:
                reservoir_update(buffer, it, rng)
        else:
            offered = _admit(items, cfg, buffer, rng)
            buffer.seen_count += len(items) - len(offered)
            lrs_update(buffer, offered)
        if replay is not None and cfg.refresh_losses:
            refresh_loss(buffer, [it.uid for it in replay], per_mem)
    return loss.item()


def train_stream(model, stream, cfg, buffer_size=200, seed=0, *, eval_splits=None):
    """Train ``model`` over ``stream`` with ``cfg``; evaluate after each phase.

    Boundary-free streams are evaluated every ``cfg.eval_every`` batches
    and once at the end instead. ``eval_splits`` overrides the stream's
    own test splits (validation during sweeps).
    """
    cfg.validate()
    if not stream.phases or not any(len(p.train) for p in stream.phases):
        raise ConfigError("empty stream")
    rng = np.random.default_rng([seed, 2024])
    buffer = ReplayBuffer(buffer_size) if cfg.sampler != "none" else None
    model.prune_threshold = cfg.prune_threshold
    model.per_sample_noise = cfg.gate_noise == "sample"
    splits = eval_splits if eval_splits is not None else stream.eval_splits()
    setting = "class_il" if stream.setting == "gcl" else stream.setting
    metrics = RunMetrics(stream.protocol, cfg.method, seed, stream.setting,
                         [s[0] for s in splits], config=cfg.to_dict())
    n_cur = math.ceil(cfg.batch_size / 2)
    start = time.perf_counter()

    def record():
        metrics.eval_steps.append(step)
        metrics.accuracy.append(evaluate(model, splits, setting))
        metrics.sparsity.append(sparsity_report(model.gates, cfg.prune_threshold) if model.gated else [])

    step = 0
    try:
        for phase in stream.phases:
            for epoch in range(cfg.epochs):
                order = np.arange(len(phase.train))
                if epoch > 0:
                    order = rng.permutation(order)
                for lo, hi in _batches(len(order), n_cur):
                    idx = order[lo:hi]
                    train_step(model, cfg, phase.train.inputs[idx], phase.train.labels[idx], buffer, rng, step)
                    step += 1
                    if stream.boundary_free and step % cfg.eval_every == 0:
                        record()
            if not stream.boundary_free:
                record()
        if stream.boundary_free and (not metrics.eval_steps or metrics.eval_steps[-1] != step):
            record()
    except DivergenceError as exc:
        metrics.status, metrics.message = "failed", str(exc)
    metrics.steps = step
    metrics.wall_clock = time.perf_counter() - start
    if buffer is not None:
        metrics.buffer_class_counts = buffer.class_counts()
        metrics.buffer = buffer
    return metrics
