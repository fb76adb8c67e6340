"""Two-hidden-layer MLP with sparsity gates after each hidden ReLU."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import ndcore as nd
from .errors import ConfigError, DimensionError
from .vbs import DEFAULT_PRUNE_THRESHOLD, GateMode, GateParams, gate_forward

CHECKPOINT_FORMAT = "sncl-checkpoint"
CHECKPOINT_VERSION = 1


@dataclass
class ForwardTrace:
    logits: nd.Tensor
    features: list  # gated hidden activations, one [B x H] tensor per layer


class GatedMlp:
    """in_dim -> H -> H -> classes, gates on both hidden layers.

    ``gated=False`` skips the gates entirely (plain MLP baselines).
    """

    def __init__(self, in_dim=784, hidden=100, classes=10, *, seed=0, gated=True,
                 prune_threshold=DEFAULT_PRUNE_THRESHOLD, per_sample_noise=False):
        self.in_dim, self.hidden, self.classes = in_dim, hidden, classes
        self.gated = gated
        self.prune_threshold = prune_threshold
        self.per_sample_noise = per_sample_noise
        rng = np.random.default_rng(seed)
        dims = [in_dim, hidden, hidden, classes]
        self.weights, self.biases = [], []
        for fan_in, fan_out in zip(dims[:-1], dims[1:]):
            bound = np.sqrt(6.0 / (fan_in + fan_out))
            self.weights.append(nd.Tensor(rng.uniform(-bound, bound, (fan_in, fan_out)), requires_grad=True))
            self.biases.append(nd.Tensor(np.zeros(fan_out), requires_grad=True))
        self.gates = [GateParams.init(1, hidden), GateParams.init(2, hidden)]

    def parameters(self):
        params = []
        for w, b in zip(self.weights, self.biases):
            params += [w, b]
        if self.gated:
            for g in self.gates:
                params += g.parameters()
        return params

    def named_arrays(self):
        out = {}
        for i, (w, b) in enumerate(zip(self.weights, self.biases), start=1):
            out[f"layer{i}.weight"] = w
            out[f"layer{i}.bias"] = b
        for g in self.gates:
            out[f"gate{g.layer_index}.mu"] = g.mu
            out[f"gate{g.layer_index}.log_lambda"] = g.log_lambda
        return out

    def zero_grad(self):
        for p in self.named_arrays().values():
            p.zero_grad()

    def forward(self, x, mode=GateMode.DETERMINISTIC, rng=None, *, prune=True):
        """Logits plus both gated hidden activations.

        Deterministic passes zero pruned channels unless ``prune=False``.
        """
        x = nd.as_tensor(x)
        if x.data.ndim != 2 or x.shape[1] != self.in_dim:
            raise DimensionError(f"model expects [B x {self.in_dim}] input, got {x.shape}")
        threshold = self.prune_threshold if (prune and mode is GateMode.DETERMINISTIC) else None
        h = x
        features = []
        for gates, w, b in zip(self.gates, self.weights[:2], self.biases[:2]):
            h = nd.relu(nd.add(nd.matmul(h, w), b))
            if self.gated:
                h = gate_forward(h, gates, mode, rng, per_sample=self.per_sample_noise,
                                 prune_threshold=threshold)
            features.append(h)
        logits = nd.add(nd.matmul(h, self.weights[2]), self.biases[2])
        return ForwardTrace(logits, features)

    def predict(self, x, allowed_classes=None):
        trace = self.forward(x, GateMode.DETERMINISTIC)
        logits = trace.logits.data
        if allowed_classes is not None:
            logits = masked_logits(trace, allowed_classes).data
        return predict_from_logits(logits)

    def save(self, path):
        save_checkpoint(self, path)


def predict_from_logits(logits):
    """Argmax per row; np.argmax already resolves ties to the lowest index."""
    return np.argmax(np.asarray(logits), axis=1)


def masked_logits(trace, allowed_classes):
    """Logits with every class outside ``allowed_classes`` set to -inf."""
    logits = trace.logits if isinstance(trace, ForwardTrace) else nd.as_tensor(trace)
    k = logits.shape[1]
    allowed = sorted(set(int(c) for c in allowed_classes))
    if not allowed:
        raise ConfigError("masked_logits needs at least one allowed class")
    if allowed[0] < 0 or allowed[-1] >= k:
        raise ConfigError(f"allowed classes {allowed} outside [0, {k})")
    keep = np.zeros(k, dtype=bool)
    keep[allowed] = True
    data = np.where(keep, logits.data, -np.inf)

    def backward_fn(g):
        return (np.where(keep, g, 0.0),)

    return nd._make(data, (logits,), "mask", backward_fn)


def save_checkpoint(model, path):
    """JSON checkpoint: architecture fields plus flat row-major parameter arrays."""
    payload = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "in_dim": model.in_dim,
        "hidden": model.hidden,
        "classes": model.classes,
        "gated": model.gated,
        "prune_threshold": model.prune_threshold,
        "params": {
            name: {"shape": list(t.shape), "data": t.data.ravel().tolist()}
            for name, t in model.named_arrays().items()
        },
    }
    Path(path).write_text(json.dumps(payload))


def load_checkpoint(path):
    payload = json.loads(Path(path).read_text())
    if payload.get("format") != CHECKPOINT_FORMAT:
        raise ConfigError(f"{path}: not a {CHECKPOINT_FORMAT} file")
    if payload.get("version") != CHECKPOINT_VERSION:
        raise ConfigError(f"{path}: unsupported checkpoint version {payload.get('version')}")
    model = GatedMlp(payload["in_dim"], payload["hidden"], payload["classes"],
                     gated=payload["gated"], prune_threshold=payload["prune_threshold"])
    arrays = model.named_arrays()
    for name, entry in payload["params"].items():
        target = arrays[name]
        data = np.asarray(entry["data"], dtype=np.float64).reshape(entry["shape"])
        if data.shape != target.shape:
            raise DimensionError(f"{name}: checkpoint shape {data.shape} != model shape {target.shape}")
        target.data[...] = data
    return model
