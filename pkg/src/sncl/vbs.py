"""Per-neuron variational sparsity gates.

Each hidden unit c of layer l is scaled by a gate tau with Gaussian
posterior N(mu, lam * mu**2). ``log_lambda`` stores a = ln(lam) so the
variance ratio stays positive. The regularizer 0.5 * sum log(1 + 1/lam)
pushes 1/lam toward zero; units whose 1/lam falls below a threshold are
treated as pruned at evaluation time.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from . import ndcore as nd
from .errors import ConfigError, DimensionError

DEFAULT_PRUNE_THRESHOLD = 0.05
INIT_MU = 1.0
INIT_LOG_LAMBDA = float(np.log(1e-2))


class GateMode(enum.Enum):
    SAMPLE = "sample"
    DETERMINISTIC = "deterministic"


@dataclass
class GateParams:
    layer_index: int
    mu: nd.Tensor
    log_lambda: nd.Tensor

    @classmethod
    def init(cls, layer_index, channels, mu=INIT_MU, log_lambda=INIT_LOG_LAMBDA):
        return cls(
            layer_index,
            nd.Tensor(np.full(channels, mu), requires_grad=True),
            nd.Tensor(np.full(channels, log_lambda), requires_grad=True),
        )

    @property
    def channels(self):
        return self.mu.shape[0]

    def inv_lambda(self):
        return np.exp(-self.log_lambda.data)

    def parameters(self):
        return [self.mu, self.log_lambda]


def prune_mask(gates, threshold=DEFAULT_PRUNE_THRESHOLD):
    """Boolean mask, True where the unit counts as pruned (1/lam < threshold)."""
    if not threshold > 0:
        raise ConfigError(f"prune threshold must be positive, got {threshold}")
    return gates.inv_lambda() < threshold


def gate_forward(h_tilde, gates, mode, rng=None, *, per_sample=False, prune_threshold=None):
    """Scale activations ``h_tilde`` [B x C] by the layer's gates.

    In SAMPLE mode one standard-normal draw per channel (per row when
    ``per_sample``) gives g = mu * (1 + sqrt(lam) * eps); gradients reach
    both ``mu`` and ``log_lambda`` through g. DETERMINISTIC mode uses mu,
    zeroing pruned channels when ``prune_threshold`` is given.
    """
    h_tilde = nd.as_tensor(h_tilde)
    if h_tilde.data.ndim != 2 or h_tilde.shape[1] != gates.channels:
        raise DimensionError(
            f"gate layer {gates.layer_index} has {gates.channels} channels, input shape {h_tilde.shape}"
        )
    if mode is GateMode.DETERMINISTIC:
        g = gates.mu
        if prune_threshold is not None:
            g = nd.mul(g, (~prune_mask(gates, prune_threshold)).astype(float))
        return nd.mul(h_tilde, g)
    if mode is not GateMode.SAMPLE:
        raise ConfigError(f"unknown gate mode {mode!r}")
    if rng is None:
        raise ConfigError("SAMPLE gating needs a random generator")
    shape = h_tilde.shape if per_sample else (gates.channels,)
    eps = rng.standard_normal(shape)
    std = nd.exp(nd.mul(gates.log_lambda, 0.5))
    g = nd.mul(gates.mu, nd.add(nd.mul(std, eps), 1.0))
    return nd.mul(h_tilde, g)


def vbs_loss(all_gates):
    """0.5 * sum over layers and channels of log(1 + 1/lam), as softplus(-a)."""
    if not all_gates:
        raise ConfigError("vbs_loss needs at least one gate layer")
    terms = [nd.total(nd.softplus(nd.mul(g.log_lambda, -1.0))) for g in all_gates]
    out = terms[0]
    for t in terms[1:]:
        out = nd.add(out, t)
    return nd.mul(out, 0.5)


def sparsity_report(all_gates, threshold=DEFAULT_PRUNE_THRESHOLD):
    report = []
    for g in all_gates:
        mask = prune_mask(g, threshold)
        report.append(
            {
                "layer": g.layer_index,
                "active": int((~mask).sum()),
                "pruned": int(mask.sum()),
                "mean_inv_lambda": float(g.inv_lambda().mean()),
            }
        )
    return report


def pruned_fraction(report):
    total = sum(r["active"] + r["pruned"] for r in report)
    return sum(r["pruned"] for r in report) / total if total else 0.0
