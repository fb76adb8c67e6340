"""Experience memory: item capture, reservoir sampling and loss-aware updates."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, DimensionError
from .vbs import GateMode


@dataclass
class MemoryItem:
    x: np.ndarray
    y: int
    z_hat: np.ndarray
    h_hat: list
    stored_loss: float
    insert_step: int
    uid: int = -1


@dataclass
class ReplayBuffer:
    capacity: int
    items: list = field(default_factory=list)
    seen_count: int = 0
    stale_refreshes: int = 0
    _next_uid: int = 0

    def __post_init__(self):
        if self.capacity <= 0:
            raise ConfigError(f"buffer capacity must be positive, got {self.capacity}")

    def __len__(self):
        return len(self.items)

    def register(self, item):
        if item.uid < 0:
            item.uid = self._next_uid
            self._next_uid += 1
        return item

    def class_counts(self):
        counts = {}
        for it in self.items:
            counts[it.y] = counts.get(it.y, 0) + 1
        return dict(sorted(counts.items()))

    def dump_jsonl(self, path, with_features=False):
        with open(Path(path), "w") as fh:
            for it in self.items:
                rec = {"y": int(it.y), "stored_loss": float(it.stored_loss), "insert_step": int(it.insert_step)}
                if with_features:
                    rec["z_hat"] = it.z_hat.tolist()
                    rec["h_hat"] = [h.tolist() for h in it.h_hat]
                fh.write(json.dumps(rec) + "\n")


def capture(model, x, y, per_sample_loss, step=0):
    """Snapshot logits and gated features of ``x`` under the current parameters.

    Runs one deterministic forward pass; the stored arrays are copies and
    carry no graph linkage. Returns one MemoryItem per row of ``x``.
    """
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    y = np.atleast_1d(np.asarray(y))
    losses = np.atleast_1d(np.asarray(per_sample_loss, dtype=np.float64))
    if not (len(x) == len(y) == len(losses)):
        raise DimensionError(f"capture: {len(x)} inputs, {len(y)} labels, {len(losses)} losses")
    trace = model.forward(x, GateMode.DETERMINISTIC)
    z = trace.logits.data
    hs = [h.data for h in trace.features]
    return [
        MemoryItem(x[i].copy(), int(y[i]), z[i].copy(), [h[i].copy() for h in hs],
                   float(losses[i]), int(step))
        for i in range(len(x))
    ]


def reservoir_update(buffer, item, rng):
    """Classic reservoir step: keep every offer until full, then each with prob M/seen."""
    buffer.seen_count += 1
    if len(buffer.items) < buffer.capacity:
        buffer.items.append(item)
        return buffer
    j = int(rng.random() * buffer.seen_count)
    if j < buffer.capacity:
        buffer.items[j] = item
    return buffer


def _sort_key(item):
    return (item.stored_loss, item.insert_step, item.y, item.uid)


def _stride_pick(n, q):
    return [math.floor(i * n / q) for i in range(q)]


def lrs_select(candidates, capacity):
    """Class-balanced, loss-diverse subset of ``candidates`` of size <= capacity.

    Every class present gets quota capacity // R. Within a class the
    candidates are sorted by stored loss and picked at a fixed stride
    starting from the lowest loss. Quota a class cannot fill, plus the
    division remainder, is handed out one slot at a time to classes in
    descending candidate count; a class granted extra slots re-strides
    with its enlarged quota.
    """
    by_class = {}
    for it in candidates:
        by_class.setdefault(it.y, []).append(it)
    classes = sorted(by_class)
    for c in classes:
        by_class[c].sort(key=_sort_key)
    base = capacity // len(classes)
    quota = {c: min(base, len(by_class[c])) for c in classes}
    leftover = capacity - sum(quota.values())
    order = sorted(classes, key=lambda c: (-len(by_class[c]), c))
    while leftover > 0:
        granted = False
        for c in order:
            if leftover == 0:
                break
            if quota[c] < len(by_class[c]):
                quota[c] += 1
                leftover -= 1
                granted = True
        if not granted:
            break
    selected = []
    for c in classes:
        pool = by_class[c]
        selected += [pool[i] for i in _stride_pick(len(pool), quota[c])]
    return selected


def lrs_update(buffer, batch_items, capacity=None):
    """Loss-aware memory update with the full incoming ``batch_items`` as the store set."""
    m = buffer.capacity if capacity is None else capacity
    if m <= 0:
        raise ConfigError(f"memory size must be positive, got {m}")
    buffer.seen_count += len(batch_items)
    if len(buffer.items) < m:
        room = m - len(buffer.items)
        buffer.items.extend(batch_items[:room])
        return buffer
    if not batch_items:
        return buffer
    buffer.items = lrs_select(buffer.items + list(batch_items), m)
    return buffer


def sample_replay_batch(buffer, n, rng):
    """``n`` items drawn uniformly; None when the buffer is empty (no replay this step)."""
    if not buffer.items or n <= 0:
        return None
    size = len(buffer.items)
    idx = rng.choice(size, size=n, replace=n > size)
    return [buffer.items[i] for i in idx]


def refresh_loss(buffer, item_ids, new_losses):
    """Overwrite stored losses by uid; ids no longer in the buffer are counted and skipped."""
    index = {it.uid: it for it in buffer.items}
    for uid, loss in zip(item_ids, new_losses):
        it = index.get(uid)
        if it is None:
            buffer.stale_refreshes += 1
            continue
        it.stored_loss = float(loss)


def stack_items(items):
    """Batch arrays (x, y, z_hat, [h_hat per layer]) from a list of MemoryItems."""
    x = np.stack([it.x for it in items])
    y = np.array([it.y for it in items], dtype=np.int64)
    z = np.stack([it.z_hat for it in items])
    n_layers = len(items[0].h_hat)
    hs = [np.stack([it.h_hat[l] for it in items]) for l in range(n_layers)]
    return x, y, z, hs

