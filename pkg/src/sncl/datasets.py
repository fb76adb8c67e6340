"""IDX ingestion and continual-learning stream builders.

All builders are pure functions of their inputs and seed. A stream is a
list of phases; each phase carries its training samples already in
presentation order, a test split and, for split streams, its class set.
"""

from __future__ import annotations

import gzip
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, ParseError

IMAGE_MAGIC = 0x00000803
LABEL_MAGIC = 0x00000801
DATA_ENV = "SNCL_DATA_DIR"
BUNDLED_DIR = Path(__file__).parent / "data"
BUNDLED_IMAGES = "mnist5k-images-idx3-ubyte.gz"
BUNDLED_LABELS = "mnist5k-labels-idx1-ubyte.gz"
OFFICIAL_FILES = {
    "train": ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
    "test": ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
}


@dataclass(frozen=True)
class LabeledSet:
    inputs: np.ndarray  # [N x D], values in [0, 1]
    labels: np.ndarray  # [N] int64

    def __post_init__(self):
        if len(self.inputs) != len(self.labels):
            raise ConfigError(f"{len(self.inputs)} inputs but {len(self.labels)} labels")

    def __len__(self):
        return len(self.labels)

    @property
    def dim(self):
        return self.inputs.shape[1]

    def subset(self, idx):
        idx = np.asarray(idx, dtype=np.int64)
        return LabeledSet(self.inputs[idx], self.labels[idx])

    def of_classes(self, classes):
        return self.subset(np.flatnonzero(np.isin(self.labels, list(classes))))


@dataclass
class Phase:
    name: str
    train: LabeledSet
    test: LabeledSet | None
    classes: tuple | None = None
    boundary: bool = True


@dataclass
class TaskStream:
    protocol: str
    setting: str  # class_il | task_il | domain_il | gcl
    phases: list = field(default_factory=list)
    num_classes: int = 10
    test_splits: list | None = None  # boundary-free streams evaluate on these instead

    @property
    def boundary_free(self):
        return not any(p.boundary for p in self.phases)

    def eval_splits(self):
        """(name, LabeledSet, class set) for every split that gets scored."""
        if self.test_splits is not None:
            return list(self.test_splits)
        return [(p.name, p.test, p.classes) for p in self.phases]


# --------------------------------------------------------------------- IDX

def _open_bytes(path):
    path = Path(path)
    raw = path.read_bytes()
    if raw[:2] == b"\x1f\x8b":
        raw = gzip.decompress(raw)
    return raw


def _parse_idx(raw, expected_magic, what):
    if len(raw) < 8:
        raise ParseError(f"{what}: header truncated", len(raw))
    magic, count = struct.unpack(">II", raw[:8])
    if magic != expected_magic:
        raise ParseError(f"{what}: bad magic 0x{magic:08x}, expected 0x{expected_magic:08x}", 0)
    ndim = magic & 0xFF
    header = 4 + 4 * ndim
    if len(raw) < header:
        raise ParseError(f"{what}: dimension header truncated", len(raw))
    dims = struct.unpack(f">{ndim}I", raw[4:header])
    need = int(np.prod(dims))
    if len(raw) - header < need:
        raise ParseError(f"{what}: expected {need} payload bytes, found {len(raw) - header}", len(raw))
    if len(raw) - header > need:
        raise ParseError(f"{what}: {len(raw) - header - need} trailing bytes", header + need)
    assert dims[0] == count
    return np.frombuffer(raw, dtype=np.uint8, count=need, offset=header).reshape(dims)


def load_idx(images_path, labels_path):
    """Read an IDX image/label pair (optionally gzip'd) into a LabeledSet."""
    images = _parse_idx(_open_bytes(images_path), IMAGE_MAGIC, str(images_path))
    labels = _parse_idx(_open_bytes(labels_path), LABEL_MAGIC, str(labels_path))
    if len(images) != len(labels):
        raise ParseError(f"{len(images)} images but {len(labels)} labels", 4)
    flat = images.reshape(len(images), -1).astype(np.float64) / 255.0
    return LabeledSet(flat, labels.astype(np.int64))


def encode_idx(array):
    """Serialize a uint8 array (1-D labels or 3-D images) as IDX bytes."""
    array = np.asarray(array, dtype=np.uint8)
    magic = 0x00000800 | array.ndim
    header = struct.pack(">I", magic) + struct.pack(f">{array.ndim}I", *array.shape)
    return header + array.tobytes()


def write_idx(path, array, compress=None):
    data = encode_idx(array)
    path = Path(path)
    if compress or (compress is None and path.suffix == ".gz"):
        data = gzip.compress(data, mtime=0)
    path.write_bytes(data)


def _find(directory, stem):
    for name in (stem, stem + ".gz"):
        p = Path(directory) / name
        if p.exists():
            return p
    return None


def load_official_mnist(directory=None):
    """(train, test) from the standard 60k/10k IDX files under ``directory`` or $SNCL_DATA_DIR."""
    directory = directory or os.environ.get(DATA_ENV)
    if not directory:
        raise ConfigError(f"set {DATA_ENV} to a directory holding the MNIST IDX files")
    sets = []
    for split in ("train", "test"):
        paths = [_find(directory, stem) for stem in OFFICIAL_FILES[split]]
        if None in paths:
            raise ConfigError(f"MNIST {split} files not found in {directory}")
        sets.append(load_idx(*paths))
    return tuple(sets)


def load_mnist_subset(per_class_test=100):
    """Bundled 5,000-image MNIST subset split into (train, test), class-stratified.

    The first ``500 - per_class_test`` images of each digit go to train,
    the rest to test.
    """
    full = load_idx(BUNDLED_DIR / BUNDLED_IMAGES, BUNDLED_DIR / BUNDLED_LABELS)
    train_idx, test_idx = [], []
    for c in range(10):
        idx = np.flatnonzero(full.labels == c)
        cut = len(idx) - per_class_test
        train_idx.append(idx[:cut])
        test_idx.append(idx[cut:])
    return full.subset(np.concatenate(train_idx)), full.subset(np.concatenate(test_idx))


def load_mnist(scale="reduced"):
    """Official MNIST when available (required for ``scale='full'``), else the bundled subset."""
    if scale == "full":
        return load_official_mnist()
    if os.environ.get(DATA_ENV) and _find(os.environ[DATA_ENV], OFFICIAL_FILES["train"][0]):
        return load_official_mnist()
    return load_mnist_subset()


# ------------------------------------------------------------------ streams

def _take(data, n, rng):
    if n is None or n >= len(data):
        return data.subset(rng.permutation(len(data)))
    return data.subset(rng.permutation(len(data))[:n])


def permutations(T, dim, seed, first_identity=True):
    rng = np.random.default_rng(seed)
    perms = []
    for t in range(T):
        perms.append(np.arange(dim) if (t == 0 and first_identity) else rng.permutation(dim))
    return perms


def build_pmnist(train, test, T, seed, *, train_per_task=None, test_per_task=None, first_identity=True):
    """Domain-IL stream: task t shows every image under a fixed pixel permutation."""
    if T < 1:
        raise ConfigError("need at least one task")
    perms = permutations(T, train.dim, seed, first_identity)
    rng = np.random.default_rng([seed, 1])
    phases = []
    for t, perm in enumerate(perms):
        tr = _take(train, train_per_task, rng)
        te = test if test_per_task is None else _take(test, test_per_task, rng)
        phases.append(Phase(f"task{t + 1}", LabeledSet(tr.inputs[:, perm], tr.labels),
                            LabeledSet(te.inputs[:, perm], te.labels)))
    return TaskStream("pmnist", "domain_il", phases, num_classes=10)


def rotate_images(images, angle, side=28):
    """Rotate flattened square images by ``angle`` radians about the centre.

    Inverse mapping with bilinear interpolation; samples falling outside
    the source read as zero.
    """
    images = np.asarray(images, dtype=np.float64)
    flat = images.ndim == 2
    imgs = images.reshape(-1, side, side)
    c = (side - 1) / 2.0
    yy, xx = np.mgrid[0:side, 0:side].astype(np.float64)
    cos, sin = np.cos(angle), np.sin(angle)
    # source position for each destination pixel (rotation by -angle)
    xs = cos * (xx - c) + sin * (yy - c) + c
    ys = -sin * (xx - c) + cos * (yy - c) + c
    x0, y0 = np.floor(xs).astype(int), np.floor(ys).astype(int)
    fx, fy = xs - x0, ys - y0
    padded = np.pad(imgs, ((0, 0), (1, 1), (1, 1)))

    def at(yi, xi):
        yi = np.clip(yi + 1, 0, side + 1)
        xi = np.clip(xi + 1, 0, side + 1)
        return padded[:, yi, xi]

    out = (at(y0, x0) * ((1 - fx) * (1 - fy)) + at(y0, x0 + 1) * (fx * (1 - fy))
           + at(y0 + 1, x0) * ((1 - fx) * fy) + at(y0 + 1, x0 + 1) * (fx * fy))
    # anything sampled from beyond the one-pixel zero border is also zero
    outside = (xs < -1) | (xs > side) | (ys < -1) | (ys > side)
    out[:, outside] = 0.0
    out = np.clip(out, 0.0, 1.0)
    return out.reshape(len(imgs), -1) if flat else out.reshape(images.shape)


def build_rmnist(train, test, T, seed, *, train_per_task=None, test_per_task=None, angles=None):
    """Domain-IL stream: task t rotates every image by a fixed angle drawn from [0, pi)."""
    if T < 1:
        raise ConfigError("need at least one task")
    rng = np.random.default_rng(seed)
    if angles is None:
        angles = rng.uniform(0.0, np.pi, size=T)
    phases = []
    for t, a in enumerate(angles):
        tr = _take(train, train_per_task, rng)
        te = test if test_per_task is None else _take(test, test_per_task, rng)
        phases.append(Phase(f"task{t + 1}", LabeledSet(rotate_images(tr.inputs, a), tr.labels),
                            LabeledSet(rotate_images(te.inputs, a), te.labels)))
    stream = TaskStream("rmnist", "domain_il", phases, num_classes=10)
    stream.angles = [float(a) for a in angles]
    return stream


def build_split(train, test, tasks, seed=0, *, setting="class_il", train_per_task=None, protocol="split"):
    """One phase per class set; class sets must be disjoint."""
    seen = set()
    for cs in tasks:
        overlap = seen & set(cs)
        if overlap:
            raise ConfigError(f"class sets overlap on {sorted(overlap)}")
        seen |= set(cs)
    rng = np.random.default_rng(seed)
    phases = []
    for t, cs in enumerate(tasks):
        cs = tuple(sorted(int(c) for c in cs))
        tr = _take(train.of_classes(cs), train_per_task, rng)
        phases.append(Phase(f"task{t + 1}", tr, test.of_classes(cs), classes=cs))
    k = max(int(train.labels.max()), int(test.labels.max())) + 1
    return TaskStream(protocol, setting, phases, num_classes=k)


MNIST360_PAIRS = tuple((d, (d + 1) % 9) for d in range(9))


def build_mnist360(train, test, seed, *, per_pair=500, batch_size=16, test_per_class=None):
    """Boundary-free stream over the consecutive digit pairs (0,1), (1,2), ..., (8,0).

    Each digit occurs in two pairs; across its appearances its rotation
    angle rises linearly from 0 toward 2*pi. Each pair contributes
    ``per_pair`` samples, alternating the two digits so every batch mixes
    both. The test split holds digits 0-8 at uniformly random angles.
    """
    rng = np.random.default_rng(seed)
    per_digit = per_pair // 2
    total = {d: 0 for d in range(9)}
    for a, b in MNIST360_PAIRS:
        total[a] += per_digit
        total[b] += per_digit
    pools = {d: rng.permutation(np.flatnonzero(train.labels == d)) for d in range(9)}
    used = {d: 0 for d in range(9)}
    phases = []
    for a, b in MNIST360_PAIRS:
        xs, ys = [], []
        for d in (a, b):
            k = used[d] + np.arange(per_digit)
            idx = pools[d][k % len(pools[d])]
            angles = 2 * np.pi * k / total[d]
            xs.append(np.stack([rotate_images(train.inputs[i:i + 1], ang)[0] for i, ang in zip(idx, angles)]))
            ys.append(np.full(per_digit, d))
            used[d] += per_digit
        # alternate a, b, a, b ... so each batch carries both digits
        x = np.empty((2 * per_digit, train.dim))
        y = np.empty(2 * per_digit, dtype=np.int64)
        x[0::2], x[1::2] = xs
        y[0::2], y[1::2] = ys
        phases.append(Phase(f"pair{a}{b}", LabeledSet(x, y), None, classes=(a, b), boundary=False))
    te = test.of_classes(range(9))
    if test_per_class is not None:
        te = te.subset(np.concatenate([np.flatnonzero(te.labels == d)[:test_per_class] for d in range(9)]))
    test_angles = rng.uniform(0.0, 2 * np.pi, size=len(te))
    te_rot = np.stack([rotate_images(te.inputs[i:i + 1], a)[0] for i, a in enumerate(test_angles)])
    stream = TaskStream("mnist360", "gcl", phases, num_classes=9,
                        test_splits=[("digits0-8", LabeledSet(te_rot, te.labels), None)])
    return stream


def synth_blobs(K, per_class, D, spread, seed):
    """Gaussian clusters around seeded centres, clipped into [0, 1]."""
    if K < 2:
        raise ConfigError("synth_blobs needs K >= 2")
    rng = np.random.default_rng(seed)
    centres = rng.uniform(0.2, 0.8, size=(K, D))
    x = np.concatenate([centres[k] + spread * rng.standard_normal((per_class, D)) for k in range(K)])
    y = np.repeat(np.arange(K), per_class)
    order = rng.permutation(len(y))
    return LabeledSet(np.clip(x[order], 0.0, 1.0), y[order].astype(np.int64))


def blobs_split_stream(seed, *, K=4, per_class=200, D=20, spread=0.15, tasks=None, test_fraction=0.25):
    """Class-incremental stream over synthetic blobs, two classes per task by default."""
    tasks = tasks or [tuple(range(i, min(i + 2, K))) for i in range(0, K, 2)]
    data = synth_blobs(K, per_class, D, spread, seed)
    n_test = int(len(data) * test_fraction)
    train, test = data.subset(np.arange(n_test, len(data))), data.subset(np.arange(n_test))
    return build_split(train, test, tasks, seed, protocol="blobs")
