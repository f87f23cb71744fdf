"""Synthetic domain-shifted datasets, CSV persistence and paired batch sampling."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import numerics
from .seeding import data_streams, train_streams

DOMAINS = ("source", "target")


class DatasetFormatError(ValueError):
    """A dataset file could not be parsed."""


@dataclass(frozen=True)
class LabeledBatch:
    x: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        x = numerics.as_matrix(self.x, "x")
        y = np.asarray(self.y, dtype=np.intp)
        if y.shape != (x.shape[0],):
            raise ValueError(f"need {x.shape[0]} labels, got shape {y.shape}")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", y)


@dataclass(frozen=True)
class UnlabeledBatch:
    x: np.ndarray

    def __post_init__(self):
        x = numerics.as_matrix(self.x, "x")
        if x.shape[0] == 0:
            raise ValueError("unlabeled batch is empty")
        object.__setattr__(self, "x", x)


@dataclass(frozen=True)
class Dataset:
    """Inputs plus labels. Target-domain labels are kept for evaluation only;
    the training path sees target data through :class:`UnlabeledBatch`."""

    inputs: np.ndarray
    labels: np.ndarray
    domain: str = "source"
    num_categories: int | None = None

    def __post_init__(self):
        x = numerics.as_matrix(self.inputs, "inputs")
        y = np.asarray(self.labels)
        if y.shape != (x.shape[0],):
            raise ValueError(f"need {x.shape[0]} labels, got shape {y.shape}")
        if y.size and not np.all(np.equal(np.mod(y, 1), 0)):
            raise ValueError("labels must be integers")
        y = y.astype(np.intp)
        if self.domain not in DOMAINS:
            raise ValueError(f"domain must be one of {DOMAINS}, got {self.domain!r}")
        k = self.num_categories if self.num_categories is not None else int(y.max(initial=-1)) + 1
        if y.size and (y.min() < 0 or y.max() >= k):
            raise ValueError(f"labels must lie in [0, {k})")
        if k < 2 or x.shape[0] < k:
            raise ValueError(f"need K >= 2 and N >= K, got K={k}, N={x.shape[0]}")
        missing = sorted(set(range(k)) - set(np.unique(y).tolist()))
        if missing:
            raise ValueError(f"categories {missing} have no samples")
        if not np.all(np.isfinite(x)):
            raise ValueError("inputs contain NaN or Inf")
        object.__setattr__(self, "inputs", x)
        object.__setattr__(self, "labels", y)
        object.__setattr__(self, "num_categories", k)

    def __len__(self):
        return self.inputs.shape[0]

    @property
    def input_dim(self) -> int:
        return self.inputs.shape[1]

    def subset(self, index) -> "Dataset":
        return replace(self, inputs=self.inputs[index], labels=self.labels[index])

    def unlabeled(self) -> UnlabeledBatch:
        return UnlabeledBatch(self.inputs)


@dataclass(frozen=True)
class ShiftSpec:
    rotation: float = 0.0
    translation: tuple[float, ...] = ()
    scale: float = 1.0
    noise_std: float = 0.0

    def __post_init__(self):
        if not self.scale > 0:
            raise ValueError("scale must be positive")
        if self.noise_std < 0:
            raise ValueError("noise_std must be nonnegative")
        object.__setattr__(self, "translation", tuple(float(t) for t in self.translation))


def gen_two_moons(n: int, noise_std: float = 0.1, seed=None) -> Dataset:
    """Two interleaved unit half-circles, centred at (0, 0) and (1, 0.5)."""
    if n < 2:
        raise ValueError("two-moons needs n >= 2")
    rng = np.random.default_rng(seed)
    n_upper = (n + 1) // 2
    n_lower = n - n_upper
    t_up = rng.uniform(0.0, np.pi, n_upper)
    t_lo = rng.uniform(0.0, np.pi, n_lower)
    upper = np.column_stack([np.cos(t_up), np.sin(t_up)])
    lower = np.column_stack([1.0 - np.cos(t_lo), 0.5 - np.sin(t_lo)])
    x = np.vstack([upper, lower])
    y = np.concatenate([np.zeros(n_upper, np.intp), np.ones(n_lower, np.intp)])
    if noise_std > 0:
        x = x + rng.normal(0.0, noise_std, x.shape)
    order = rng.permutation(n)
    return Dataset(x[order], y[order], "source", 2)


def gen_blobs(K: int, d: int, n: int, separation: float = 5.0, noise_std: float = 1.0,
              seed=None) -> Dataset:
    """K isotropic Gaussian clusters whose centres are ``separation`` apart.

    Centres are scaled simplex vertices e_k * separation / sqrt(2), embedded in
    the first min(K, d) coordinates; for K > d they are resampled randomly and
    rescaled so the closest pair is exactly ``separation`` apart.
    """
    if K < 2 or d < 2 or n < K:
        raise ValueError(f"gen_blobs needs K >= 2, d >= 2, n >= K (got {K}, {d}, {n})")
    rng = np.random.default_rng(seed)
    if K <= d:
        centres = np.zeros((K, d))
        centres[np.arange(K), np.arange(K)] = separation / np.sqrt(2.0)
    else:
        centres = rng.normal(size=(K, d))
        diff = centres[:, None, :] - centres[None, :, :]
        dist = np.sqrt((diff ** 2).sum(-1))
        closest = dist[np.triu_indices(K, 1)].min()
        centres *= separation / closest
    y = np.arange(n) % K
    x = centres[y] + (rng.normal(0.0, noise_std, (n, d)) if noise_std > 0 else 0.0)
    order = rng.permutation(n)
    return Dataset(x[order], y[order], "source", K)


def rotation_matrix(theta: float) -> np.ndarray:
    c, s = np.cos(theta), np.sin(theta)
    return np.array([[c, -s], [s, c]])


def apply_shift(ds: Dataset, spec: ShiftSpec, seed=None) -> Dataset:
    """x -> scale * R(rotation) x + translation + noise; R acts on the first two
    coordinates. Labels are kept and the result is tagged as target."""
    x = ds.inputs.copy()
    if spec.rotation:
        x[:, :2] = x[:, :2] @ rotation_matrix(spec.rotation).T
    x = spec.scale * x
    if spec.translation:
        t = np.zeros(ds.input_dim)
        t[:len(spec.translation)] = spec.translation
        x = x + t
    if spec.noise_std > 0:
        x = x + np.random.default_rng(seed).normal(0.0, spec.noise_std, x.shape)
    return replace(ds, inputs=x, domain="target")


def train_test_split(ds: Dataset, test_fraction: float = 0.3, seed=None) -> tuple[Dataset, Dataset]:
    """Stratified split; every category keeps at least one sample on each side."""
    if not 0.0 < test_fraction < 1.0:
        raise ValueError("test_fraction must be in (0, 1)")
    rng = np.random.default_rng(seed)
    test_idx = []
    for k in range(ds.num_categories):
        members = rng.permutation(np.flatnonzero(ds.labels == k))
        if members.size < 2:
            raise ValueError(f"category {k} has too few samples to split")
        n_test = min(max(1, int(round(test_fraction * members.size))), members.size - 1)
        test_idx.append(members[:n_test])
    test = np.sort(np.concatenate(test_idx))
    train = np.setdiff1d(np.arange(len(ds)), test)
    return ds.subset(train), ds.subset(test)


@dataclass
class EpochSampler:
    """Draws fixed-size batches without replacement from a reshuffled permutation.

    A new permutation is drawn whenever fewer than ``batch_size`` unvisited
    indices remain (the remainder is dropped).
    """

    n: int
    batch_size: int
    rng: np.random.Generator
    _order: np.ndarray = field(init=False, repr=False)
    _pos: int = field(init=False, default=0)

    def __post_init__(self):
        if not 1 <= self.batch_size <= self.n:
            raise ValueError(f"batch size {self.batch_size} not in [1, {self.n}]")
        self._order = self.rng.permutation(self.n)

    def next(self) -> np.ndarray:
        if self._pos + self.batch_size > self.n:
            self._order = self.rng.permutation(self.n)
            self._pos = 0
        idx = self._order[self._pos:self._pos + self.batch_size]
        self._pos += self.batch_size
        return idx


class PairSampler:
    """One labeled source batch and one unlabeled target batch per call."""

    def __init__(self, src: Dataset, tgt: Dataset, batch_size: int, rng):
        if batch_size > min(len(src), len(tgt)):
            raise ValueError(f"batch size {batch_size} exceeds dataset size "
                             f"({len(src)} source, {len(tgt)} target)")
        rng = np.random.default_rng(rng)
        self._src = src
        self._tgt_x = tgt.inputs
        self._src_sampler = EpochSampler(len(src), batch_size, rng)
        self._tgt_sampler = EpochSampler(len(tgt), batch_size, rng)
        self.steps_per_epoch = max(len(src), len(tgt)) // batch_size

    def sample_pair(self) -> tuple[LabeledBatch, UnlabeledBatch]:
        i = self._src_sampler.next()
        j = self._tgt_sampler.next()
        return (LabeledBatch(self._src.inputs[i], self._src.labels[i]),
                UnlabeledBatch(self._tgt_x[j]))

    __call__ = sample_pair


def sample_pair(src: Dataset, tgt: Dataset, batch_size: int, rng) -> tuple[LabeledBatch, UnlabeledBatch]:
    """Single draw; use :class:`PairSampler` to keep epoch state across calls."""
    return PairSampler(src, tgt, batch_size, rng).sample_pair()


# -- CSV -----------------------------------------------------------------------

def _fmt(v: float) -> str:
    return format(float(v), ".17g")


def save_csv(ds: Dataset, path) -> None:
    path = Path(path)
    header = [f"x{i}" for i in range(ds.input_dim)] + ["label", "domain"]
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row, label in zip(ds.inputs, ds.labels):
            w.writerow([_fmt(v) for v in row] + [int(label), ds.domain])


def load_csv(path, num_categories: int | None = None) -> Dataset:
    path = Path(path)
    try:
        fh = path.open(newline="")
    except OSError as exc:
        raise DatasetFormatError(f"cannot open {path}: {exc}") from exc
    with fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header or header[-2:] != ["label", "domain"] or len(header) < 3:
            raise DatasetFormatError(f"{path}:1: expected header x0,...,label,domain")
        d = len(header) - 2
        if header[:d] != [f"x{i}" for i in range(d)]:
            raise DatasetFormatError(f"{path}:1: feature columns must be named x0..x{d - 1}")
        xs, ys, domains = [], [], set()
        for lineno, row in enumerate(reader, start=2):
            if len(row) != d + 2:
                raise DatasetFormatError(f"{path}:{lineno}: expected {d + 2} columns, got {len(row)}")
            try:
                xs.append([float(v) for v in row[:d]])
                ys.append(int(row[d]))
            except ValueError as exc:
                raise DatasetFormatError(f"{path}:{lineno}: {exc}") from exc
            if num_categories is not None and not 0 <= ys[-1] < num_categories:
                raise DatasetFormatError(
                    f"{path}:{lineno}: label {ys[-1]} outside [0, {num_categories})")
            if ys[-1] < 0:
                raise DatasetFormatError(f"{path}:{lineno}: negative label {ys[-1]}")
            domains.add(row[d + 1])
    if len(domains) > 1:
        raise DatasetFormatError(f"{path}: mixed domains {sorted(domains)}")
    domain = domains.pop() if domains else "source"
    try:
        return Dataset(np.array(xs, dtype=np.float64).reshape(-1, d), np.array(ys, dtype=np.intp),
                       domain, num_categories)
    except ValueError as exc:
        raise DatasetFormatError(f"{path}: {exc}") from exc


# -- task construction ----------------------------------------------------------

@dataclass(frozen=True)
class DatasetSpec:
    """A generated source/target pair. ``rotation_deg`` is in degrees."""

    task: str = "two-moons"
    n: int = 500
    noise_std: float = 0.1
    rotation_deg: float = 30.0
    translation: tuple[float, ...] = ()
    scale: float = 1.0
    shift_noise_std: float = 0.0
    num_categories: int = 3
    dim: int = 2
    separation: float = 5.0
    test_fraction: float = 0.3
    protocol: str = "holdout"

    def __post_init__(self):
        if self.task not in ("two-moons", "blobs"):
            raise ValueError(f"unknown task {self.task!r}")
        if self.protocol not in ("holdout", "transductive"):
            raise ValueError(f"protocol must be 'holdout' or 'transductive', got {self.protocol!r}")
        object.__setattr__(self, "translation", tuple(float(t) for t in self.translation))

    @property
    def shift(self) -> ShiftSpec:
        return ShiftSpec(np.deg2rad(self.rotation_deg), self.translation, self.scale, self.shift_noise_std)


def generate_pair(spec: DatasetSpec, seed) -> tuple[Dataset, Dataset]:
    """Source dataset and its shifted target counterpart, both drawn from ``seed``."""
    streams = data_streams(seed)
    if spec.task == "two-moons":
        draw = lambda s: gen_two_moons(spec.n, spec.noise_std, s)  # noqa: E731
    else:
        draw = lambda s: gen_blobs(spec.num_categories, spec.dim, spec.n,  # noqa: E731
                                   spec.separation, spec.noise_std, s)
    src = draw(streams["source"])
    tgt = apply_shift(draw(streams["target"]), spec.shift, streams["shift_noise"])
    return src, tgt


@dataclass(frozen=True)
class DomainSplits:
    src_train: Dataset
    tgt_train: Dataset
    src_test: Dataset
    tgt_test: Dataset


def split_domains(src: Dataset, tgt: Dataset, seed, test_fraction: float = 0.3,
                  protocol: str = "holdout") -> DomainSplits:
    """Held-out test split per domain, or the training pools themselves under
    the transductive protocol."""
    if protocol == "transductive":
        return DomainSplits(src, tgt, src, tgt)
    s_split, t_split = train_streams(seed)["split"].spawn(2)
    s_tr, s_te = train_test_split(src, test_fraction, s_split)
    t_tr, t_te = train_test_split(tgt, test_fraction, t_split)
    return DomainSplits(s_tr, t_tr, s_te, t_te)
