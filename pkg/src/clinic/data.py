"""Synthetic fairness datasets with a controllable class/group coupling.

The generator draws the class label uniformly, draws the sensitive group from
a rho-coupled conditional (rho=0 gives exact independence, rho=1 with equal
cardinalities ties s to y), and emits Gaussian features around per-(y, s)
means. Because the (Y, S) joint and the feature densities are closed form,
every information quantity of the generated world can be cross-checked
exactly. CSV ingestion and seeded batch sampling round out the module.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

SPLIT_NAMES = ("train", "dev", "test")


@dataclass(frozen=True)
class LabeledExample:
    features: np.ndarray
    y: int
    s: int


@dataclass(frozen=True)
class SynthConfig:
    """Generator settings; ``means`` maps (y, s) to a length-``dim`` vector.

    When ``means`` is omitted, a default geometry is built where class
    information and group information live in disjoint one-hot feature blocks
    (dims [0, num_classes) for y, the next num_sensitive dims for s), which
    keeps the task solvable without the sensitive signal.
    """

    num_classes: int = 2
    num_sensitive: int = 2
    rho: float = 0.8
    dim: int = 6
    noise_sigma: float = 1.0
    n: int = 20_000
    seed: int = 0
    class_scale: float = 2.2
    group_scale: float = 2.2
    means: dict[tuple[int, int], np.ndarray] = field(default=None, repr=False)

    def __post_init__(self):
        if self.num_classes < 2 or self.num_sensitive < 2:
            raise ValueError("need at least two classes and two sensitive groups")
        if not 0.0 <= self.rho <= 1.0:
            raise ValueError(f"rho must be in [0, 1], got {self.rho}")
        if self.noise_sigma <= 0.0:
            raise ValueError(f"noise_sigma must be positive, got {self.noise_sigma}")
        if self.dim < 1 or self.n < 1:
            raise ValueError("dim and n must be positive")
        means = self.means
        if means is None:
            if self.dim < self.num_classes + self.num_sensitive:
                raise ValueError(
                    f"dim={self.dim} too small for default means over "
                    f"{self.num_classes} classes + {self.num_sensitive} groups"
                )
            means = {}
            for y in range(self.num_classes):
                for s in range(self.num_sensitive):
                    mu = np.zeros(self.dim)
                    mu[y] = self.class_scale
                    mu[self.num_classes + s] = self.group_scale
                    means[(y, s)] = mu
        else:
            means = {k: np.asarray(v, dtype=np.float64) for k, v in means.items()}
        expected = {(y, s) for y in range(self.num_classes) for s in range(self.num_sensitive)}
        if set(means) != expected:
            raise ValueError("means must cover exactly num_classes x num_sensitive keys")
        for k, v in means.items():
            if v.shape != (self.dim,):
                raise ValueError(f"mean for {k} has shape {v.shape}, expected ({self.dim},)")
        object.__setattr__(self, "means", means)

    def to_dict(self) -> dict:
        d = {
            "num_classes": self.num_classes,
            "num_sensitive": self.num_sensitive,
            "rho": self.rho,
            "dim": self.dim,
            "noise_sigma": self.noise_sigma,
            "n": self.n,
            "seed": self.seed,
            "class_scale": self.class_scale,
            "group_scale": self.group_scale,
            "means": {f"{y},{s}": [float(v) for v in mu] for (y, s), mu in self.means.items()},
        }
        return d

    @classmethod
    def from_dict(cls, d: dict) -> SynthConfig:
        d = dict(d)
        means = d.pop("means", None)
        if means is not None:
            means = {
                tuple(int(t) for t in k.split(",")): np.asarray(v, dtype=np.float64)
                for k, v in means.items()
            }
        return cls(means=means, **d)


def ys_joint(cfg: SynthConfig) -> np.ndarray:
    """Exact P(Y=y, S=s) of the generator, a (num_classes, num_sensitive) table."""
    table = np.zeros((cfg.num_classes, cfg.num_sensitive))
    for y in range(cfg.num_classes):
        for s in range(cfg.num_sensitive):
            match = s == y % cfg.num_sensitive
            table[y, s] = (1.0 - cfg.rho) / cfg.num_sensitive + (cfg.rho if match else 0.0)
    return table / cfg.num_classes


@dataclass(frozen=True)
class Dataset:
    """Immutable columnar dataset with disjoint train/dev/test splits."""

    features: np.ndarray  # (n, dim) float64
    y: np.ndarray  # (n,) int64
    s: np.ndarray  # (n,) int64
    split: np.ndarray  # (n,) int64 indexing SPLIT_NAMES

    def __post_init__(self):
        for name in ("features", "y", "s", "split"):
            arr = getattr(self, name)
            arr.setflags(write=False)
        if not (len(self.features) == len(self.y) == len(self.s) == len(self.split)):
            raise ValueError("column lengths differ")

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    @property
    def num_classes(self) -> int:
        return int(self.y.max()) + 1

    @property
    def num_sensitive(self) -> int:
        return int(self.s.max()) + 1

    def indices(self, split: str) -> np.ndarray:
        return np.flatnonzero(self.split == SPLIT_NAMES.index(split))

    def subset(self, split: str) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        idx = self.indices(split)
        return self.features[idx], self.y[idx], self.s[idx]

    def examples(self) -> list[LabeledExample]:
        return [
            LabeledExample(self.features[i], int(self.y[i]), int(self.s[i]))
            for i in range(len(self.y))
        ]

    def train_marginals(self) -> dict:
        _, y, s = self.subset("train")
        return {
            "y": np.bincount(y, minlength=self.num_classes) / len(y),
            "s": np.bincount(s, minlength=self.num_sensitive) / len(s),
        }


def assign_splits(n: int, train_frac: float = 0.8, dev_frac: float = 0.1) -> np.ndarray:
    """Contiguous 80/10/10 split tags (rows are i.i.d. by construction)."""
    split = np.full(n, SPLIT_NAMES.index("test"), dtype=np.int64)
    n_train = int(round(n * train_frac))
    n_dev = int(round(n * dev_frac))
    split[:n_train] = SPLIT_NAMES.index("train")
    split[n_train:n_train + n_dev] = SPLIT_NAMES.index("dev")
    return split


def generate(cfg: SynthConfig) -> Dataset:
    """Sample a dataset from the generator; bit-reproducible given the seed."""
    rng = np.random.default_rng(cfg.seed)
    y = rng.integers(0, cfg.num_classes, size=cfg.n)
    matched = y % cfg.num_sensitive
    uniform_draw = rng.integers(0, cfg.num_sensitive, size=cfg.n)
    use_match = rng.random(cfg.n) < cfg.rho
    s = np.where(use_match, matched, uniform_draw)
    mean_table = np.stack(
        [np.stack([cfg.means[(yy, ss)] for ss in range(cfg.num_sensitive)])
         for yy in range(cfg.num_classes)]
    )
    features = mean_table[y, s] + rng.normal(0.0, cfg.noise_sigma, size=(cfg.n, cfg.dim))
    return Dataset(features=features, y=y, s=s, split=assign_splits(cfg.n))


class CsvFormatError(ValueError):
    """A malformed dataset CSV; the message carries the 1-based line number."""


def write_csv(ds: Dataset, path) -> None:
    dim = ds.dim
    header = ",".join([f"f{d}" for d in range(dim)] + ["y", "s"])
    with open(path, "w") as fh:
        fh.write(header + "\n")
        for i in range(len(ds.y)):
            feats = ",".join(repr(float(v)) for v in ds.features[i])
            fh.write(f"{feats},{ds.y[i]},{ds.s[i]}\n")


def load_csv(path) -> Dataset:
    """Parse a `f0,..,f{D-1},y,s` CSV, preserving row order; 80/10/10 splits."""
    with open(path) as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise CsvFormatError("line 1: empty file")
    header = lines[0].split(",")
    if len(header) < 3 or header[-2:] != ["y", "s"]:
        missing = [c for c in ("y", "s") if c not in header[-2:]]
        raise CsvFormatError(
            f"line 1: header must end with 'y,s' (missing {missing or header[-2:]})"
        )
    dim = len(header) - 2
    expected = [f"f{d}" for d in range(dim)]
    if header[:dim] != expected:
        raise CsvFormatError(f"line 1: feature columns {header[:dim]} != {expected}")
    feats, ys, ss = [], [], []
    for lineno, line in enumerate(lines[1:], start=2):
        cells = line.split(",")
        if len(cells) != dim + 2:
            raise CsvFormatError(f"line {lineno}: expected {dim + 2} cells, got {len(cells)}")
        try:
            feats.append([float(c) for c in cells[:dim]])
        except ValueError as err:
            raise CsvFormatError(f"line {lineno}: non-numeric feature cell ({err})") from None
        for name, cell in zip(("y", "s"), cells[dim:]):
            if not cell.lstrip("-").isdigit():
                raise CsvFormatError(f"line {lineno}: column '{name}' must be an integer, got {cell!r}")
        ys.append(int(cells[dim]))
        ss.append(int(cells[dim + 1]))
    if not ys:
        raise CsvFormatError("line 2: no data rows")
    features = np.asarray(feats, dtype=np.float64)
    return Dataset(
        features=features,
        y=np.asarray(ys, dtype=np.int64),
        s=np.asarray(ss, dtype=np.int64),
        split=assign_splits(len(ys)),
    )


@dataclass(frozen=True)
class Batch:
    features: np.ndarray
    y: np.ndarray
    s: np.ndarray
    indices: np.ndarray


def sample_batch(ds: Dataset, batch_size: int, rng: np.random.Generator,
                 split: str = "train") -> Batch:
    """Sample ``batch_size`` rows without replacement from a split."""
    idx = ds.indices(split)
    if batch_size > len(idx):
        raise ValueError(
            f"batch_size {batch_size} exceeds {split} split size {len(idx)}"
        )
    take = rng.choice(idx, size=batch_size, replace=False)
    return Batch(
        features=ds.features[take], y=ds.y[take], s=ds.s[take], indices=take
    )
