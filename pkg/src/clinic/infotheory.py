"""Exact information-theoretic quantities on finite discrete joints.

All quantities are in nats. A :class:`DiscreteJoint` is a dense probability
table over named axes; mutual information, conditional mutual information and
interaction information are computed by direct summation with the 0*log(0)=0
convention, so they serve as oracles for everything the training loop
estimates. Latent discretization (quantile binning) and the closed-form
binned joint of the synthetic generator bridge continuous representations to
these oracles.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .data import SynthConfig, ys_joint


@dataclass(frozen=True)
class DiscreteJoint:
    """A dense joint distribution over named finite axes."""

    names: tuple[str, ...]
    probs: np.ndarray

    def __post_init__(self):
        probs = np.asarray(self.probs, dtype=np.float64)
        object.__setattr__(self, "probs", probs)
        object.__setattr__(self, "names", tuple(self.names))
        if probs.ndim != len(self.names):
            raise ValueError(
                f"{probs.ndim}-d table does not match axes {self.names}"
            )
        if np.any(probs < -1e-15):
            raise ValueError("negative probability in joint")
        total = probs.sum()
        if abs(total - 1.0) > 1e-12:
            raise ValueError(f"joint sums to {total!r}, not 1")

    def axis(self, name: str) -> int:
        return self.names.index(name)

    def marginal(self, *names: str) -> DiscreteJoint:
        """Marginalize onto the given axes, preserving their order here."""
        keep = [self.axis(n) for n in names]
        drop = tuple(i for i in range(self.probs.ndim) if i not in keep)
        table = self.probs.sum(axis=drop) if drop else self.probs
        table = np.moveaxis(table, [sorted(keep).index(k) for k in keep], range(len(keep)))
        return DiscreteJoint(names, table / table.sum())

    def condition(self, name: str, value: int) -> tuple[float, np.ndarray]:
        """Weight p(name=value) and the renormalized table over remaining axes."""
        ax = self.axis(name)
        slice_ = np.take(self.probs, value, axis=ax)
        weight = float(slice_.sum())
        if weight <= 0.0:
            return 0.0, np.zeros_like(slice_)
        return weight, slice_ / weight

    def to_dict(self) -> dict:
        return {
            "axes": [[n, int(c)] for n, c in zip(self.names, self.probs.shape)],
            "probs": [float(v) for v in self.probs.reshape(-1)],
        }

    @classmethod
    def from_dict(cls, d: dict) -> DiscreteJoint:
        names = tuple(a[0] for a in d["axes"])
        shape = tuple(int(a[1]) for a in d["axes"])
        return cls(names, np.asarray(d["probs"], dtype=np.float64).reshape(shape))


def mi_from_table(table: np.ndarray) -> float:
    """I(A;B) of a 2-d probability table by direct summation, in nats."""
    p = np.asarray(table, dtype=np.float64)
    if p.ndim != 2:
        raise ValueError(f"need a 2-d table, got shape {p.shape}")
    pa = p.sum(axis=1, keepdims=True)
    pb = p.sum(axis=0, keepdims=True)
    mask = p > 0.0
    ratio = np.ones_like(p)
    np.divide(p, pa * pb, out=ratio, where=mask)
    return float(np.sum(np.where(mask, p * np.log(ratio), 0.0)))


def exact_mi(joint: DiscreteJoint, a: str | None = None, b: str | None = None) -> float:
    """Mutual information between two axes of a joint (the only two if unnamed)."""
    if a is None and b is None:
        if len(joint.names) != 2:
            raise ValueError(f"joint has axes {joint.names}; name the two of interest")
        table = joint.probs
    else:
        table = joint.marginal(a, b).probs
    return mi_from_table(table)


def conditional_mi(joint: DiscreteJoint, a: str = "z", b: str = "s", given: str = "y") -> float:
    """I(A;B|C) = sum_c p(c) I(A;B | C=c), by conditioning and averaging."""
    reduced = joint.marginal(a, b, given)
    out = 0.0
    for value in range(reduced.probs.shape[2]):
        weight, cond = reduced.condition(given, value)
        if weight > 0.0:
            out += weight * mi_from_table(cond)
    return out


def interaction_info(joint: DiscreteJoint, a: str = "z", b: str = "s", given: str = "y") -> float:
    """I(A;B;C) = I(A;B) - I(A;B|C); may be negative."""
    return exact_mi(joint, a, b) - conditional_mi(joint, a, b, given)


def quantile_edges(values: np.ndarray, bins_per_dim: int) -> np.ndarray:
    """Interior quantile cut points (bins_per_dim - 1 of them) of a 1-d sample."""
    qs = np.arange(1, bins_per_dim) / bins_per_dim
    return np.quantile(np.asarray(values, dtype=np.float64), qs)


def discretize_latents(
    z: np.ndarray,
    bins_per_dim: int,
    dims_used: int,
    edges: list[np.ndarray] | None = None,
) -> np.ndarray:
    """Composite quantile-bin ids over the first ``dims_used`` latent columns.

    The composite id is bin_0 + bins*bin_1 + bins^2*bin_2 + ... so ids range
    over [0, bins_per_dim ** dims_used). Pass ``edges`` (one array of interior
    cut points per used dimension) to bin against fixed thresholds instead of
    the sample's own quantiles.
    """
    if bins_per_dim < 2:
        raise ValueError(f"bins_per_dim must be >= 2, got {bins_per_dim}")
    z = np.asarray(z, dtype=np.float64)
    dims_used = min(dims_used, z.shape[1])
    ids = np.zeros(z.shape[0], dtype=np.int64)
    for d in range(dims_used):
        cuts = edges[d] if edges is not None else quantile_edges(z[:, d], bins_per_dim)
        b = np.searchsorted(cuts, z[:, d], side="right")
        ids += b * bins_per_dim**d
    return ids


def empirical_joint(
    zbin: np.ndarray,
    s: np.ndarray,
    y: np.ndarray,
    num_bins: int | None = None,
    num_s: int | None = None,
    num_y: int | None = None,
) -> DiscreteJoint:
    """Normalized count table over (zbin, s, y) samples."""
    zbin = np.asarray(zbin, dtype=np.int64)
    s = np.asarray(s, dtype=np.int64)
    y = np.asarray(y, dtype=np.int64)
    if not (len(zbin) == len(s) == len(y)) or len(zbin) == 0:
        raise ValueError("zbin, s, y must be equally sized and non-empty")
    nb = num_bins if num_bins is not None else int(zbin.max()) + 1
    ns = num_s if num_s is not None else int(s.max()) + 1
    ny = num_y if num_y is not None else int(y.max()) + 1
    counts = np.zeros((nb, ns, ny), dtype=np.float64)
    np.add.at(counts, (zbin, s, y), 1.0)
    return DiscreteJoint(("z", "s", "y"), counts / counts.sum())


def gaussian_cdf(x: float) -> float:
    return 0.5 * (1.0 + math.erf(x / math.sqrt(2.0)))


def _mixture_cdf(cfg: SynthConfig, dim: int, t: float) -> float:
    """CDF at t of the generator's marginal feature distribution on one dimension."""
    weights = ys_joint(cfg)
    total = 0.0
    for yy in range(cfg.num_classes):
        for ss in range(cfg.num_sensitive):
            mu = float(cfg.means[(yy, ss)][dim])
            total += weights[yy, ss] * gaussian_cdf((t - mu) / cfg.noise_sigma)
    return total


def population_quantile_edges(
    cfg: SynthConfig, dims_used: int, bins_per_dim: int
) -> list[np.ndarray]:
    """Population quantile cut points of the generator's feature mixture."""
    edges = []
    mus = [cfg.means[(yy, ss)] for yy in range(cfg.num_classes) for ss in range(cfg.num_sensitive)]
    for d in range(dims_used):
        lo = min(float(m[d]) for m in mus) - 12.0 * cfg.noise_sigma
        hi = max(float(m[d]) for m in mus) + 12.0 * cfg.noise_sigma
        cuts = []
        for k in range(1, bins_per_dim):
            target = k / bins_per_dim
            a, b = lo, hi
            for _ in range(200):
                mid = 0.5 * (a + b)
                if _mixture_cdf(cfg, d, mid) < target:
                    a = mid
                else:
                    b = mid
            cuts.append(0.5 * (a + b))
        edges.append(np.asarray(cuts))
    return edges


def analytic_bin_joint(
    cfg: SynthConfig,
    bins_per_dim: int,
    dims_used: int,
    edges: list[np.ndarray] | None = None,
) -> DiscreteJoint:
    """Exact joint over (feature-bin, s, y) for the synthetic generator.

    Features are conditionally Gaussian with diagonal covariance, so the bin
    probabilities factor into per-dimension CDF differences. Defaults to the
    population quantile edges, matching what ``discretize_latents`` converges
    to on a large sample.
    """
    if bins_per_dim < 2:
        raise ValueError(f"bins_per_dim must be >= 2, got {bins_per_dim}")
    dims_used = min(dims_used, cfg.dim)
    if edges is None:
        edges = population_quantile_edges(cfg, dims_used, bins_per_dim)
    weights = ys_joint(cfg)
    nb = bins_per_dim**dims_used
    table = np.zeros((nb, cfg.num_sensitive, cfg.num_classes))
    for yy in range(cfg.num_classes):
        for ss in range(cfg.num_sensitive):
            per_dim = []
            for d in range(dims_used):
                mu = float(cfg.means[(yy, ss)][d])
                cdf = [0.0]
                cdf += [gaussian_cdf((c - mu) / cfg.noise_sigma) for c in edges[d]]
                cdf.append(1.0)
                per_dim.append(np.diff(np.asarray(cdf)))
            probs = per_dim[0]
            for d in range(1, dims_used):
                # composite id uses stride bins^d for dimension d
                probs = np.outer(per_dim[d], probs).reshape(-1)
            table[:, ss, yy] = weights[yy, ss] * probs
    return DiscreteJoint(("z", "s", "y"), table / table.sum())


@dataclass(frozen=True)
class BoundReport:
    """One evaluation of the batch-level lower-bound inequality."""

    p0: float
    p1: float
    batch_size: int
    reg_over_batch: float
    lhs: float
    rhs: float
    holds: bool

    def to_dict(self) -> dict:
        return {
            "p0": self.p0,
            "p1": self.p1,
            "batch_size": self.batch_size,
            "reg_over_batch": self.reg_over_batch,
            "lhs": self.lhs,
            "rhs": self.rhs,
            "holds": self.holds,
        }


def theorem1_check(
    latents: np.ndarray,
    y: np.ndarray,
    s: np.ndarray,
    reg_value: float,
    exact_joint: DiscreteJoint | None = None,
    bins_per_dim: int = 4,
    dims_used: int = 2,
    edges: list[np.ndarray] | None = None,
    tolerance: float = 0.05,
) -> BoundReport:
    """Check the per-class MI lower bound implied by the contrastive penalty.

    lhs = I(Z;S|Y=0)/p0 + I(Z;S|Y=1)/p1 and
    rhs = log(p0 B)/p0 + log(p1 B)/p1 - R/B,
    with p_eps the batch class fractions. The class-conditional MI terms come
    from ``exact_joint`` when given (the generator's closed-form binned joint),
    otherwise from the discretized empirical joint of the batch latents.
    Requires binary y and s with both classes present in the batch.
    """
    y = np.asarray(y, dtype=np.int64)
    s = np.asarray(s, dtype=np.int64)
    if y.max(initial=0) > 1 or s.max(initial=0) > 1:
        raise ValueError("bound check requires binary y and binary s")
    B = len(y)
    p0 = float(np.mean(y == 0))
    p1 = float(np.mean(y == 1))
    if p0 == 0.0 or p1 == 0.0:
        raise ValueError("bound check needs both classes present in the batch")

    if exact_joint is not None:
        joint = exact_joint
    else:
        zbin = discretize_latents(latents, bins_per_dim, dims_used, edges=edges)
        joint = empirical_joint(zbin, s, y, num_s=2, num_y=2)

    per_class = []
    reduced = joint.marginal("z", "s", "y")
    for value in (0, 1):
        weight, cond = reduced.condition("y", value)
        per_class.append(mi_from_table(cond) if weight > 0.0 else 0.0)

    lhs = per_class[0] / p0 + per_class[1] / p1
    rhs = math.log(p0 * B) / p0 + math.log(p1 * B) / p1 - reg_value / B
    return BoundReport(
        p0=p0,
        p1=p1,
        batch_size=B,
        reg_over_batch=reg_value / B,
        lhs=lhs,
        rhs=rhs,
        holds=bool(lhs >= rhs - tolerance),
    )
