"""Task loss, the contrastive disentanglement penalty, and the adversarial baseline.

The penalty works on per-anchor positive/negative index sets built from the
batch labels. For anchor i with complements ybar_i (a class other than y_i)
and sbar_i (a group other than s_i):

  S1: P = {j: y_j = y_i and s_j = sbar_i},  N = {j: y_j = ybar_i}
  S2: P as S1,                              N = {j: y_j = ybar_i and s_j = s_i}
  S0: P = {j: s_j = sbar_i},                N = {j: s_j = s_i, j != i}

S0 never reads the class labels. The per-anchor contribution is

  C_i = (1/|P(i)|) * sum_{p in P(i)} [ z_i.z_p / tau_p
          - log sum_{n in N(i)} exp(z_i.z_n / tau_n) ]

and the penalty is minus the sum of C_i over anchors with non-empty P and N;
anchors with an empty set are skipped and counted, not an error. A batch with
no usable anchor raises :class:`NoUsablePairsError`.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import model as mdl

STRATEGIES = ("S0", "S1", "S2")
LAMBDA_GRID = (0.001, 0.01, 0.1, 1.0, 10.0)


class NoUsablePairsError(ValueError):
    """Every anchor in the batch has an empty positive or negative set."""


@dataclass(frozen=True)
class RegularizerConfig:
    strategy: str = "S1"
    tau_p: float = 0.5
    tau_n: float = 0.5
    normalize_latents: bool = True
    s0_negative_pool: str = "same_s"  # or "all"

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise ValueError(f"strategy must be one of {STRATEGIES}, got {self.strategy!r}")
        if self.tau_p <= 0.0 or self.tau_n <= 0.0:
            raise ValueError(f"temperatures must be positive, got {self.tau_p}, {self.tau_n}")
        if self.s0_negative_pool not in ("same_s", "all"):
            raise ValueError(f"unknown s0_negative_pool {self.s0_negative_pool!r}")

    def to_dict(self) -> dict:
        return {
            "strategy": self.strategy,
            "tau_p": self.tau_p,
            "tau_n": self.tau_n,
            "normalize_latents": self.normalize_latents,
            "s0_negative_pool": self.s0_negative_pool,
        }

    @classmethod
    def from_dict(cls, d: dict) -> RegularizerConfig:
        return cls(**d)


@dataclass(frozen=True)
class PairSets:
    """Per-anchor membership masks; entry [i, j] says j is in P(i) / N(i)."""

    pos_mask: np.ndarray  # (B, B) bool
    neg_mask: np.ndarray  # (B, B) bool
    ybar: np.ndarray | None  # None for class-blind strategies
    sbar: np.ndarray

    @property
    def batch_size(self) -> int:
        return self.pos_mask.shape[0]

    @property
    def active(self) -> np.ndarray:
        return self.pos_mask.any(axis=1) & self.neg_mask.any(axis=1)

    @property
    def num_active(self) -> int:
        return int(self.active.sum())

    def positives(self, i: int) -> np.ndarray:
        return np.flatnonzero(self.pos_mask[i])

    def negatives(self, i: int) -> np.ndarray:
        return np.flatnonzero(self.neg_mask[i])


def _complements(labels: np.ndarray, cardinality: int, rng: np.random.Generator) -> np.ndarray:
    """A uniformly sampled label other than each entry's own.

    Deterministic (no rng draw) for binary labels, where the complement is
    the other value.
    """
    if cardinality == 2:
        return 1 - labels
    draws = rng.integers(0, cardinality - 1, size=labels.shape[0])
    return np.where(draws >= labels, draws + 1, draws)


def build_pair_sets(
    y: np.ndarray,
    s: np.ndarray,
    strategy: str,
    rng: np.random.Generator,
    num_classes: int | None = None,
    num_sensitive: int | None = None,
    s0_negative_pool: str = "same_s",
) -> PairSets:
    y = np.asarray(y, dtype=np.int64)
    s = np.asarray(s, dtype=np.int64)
    if strategy not in STRATEGIES:
        raise ValueError(f"strategy must be one of {STRATEGIES}, got {strategy!r}")
    B = y.shape[0]
    ny = num_classes if num_classes is not None else int(y.max()) + 1
    ns = num_sensitive if num_sensitive is not None else int(s.max()) + 1
    sbar = _complements(s, max(ns, 2), rng)
    off_diag = ~np.eye(B, dtype=bool)

    if strategy == "S0":
        ybar = None
        pos = (s[None, :] == sbar[:, None]) & off_diag
        if s0_negative_pool == "all":
            neg = off_diag.copy()
        else:
            neg = (s[None, :] == s[:, None]) & off_diag
    else:
        ybar = _complements(y, max(ny, 2), rng)
        pos = (y[None, :] == y[:, None]) & (s[None, :] == sbar[:, None]) & off_diag
        neg = (y[None, :] == ybar[:, None]) & off_diag
        if strategy == "S2":
            neg &= s[None, :] == s[:, None]
    return PairSets(pos_mask=pos, neg_mask=neg, ybar=ybar, sbar=sbar)


def contribution_from_sims(pos_sims, neg_sims, tau_p: float, tau_n: float) -> float:
    """C_i from raw similarity values; overflow-safe log-sum-exp."""
    pos_sims = np.asarray(pos_sims, dtype=np.float64)
    neg_sims = np.asarray(neg_sims, dtype=np.float64)
    scaled = neg_sims / tau_n
    m = scaled.max()
    lse = m + math.log(np.exp(scaled - m).sum())
    return float(np.mean(pos_sims / tau_p) - lse)


def clinic_contribution(z_i, z, pos_idx, neg_idx, tau_p: float, tau_n: float) -> float | None:
    """Per-anchor contribution, or None when the anchor is inactive."""
    pos_idx = np.asarray(pos_idx, dtype=np.int64)
    neg_idx = np.asarray(neg_idx, dtype=np.int64)
    if pos_idx.size == 0 or neg_idx.size == 0:
        return None
    z = np.asarray(z, dtype=np.float64)
    z_i = np.asarray(z_i, dtype=np.float64).reshape(-1)
    return contribution_from_sims(z[pos_idx] @ z_i, z[neg_idx] @ z_i, tau_p, tau_n)


def clinic_regularizer(z, pair_sets: PairSets, cfg: RegularizerConfig):
    """The penalty R = -sum over active anchors of C_i.

    Accepts a latent Node (gradient flows to every participating row) or a
    plain array (returns a float). Latent rows are unit-normalized first when
    the config says so.
    """
    active = pair_sets.active
    if not active.any():
        raise NoUsablePairsError("batch has no usable pairs")
    is_node = isinstance(z, ad.Node)
    zn = z if is_node else ad.constant(np.asarray(z, dtype=np.float64))
    if zn.value.shape[0] != pair_sets.batch_size:
        raise ad.ShapeError(
            f"latents have {zn.value.shape[0]} rows, pair sets cover {pair_sets.batch_size}"
        )
    if cfg.normalize_latents:
        zn = ad.l2_normalize_rows(zn)

    sims = ad.matmul(zn, ad.transpose(zn))
    pos_counts = pair_sets.pos_mask.sum(axis=1, keepdims=True)
    pos_weights = np.where(
        active[:, None],
        pair_sets.pos_mask / (cfg.tau_p * np.maximum(pos_counts, 1)),
        0.0,
    )
    ones = np.ones((pair_sets.batch_size, 1))
    pos_term = ad.matmul(ad.mul(sims, ad.constant(pos_weights)), ad.constant(ones))
    neg_mask = pair_sets.neg_mask & active[:, None]
    neg_term = ad.masked_log_sum_exp(ad.scale(sims, 1.0 / cfg.tau_n), neg_mask)
    contributions = ad.sub(pos_term, neg_term)
    penalty = ad.scale(ad.sum_all(contributions), -1.0)
    return penalty if is_node else float(penalty.value[0, 0])


def cross_entropy(logits, y):
    """Mean over the batch of -log softmax(logits)[y]; Node in, Node out."""
    y = np.asarray(y, dtype=np.int64)
    logits_node = logits if isinstance(logits, ad.Node) else ad.constant(logits)
    if logits_node.value.shape[0] != y.shape[0]:
        raise ad.ShapeError(
            f"cross_entropy: {logits_node.value.shape[0]} logit rows vs {y.shape[0]} labels"
        )
    node = ad.mean(ad.sub(ad.log_sum_exp(logits_node), ad.pick(logits_node, y)))
    return node if isinstance(logits, ad.Node) else float(node.value[0, 0])


def combined_loss(ce, reg, lam: float):
    """Total objective ce + lam * reg; reg may be None when lam == 0."""
    if lam == 0.0 or reg is None:
        if lam != 0.0 and reg is None:
            raise ValueError("nonzero lambda requires a regularizer value")
        return ce
    if isinstance(ce, ad.Node):
        return ad.add(ce, ad.scale(reg, lam))
    return ce + lam * reg


def adv_regularizer(z, s, psi: mdl.ProbeParams):
    """Encoder-facing adversarial term: minus the adversary's cross-entropy.

    The adversary's parameters enter as constants, so gradients reach only
    the latents (and through them the encoder), pushing the encoder to make
    the sensitive attribute unpredictable.
    """
    if psi is None:
        raise ValueError("adversarial regularizer requires adversary parameters")
    logits, _ = mdl.probe_graph(psi, z, trainable=False)
    node = ad.scale(cross_entropy(logits, s), -1.0)
    return node if isinstance(z, ad.Node) else float(node.value[0, 0])


def adversary_loss(z_values: np.ndarray, s, psi: mdl.ProbeParams):
    """Adversary-facing loss: CE of the adversary on detached latents.

    Returns (loss node, adversary parameter leaves) for the inner-loop update.
    """
    logits, leaves = mdl.probe_graph(psi, np.asarray(z_values, dtype=np.float64), trainable=True)
    return cross_entropy(logits, s), leaves
