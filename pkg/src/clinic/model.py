"""MLP encoder, classifier head, and probe/adversary networks.

Parameters are plain float64 arrays grouped into small dataclasses; forward
passes build autodiff graphs (``*_graph``) or run pure numpy in eval mode
(``*_values``). Training mutates a private clone of a bundle; snapshots are
deep copies and safe to share.
"""
from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad

CHECKPOINT_VERSION = 1

ACTIVATIONS = {"leaky_relu": ad.leaky_relu, "tanh": ad.tanh}


def glorot_uniform(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    a = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-a, a, size=(fan_in, fan_out))


@dataclass
class Mlp:
    """Weights/biases of a dense stack; activation applies between layers."""

    weights: list[np.ndarray]
    biases: list[np.ndarray]
    activation: str = "leaky_relu"

    def __post_init__(self):
        if len(self.weights) != len(self.biases):
            raise ValueError("weights and biases must pair up")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")

    @property
    def in_dim(self) -> int:
        return self.weights[0].shape[0]

    @property
    def out_dim(self) -> int:
        return self.weights[-1].shape[1]

    def parameters(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def clone(self) -> Mlp:
        return Mlp(
            [w.copy() for w in self.weights],
            [b.copy() for b in self.biases],
            self.activation,
        )


def init_mlp(rng: np.random.Generator, dims: list[int], activation="leaky_relu") -> Mlp:
    weights, biases = [], []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        weights.append(glorot_uniform(rng, fan_in, fan_out))
        biases.append(np.zeros((1, fan_out)))
    return Mlp(weights, biases, activation)


@dataclass
class EncoderParams:
    """f_theta: features -> latent, an MLP with dropout on hidden layers."""

    mlp: Mlp
    dropout: float = 0.2

    @property
    def latent_dim(self) -> int:
        return self.mlp.out_dim

    def parameters(self) -> list[np.ndarray]:
        return self.mlp.parameters()

    def clone(self) -> EncoderParams:
        return EncoderParams(self.mlp.clone(), self.dropout)


@dataclass
class HeadParams:
    """g_phi: latent -> class logits, a single linear map."""

    weight: np.ndarray
    bias: np.ndarray

    @property
    def num_classes(self) -> int:
        return self.weight.shape[1]

    def parameters(self) -> list[np.ndarray]:
        return [self.weight, self.bias]

    def clone(self) -> HeadParams:
        return HeadParams(self.weight.copy(), self.bias.copy())


@dataclass
class ProbeParams:
    """Sensitive-attribute classifier: d -> d -> d -> d -> |S| (3 hidden layers)."""

    mlp: Mlp

    def parameters(self) -> list[np.ndarray]:
        return self.mlp.parameters()

    def clone(self) -> ProbeParams:
        return ProbeParams(self.mlp.clone())


@dataclass
class ModelBundle:
    """Encoder + head, plus adversary parameters when the method needs them."""

    encoder: EncoderParams
    head: HeadParams
    baseline_reg: ProbeParams | None = None

    def main_parameters(self) -> list[np.ndarray]:
        return self.encoder.parameters() + self.head.parameters()

    def adversary_parameters(self) -> list[np.ndarray]:
        if self.baseline_reg is None:
            raise ValueError("bundle has no adversary parameters")
        return self.baseline_reg.parameters()

    def clone(self) -> ModelBundle:
        return ModelBundle(
            self.encoder.clone(),
            self.head.clone(),
            None if self.baseline_reg is None else self.baseline_reg.clone(),
        )


def init_encoder(rng, in_dim: int, hidden_dim: int = 64, latent_dim: int = 16,
                 dropout: float = 0.2, activation="leaky_relu") -> EncoderParams:
    return EncoderParams(init_mlp(rng, [in_dim, hidden_dim, latent_dim], activation), dropout)


def init_head(rng, latent_dim: int, num_classes: int) -> HeadParams:
    return HeadParams(glorot_uniform(rng, latent_dim, num_classes), np.zeros((1, num_classes)))


def init_probe(rng, latent_dim: int, num_sensitive: int, activation="leaky_relu") -> ProbeParams:
    dims = [latent_dim, latent_dim, latent_dim, latent_dim, num_sensitive]
    return ProbeParams(init_mlp(rng, dims, activation))


def init_bundle(rng, in_dim, num_classes, num_sensitive, *, hidden_dim=64,
                latent_dim=16, dropout=0.2, with_adversary=False) -> ModelBundle:
    enc = init_encoder(rng, in_dim, hidden_dim, latent_dim, dropout)
    head = init_head(rng, latent_dim, num_classes)
    adv = init_probe(rng, latent_dim, num_sensitive) if with_adversary else None
    return ModelBundle(enc, head, adv)


def mlp_graph(mlp: Mlp, x: ad.Node, *, trainable: bool = True,
              dropout: float = 0.0, rng: np.random.Generator | None = None):
    """Build the forward graph; returns (output node, parameter leaf nodes).

    Dropout (inverted, train-time only) applies to every hidden activation
    when ``dropout`` > 0 and ``rng`` is given. With ``trainable=False`` the
    parameters enter as constants and receive no gradient.
    """
    wrap = ad.leaf if trainable else ad.constant
    leaves = []
    act = ACTIVATIONS[mlp.activation]
    h = x
    last = len(mlp.weights) - 1
    for k, (w, b) in enumerate(zip(mlp.weights, mlp.biases)):
        wn, bn = wrap(w), wrap(b)
        leaves += [wn, bn]
        h = ad.add_rowvec(ad.matmul(h, wn), bn)
        if k < last:
            h = act(h)
            if dropout > 0.0 and rng is not None:
                keep = 1.0 - dropout
                mask = (rng.random(h.value.shape) < keep) / keep
                h = ad.mul(h, ad.constant(mask))
    return h, leaves


def mlp_values(mlp: Mlp, x: np.ndarray) -> np.ndarray:
    """Eval-mode numpy forward pass (no dropout, no graph)."""
    h = np.asarray(x, dtype=np.float64)
    last = len(mlp.weights) - 1
    for k, (w, b) in enumerate(zip(mlp.weights, mlp.biases)):
        h = h @ w + b
        if k < last:
            if mlp.activation == "leaky_relu":
                h = np.where(h > 0.0, h, 0.01 * h)
            else:
                h = np.tanh(h)
    return h


def encode(enc: EncoderParams, features, *, trainable=True, train=False, rng=None):
    """Graph-mode encoding; returns (latent node, encoder leaves)."""
    x = features if isinstance(features, ad.Node) else ad.constant(features)
    if x.value.shape[1] != enc.mlp.in_dim:
        raise ad.ShapeError(
            f"encode: features have dim {x.value.shape[1]}, encoder expects {enc.mlp.in_dim}"
        )
    dropout = enc.dropout if train else 0.0
    return mlp_graph(enc.mlp, x, trainable=trainable, dropout=dropout, rng=rng)


def encode_values(enc: EncoderParams, features: np.ndarray) -> np.ndarray:
    """Eval-mode latents as a plain array."""
    features = np.asarray(features, dtype=np.float64)
    if features.shape[1] != enc.mlp.in_dim:
        raise ad.ShapeError(
            f"encode: features have dim {features.shape[1]}, encoder expects {enc.mlp.in_dim}"
        )
    return mlp_values(enc.mlp, features)


def classify(head: HeadParams, z, *, trainable=True):
    """Graph-mode logits; returns (logits node, head leaves)."""
    zn = z if isinstance(z, ad.Node) else ad.constant(z)
    if zn.value.shape[1] != head.weight.shape[0]:
        raise ad.ShapeError(
            f"classify: latents have dim {zn.value.shape[1]}, head expects {head.weight.shape[0]}"
        )
    wrap = ad.leaf if trainable else ad.constant
    wn, bn = wrap(head.weight), wrap(head.bias)
    return ad.add_rowvec(ad.matmul(zn, wn), bn), [wn, bn]


def classify_values(head: HeadParams, z: np.ndarray) -> np.ndarray:
    return np.asarray(z, dtype=np.float64) @ head.weight + head.bias


def probe_graph(probe: ProbeParams, z, *, trainable=True):
    zn = z if isinstance(z, ad.Node) else ad.constant(z)
    return mlp_graph(probe.mlp, zn, trainable=trainable)


def probe_values(probe: ProbeParams, z: np.ndarray) -> np.ndarray:
    return mlp_values(probe.mlp, z)


def l2_normalize_rows(z):
    """Unit-norm rows; Node inputs stay differentiable, arrays stay arrays."""
    if isinstance(z, ad.Node):
        return ad.l2_normalize_rows(z)
    z = np.asarray(z, dtype=np.float64)
    norms = np.linalg.norm(z, axis=1, keepdims=True)
    if np.any(norms == 0.0):
        bad = int(np.flatnonzero(norms[:, 0] == 0.0)[0])
        raise ValueError(f"l2_normalize_rows: row {bad} has zero norm")
    return z / norms


def param_count(bundle: ModelBundle) -> int:
    total = sum(p.size for p in bundle.main_parameters())
    if bundle.baseline_reg is not None:
        total += sum(p.size for p in bundle.adversary_parameters())
    return total


def _mlp_to_dict(mlp: Mlp) -> dict:
    return {
        "activation": mlp.activation,
        "shapes": [list(w.shape) for w in mlp.weights],
        "weights": [w.reshape(-1).tolist() for w in mlp.weights],
        "biases": [b.reshape(-1).tolist() for b in mlp.biases],
    }


def _mlp_from_dict(d: dict) -> Mlp:
    weights, biases = [], []
    for shape, w, b in zip(d["shapes"], d["weights"], d["biases"]):
        weights.append(np.asarray(w, dtype=np.float64).reshape(shape))
        biases.append(np.asarray(b, dtype=np.float64).reshape(1, shape[1]))
    return Mlp(weights, biases, d["activation"])


def bundle_to_dict(bundle: ModelBundle) -> dict:
    d = {
        "version": CHECKPOINT_VERSION,
        "encoder": _mlp_to_dict(bundle.encoder.mlp),
        "dropout": bundle.encoder.dropout,
        "head": {
            "shape": list(bundle.head.weight.shape),
            "weight": bundle.head.weight.reshape(-1).tolist(),
            "bias": bundle.head.bias.reshape(-1).tolist(),
        },
    }
    if bundle.baseline_reg is not None:
        d["baseline_reg"] = _mlp_to_dict(bundle.baseline_reg.mlp)
    return d


def bundle_from_dict(d: dict) -> ModelBundle:
    if d.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {d.get('version')!r}")
    enc = EncoderParams(_mlp_from_dict(d["encoder"]), d["dropout"])
    shape = d["head"]["shape"]
    head = HeadParams(
        np.asarray(d["head"]["weight"], dtype=np.float64).reshape(shape),
        np.asarray(d["head"]["bias"], dtype=np.float64).reshape(1, shape[1]),
    )
    adv = None
    if "baseline_reg" in d:
        adv = ProbeParams(_mlp_from_dict(d["baseline_reg"]))
    return ModelBundle(enc, head, adv)


def save_checkpoint(bundle: ModelBundle, path) -> None:
    with open(path, "w") as fh:
        json.dump(bundle_to_dict(bundle), fh)


def load_checkpoint(path) -> ModelBundle:
    with open(path) as fh:
        return bundle_from_dict(json.load(fh))
