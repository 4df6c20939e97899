"""Training loop: AdamW with linear warmup, per-method steps, checkpointing.

Methods:
  CE      one joint update of encoder+head on the task cross-entropy.
  CLINIC  same update on ce + lambda * contrastive penalty; batches whose
          pair sets are unusable are skipped (counted, not fatal).
  ADV     `unroll` adversary-only updates (encoder frozen) followed by one
          encoder+head update against the frozen adversary.

Everything is driven by a single seed: data order, dropout masks, and
initialization come from spawned child generators, so two runs with the same
config and dataset produce bit-identical parameters.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import autodiff as ad
from . import losses as ls
from . import model as mdl
from .data import Batch, Dataset, sample_batch

METHODS = ("CE", "CLINIC", "ADV")


@dataclass(frozen=True)
class TrainConfig:
    method: str = "CLINIC"
    lam: float = 0.0
    reg: ls.RegularizerConfig = field(default_factory=ls.RegularizerConfig)
    batch_size: int = 256
    lr: float = 1e-3
    warmup_steps: int = 1000
    weight_decay: float = 0.01
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    max_steps: int = 5000
    eval_every: int | None = None  # defaults to max_steps // 6
    unroll: int = 5
    grad_clip: float | None = None
    hidden_dim: int = 64
    latent_dim: int = 16
    dropout: float = 0.2
    seed: int = 0

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"method must be one of {METHODS}, got {self.method!r}")
        if self.batch_size < 2:
            raise ValueError("batch_size must be at least 2")
        if self.lr <= 0.0:
            raise ValueError("lr must be positive")
        if self.warmup_steps < 0 or self.lam < 0.0:
            raise ValueError("warmup_steps and lambda must be non-negative")
        if self.method == "ADV" and self.unroll < 1:
            raise ValueError("ADV needs unroll >= 1")

    @property
    def checkpoint_every(self) -> int:
        return self.eval_every if self.eval_every else max(1, self.max_steps // 6)

    def to_dict(self) -> dict:
        d = {
            "method": self.method,
            "lambda": self.lam,
            "reg": self.reg.to_dict(),
            "batch_size": self.batch_size,
            "lr": self.lr,
            "warmup_steps": self.warmup_steps,
            "weight_decay": self.weight_decay,
            "betas": list(self.betas),
            "eps": self.eps,
            "max_steps": self.max_steps,
            "eval_every": self.eval_every,
            "unroll": self.unroll,
            "grad_clip": self.grad_clip,
            "hidden_dim": self.hidden_dim,
            "latent_dim": self.latent_dim,
            "dropout": self.dropout,
            "seed": self.seed,
        }
        return d

    @classmethod
    def from_dict(cls, d: dict) -> TrainConfig:
        d = dict(d)
        if "lambda" in d:
            d["lam"] = d.pop("lambda")
        if "reg" in d and isinstance(d["reg"], dict):
            d["reg"] = ls.RegularizerConfig.from_dict(d["reg"])
        if "betas" in d:
            d["betas"] = tuple(d["betas"])
        return cls(**d)


@dataclass(frozen=True)
class OptimizerSettings:
    lr: float = 1e-3
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    weight_decay: float = 0.0
    warmup_steps: int = 0

    @classmethod
    def from_train_config(cls, cfg: TrainConfig) -> OptimizerSettings:
        return cls(cfg.lr, cfg.betas, cfg.eps, cfg.weight_decay, cfg.warmup_steps)


@dataclass
class AdamWState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    step: int = 0

    @classmethod
    def for_params(cls, params: list[np.ndarray]) -> AdamWState:
        return cls([np.zeros_like(p) for p in params], [np.zeros_like(p) for p in params])


def warmup_lr(lr: float, step: int, warmup_steps: int) -> float:
    if warmup_steps <= 0:
        return lr
    return lr * min(1.0, step / warmup_steps)


def clip_gradients(grads: list[np.ndarray], max_norm: float) -> list[np.ndarray]:
    """Rescale the global gradient norm to at most max_norm; direction unchanged."""
    total = math.sqrt(sum(float(np.sum(g * g)) for g in grads))
    if total <= max_norm or total == 0.0:
        return grads
    scale = max_norm / total
    return [g * scale for g in grads]


def adamw_step(
    params: list[np.ndarray],
    grads: list[np.ndarray],
    state: AdamWState,
    opt: OptimizerSettings,
) -> None:
    """One decoupled-weight-decay Adam update, in place, with bias correction."""
    if len(params) != len(grads) or len(params) != len(state.m):
        raise ValueError("params, grads and state must align")
    state.step += 1
    t = state.step
    b1, b2 = opt.betas
    lr_t = warmup_lr(opt.lr, t, opt.warmup_steps)
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if p.shape != g.shape:
            raise ad.ShapeError(f"gradient shape {g.shape} does not match parameter {p.shape}")
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        m_hat = m / (1.0 - b1**t)
        v_hat = v / (1.0 - b2**t)
        p -= lr_t * (m_hat / np.sqrt(v_hat + opt.eps) + opt.weight_decay * p)


@dataclass(frozen=True)
class StepRecord:
    ce: float
    reg: float | None
    loss: float
    skipped: bool = False
    adversary_ce: float | None = None
    latents: np.ndarray | None = None


@dataclass
class TrainerState:
    bundle: mdl.ModelBundle
    opt_main: AdamWState
    opt_adv: AdamWState | None
    dropout_rng: np.random.Generator
    pair_rng: np.random.Generator


def _regularizer_for_batch(z: ad.Node, batch: Batch, cfg: TrainConfig,
                           state: TrainerState, num_classes: int, num_sensitive: int):
    pairs = ls.build_pair_sets(
        batch.y, batch.s, cfg.reg.strategy, state.pair_rng,
        num_classes=num_classes, num_sensitive=num_sensitive,
        s0_negative_pool=cfg.reg.s0_negative_pool,
    )
    return ls.clinic_regularizer(z, pairs, cfg.reg)


def train_step(state: TrainerState, batch: Batch, cfg: TrainConfig,
               num_classes: int, num_sensitive: int,
               sample_inner=None) -> StepRecord:
    """One optimization step; ``sample_inner`` (ADV only) draws the fresh
    batches the adversary's inner loop trains on, defaulting to the step's
    own batch."""
    bundle = state.bundle
    opt = OptimizerSettings.from_train_config(cfg)

    if cfg.method == "ADV":
        adv_ce = None
        for _ in range(cfg.unroll):
            inner = sample_inner() if sample_inner is not None else batch
            z_values = mdl.encode_values(bundle.encoder, inner.features)
            loss_node, psi_leaves = ls.adversary_loss(z_values, inner.s, bundle.baseline_reg)
            ad.backward(loss_node)
            grads = [leaf.grad for leaf in psi_leaves]
            if cfg.grad_clip is not None:
                grads = clip_gradients(grads, cfg.grad_clip)
            adamw_step(bundle.adversary_parameters(), grads, state.opt_adv, opt)
            adv_ce = float(loss_node.value[0, 0])

    z, enc_leaves = mdl.encode(
        bundle.encoder, batch.features, train=True, rng=state.dropout_rng
    )
    logits, head_leaves = mdl.classify(bundle.head, z)
    ce_node = ls.cross_entropy(logits, batch.y)

    reg_node = None
    if cfg.lam > 0.0:
        if cfg.method == "CLINIC":
            try:
                reg_node = _regularizer_for_batch(
                    z, batch, cfg, state, num_classes, num_sensitive
                )
            except ls.NoUsablePairsError:
                return StepRecord(
                    ce=float(ce_node.value[0, 0]), reg=None,
                    loss=float(ce_node.value[0, 0]), skipped=True,
                )
        elif cfg.method == "ADV":
            reg_node = ls.adv_regularizer(z, batch.s, bundle.baseline_reg)

    loss_node = ls.combined_loss(ce_node, reg_node, cfg.lam if reg_node is not None else 0.0)
    ad.backward(loss_node)
    leaves = enc_leaves + head_leaves
    grads = [leaf.grad for leaf in leaves]
    if cfg.grad_clip is not None:
        grads = clip_gradients(grads, cfg.grad_clip)
    adamw_step(bundle.main_parameters(), grads, state.opt_main, opt)

    return StepRecord(
        ce=float(ce_node.value[0, 0]),
        reg=None if reg_node is None else float(reg_node.value[0, 0]),
        loss=float(loss_node.value[0, 0]),
        adversary_ce=adv_ce if cfg.method == "ADV" else None,
        latents=z.value,
    )


@dataclass(frozen=True)
class Checkpoint:
    step: int
    bundle: mdl.ModelBundle
    metrics: dict


@dataclass
class FitResult:
    checkpoints: list[Checkpoint]
    best: Checkpoint
    log: list[dict]
    diverged: bool
    skipped_batches: int
    step_seconds: float


def dev_cross_entropy(bundle: mdl.ModelBundle, ds: Dataset) -> float:
    feats, y, _ = ds.subset("dev")
    if len(y) == 0:
        feats, y, _ = ds.subset("train")
    logits = mdl.classify_values(bundle.head, mdl.encode_values(bundle.encoder, feats))
    return float(ls.cross_entropy(logits, y))


def fit(ds: Dataset, cfg: TrainConfig, on_eval=None, log_path=None) -> FitResult:
    """Train on the dataset's train split; returns checkpoints and the pick.

    The selected checkpoint minimizes the running penalty value when
    lambda > 0 (dev cross-entropy when lambda == 0). ``on_eval`` is called at
    every checkpoint with (checkpoint, last_record, batch) for monitoring.
    """
    import time

    seeds = np.random.SeedSequence(cfg.seed).spawn(4)
    init_rng = np.random.default_rng(seeds[0])
    batch_rng = np.random.default_rng(seeds[1])
    dropout_rng = np.random.default_rng(seeds[2])
    pair_rng = np.random.default_rng(seeds[3])

    num_classes = ds.num_classes
    num_sensitive = ds.num_sensitive
    bundle = mdl.init_bundle(
        init_rng, ds.dim, num_classes, num_sensitive,
        hidden_dim=cfg.hidden_dim, latent_dim=cfg.latent_dim,
        dropout=cfg.dropout, with_adversary=cfg.method == "ADV",
    )
    state = TrainerState(
        bundle=bundle,
        opt_main=AdamWState.for_params(bundle.main_parameters()),
        opt_adv=AdamWState.for_params(bundle.adversary_parameters())
        if cfg.method == "ADV" else None,
        dropout_rng=dropout_rng,
        pair_rng=pair_rng,
    )

    checkpoints: list[Checkpoint] = []
    log: list[dict] = []
    diverged = False
    skipped = 0
    running_ce: list[float] = []
    running_reg: list[float] = []
    started = time.perf_counter()
    effective_steps = 0

    def sample_inner():
        return sample_batch(ds, cfg.batch_size, batch_rng)

    for step in range(1, cfg.max_steps + 1):
        batch = sample_batch(ds, cfg.batch_size, batch_rng)
        record = train_step(state, batch, cfg, num_classes, num_sensitive,
                            sample_inner=sample_inner if cfg.method == "ADV" else None)
        effective_steps += 1
        if record.skipped:
            skipped += 1
            continue
        if not math.isfinite(record.loss):
            diverged = True
        running_ce.append(record.ce)
        if record.reg is not None:
            running_reg.append(record.reg)
        log.append({
            "step": step,
            "ce": record.ce,
            "reg": record.reg,
            "lr": warmup_lr(cfg.lr, state.opt_main.step, cfg.warmup_steps),
            "skipped_batches": skipped,
        })

        at_checkpoint = step % cfg.checkpoint_every == 0 or step == cfg.max_steps
        if diverged or at_checkpoint:
            mean_ce = float(np.mean(running_ce)) if running_ce else float("nan")
            mean_reg = float(np.mean(running_reg)) if running_reg else None
            metrics = {
                "ce": mean_ce,
                "reg": mean_reg,
                "lam_reg": None if mean_reg is None else cfg.lam * mean_reg,
                "dev_ce": dev_cross_entropy(state.bundle, ds),
                "skipped_batches": skipped,
            }
            ckpt = Checkpoint(step=step, bundle=state.bundle.clone(), metrics=metrics)
            if not diverged:
                checkpoints.append(ckpt)
                if on_eval is not None:
                    on_eval(ckpt, record, batch)
            running_ce, running_reg = [], []
        if diverged:
            break

    if not checkpoints:
        raise RuntimeError("training diverged before the first checkpoint")

    if cfg.lam > 0.0:
        candidates = [c for c in checkpoints if c.metrics["reg"] is not None]
        best = min(candidates or checkpoints, key=lambda c: (c.metrics["reg"], c.step))
    else:
        best = min(checkpoints, key=lambda c: (c.metrics["dev_ce"], c.step))

    elapsed = time.perf_counter() - started
    result = FitResult(
        checkpoints=checkpoints,
        best=best,
        log=log,
        diverged=diverged,
        skipped_batches=skipped,
        step_seconds=elapsed / max(effective_steps, 1),
    )
    if log_path is not None:
        with open(log_path, "w") as fh:
            for row in log:
                fh.write(json.dumps(row) + "\n")
    return result


def method_config(cfg: TrainConfig, method: str, lam: float | None = None,
                  strategy: str | None = None) -> TrainConfig:
    """Derive a per-method config; CE forces lambda to zero."""
    updates: dict = {"method": method}
    if method == "CE":
        updates["lam"] = 0.0
    elif lam is not None:
        updates["lam"] = lam
    if strategy is not None:
        updates["reg"] = replace(cfg.reg, strategy=strategy)
    return replace(cfg, **updates)
