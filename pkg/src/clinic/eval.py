"""Probe-based evaluation of trained checkpoints.

Disentanglement is measured by training a fresh probe (same architecture as
the adversary) on frozen latents to predict the sensitive attribute; chance
accuracy means the representation is guarded. The main task is scored by
head accuracy, fairness by the RMS of per-class true-positive-rate gaps
between the two sensitive groups, and residual class-conditional dependence
by a discretized conditional-MI estimate.
"""
from __future__ import annotations

import hashlib
import time
from dataclasses import dataclass, field, replace

import numpy as np

from . import autodiff as ad
from . import infotheory as it
from . import losses as ls
from . import model as mdl
from .data import Dataset
from .train import AdamWState, Checkpoint, OptimizerSettings, TrainConfig, adamw_step


def derive_seed(seed: int, label: str) -> int:
    """Stable sub-seed from (seed, label); identical across processes."""
    digest = hashlib.sha256(f"{seed}:{label}".encode()).digest()
    return int.from_bytes(digest[:8], "big") >> 1


@dataclass(frozen=True)
class ProbeConfig:
    steps: int = 2000
    batch_size: int = 256
    lr: float = 1e-3
    warmup_steps: int = 100
    weight_decay: float = 0.01
    eval_every: int = 100
    patience: int = 5
    min_delta: float = 1e-3

    def to_dict(self) -> dict:
        return {
            "steps": self.steps, "batch_size": self.batch_size, "lr": self.lr,
            "warmup_steps": self.warmup_steps, "weight_decay": self.weight_decay,
            "eval_every": self.eval_every, "patience": self.patience,
            "min_delta": self.min_delta,
        }

    @classmethod
    def from_dict(cls, d: dict) -> ProbeConfig:
        return cls(**d)


def accuracy(preds, labels) -> float:
    preds = np.asarray(preds)
    labels = np.asarray(labels)
    if preds.shape != labels.shape or preds.size == 0:
        raise ValueError(f"predictions {preds.shape} vs labels {labels.shape}")
    return float(np.mean(preds == labels))


def train_probe(
    z_train: np.ndarray,
    s_train: np.ndarray,
    z_dev: np.ndarray,
    s_dev: np.ndarray,
    cfg: ProbeConfig,
    seed: int,
    num_sensitive: int | None = None,
) -> tuple[mdl.ProbeParams, float]:
    """Train a fresh probe on frozen latents; returns (params, best dev accuracy).

    Early-stops once dev accuracy has not improved by min_delta for
    ``patience`` consecutive evaluations, and returns the snapshot that
    scored best on dev.
    """
    s_train = np.asarray(s_train, dtype=np.int64)
    s_dev = np.asarray(s_dev, dtype=np.int64)
    ns = num_sensitive if num_sensitive is not None else int(max(s_train.max(), s_dev.max())) + 1
    if len(np.unique(s_train)) < 2:
        raise ValueError("probe training needs at least two sensitive classes present")
    rng = np.random.default_rng(seed)
    probe = mdl.init_probe(rng, z_train.shape[1], ns)
    opt = OptimizerSettings(lr=cfg.lr, weight_decay=cfg.weight_decay,
                            warmup_steps=cfg.warmup_steps)
    state = AdamWState.for_params(probe.parameters())
    batch_size = min(cfg.batch_size, len(s_train))

    best_acc = -1.0
    best_params = probe.clone()
    stale = 0
    for step in range(1, cfg.steps + 1):
        take = rng.choice(len(s_train), size=batch_size, replace=False)
        loss, leaves = ls.adversary_loss(z_train[take], s_train[take], probe)
        ad.backward(loss)
        adamw_step(probe.parameters(), [leaf.grad for leaf in leaves], state, opt)
        if step % cfg.eval_every == 0 or step == cfg.steps:
            preds = mdl.probe_values(probe, z_dev).argmax(axis=1)
            acc = accuracy(preds, s_dev)
            if acc > best_acc + cfg.min_delta:
                best_acc = acc
                best_params = probe.clone()
                stale = 0
            else:
                stale += 1
                if stale >= cfg.patience:
                    break
    if best_acc < 0.0:
        best_acc = accuracy(mdl.probe_values(probe, z_dev).argmax(axis=1), s_dev)
        best_params = probe.clone()
    return best_params, best_acc


def gap_tpr_detail(preds, y, s):
    """Per-class TPR gaps between the two sensitive groups.

    Returns (rms_gap, per_class gaps dict, excluded class list). Classes with
    zero positives in either group are excluded and flagged.
    """
    preds = np.asarray(preds)
    y = np.asarray(y, dtype=np.int64)
    s = np.asarray(s, dtype=np.int64)
    groups = np.unique(s)
    if groups.size != 2:
        raise ValueError(f"GAP is defined for binary sensitive groups, found {groups.size}")
    gaps: dict[int, float] = {}
    excluded: list[int] = []
    for c in np.unique(y):
        tprs = []
        for g in groups:
            sel = (y == c) & (s == g)
            if not sel.any():
                tprs = None
                break
            tprs.append(float(np.mean(preds[sel] == c)))
        if tprs is None:
            excluded.append(int(c))
        else:
            gaps[int(c)] = tprs[0] - tprs[1]
    if not gaps:
        raise ValueError("every class lacks positives in one sensitive group")
    rms = float(np.sqrt(np.mean([g * g for g in gaps.values()])))
    return rms, gaps, excluded


def gap_tpr(preds, y, s) -> float:
    return gap_tpr_detail(preds, y, s)[0]


@dataclass(frozen=True)
class TrialReport:
    method: str
    strategy: str
    lam: float
    seed: int
    main_acc: float
    sensitive_acc: float
    gap: float | None
    cond_mi_nats: float
    params_extra: int
    wall_seconds: float
    tau_p: float = 0.5
    tau_n: float = 0.5
    batch_size: int = 256
    probe_dev_acc: float | None = None
    gap_excluded_classes: tuple[int, ...] = ()
    probe_config: dict = field(default_factory=dict)

    CSV_FIELDS = (
        "method", "strategy", "lambda", "seed", "main_acc", "sensitive_acc",
        "gap", "cond_mi", "params_extra", "wall_seconds",
    )

    def csv_row(self) -> dict:
        return {
            "method": self.method,
            "strategy": self.strategy,
            "lambda": repr(float(self.lam)),
            "seed": str(self.seed),
            "main_acc": repr(float(self.main_acc)),
            "sensitive_acc": repr(float(self.sensitive_acc)),
            "gap": "" if self.gap is None else repr(float(self.gap)),
            "cond_mi": repr(float(self.cond_mi_nats)),
            "params_extra": str(self.params_extra),
            "wall_seconds": repr(float(self.wall_seconds)),
        }

    def to_dict(self) -> dict:
        d = self.csv_row()
        d.update({
            "lambda": float(self.lam),
            "main_acc": float(self.main_acc),
            "sensitive_acc": float(self.sensitive_acc),
            "gap": None if self.gap is None else float(self.gap),
            "cond_mi": float(self.cond_mi_nats),
            "params_extra": int(self.params_extra),
            "wall_seconds": float(self.wall_seconds),
            "seed": int(self.seed),
            "tau_p": float(self.tau_p),
            "tau_n": float(self.tau_n),
            "batch_size": int(self.batch_size),
            "probe_dev_acc": self.probe_dev_acc,
            "gap_excluded_classes": list(self.gap_excluded_classes),
            "probe_config": dict(self.probe_config),
        })
        return d


def evaluate_checkpoint(
    ds: Dataset,
    checkpoint: Checkpoint | mdl.ModelBundle,
    cfg: TrainConfig,
    probe_cfg: ProbeConfig | None = None,
    bins_per_dim: int = 4,
    dims_used: int = 2,
) -> TrialReport:
    """Score one trained model: task accuracy, probe leakage, GAP, conditional MI."""
    started = time.perf_counter()
    probe_cfg = probe_cfg or ProbeConfig()
    bundle = checkpoint.bundle if isinstance(checkpoint, Checkpoint) else checkpoint

    z = {name: mdl.encode_values(bundle.encoder, ds.subset(name)[0])
         for name in ("train", "dev", "test")}
    _, y_test, s_test = ds.subset("test")

    logits = mdl.classify_values(bundle.head, z["test"])
    preds = logits.argmax(axis=1)
    main_acc = accuracy(preds, y_test)

    probe_seed = derive_seed(cfg.seed, "probe")
    probe, probe_dev_acc = train_probe(
        z["train"], ds.subset("train")[2], z["dev"], ds.subset("dev")[2],
        probe_cfg, probe_seed, num_sensitive=ds.num_sensitive,
    )
    sensitive_acc = accuracy(mdl.probe_values(probe, z["test"]).argmax(axis=1), s_test)

    gap = None
    excluded: tuple[int, ...] = ()
    if ds.num_sensitive == 2:
        gap, _, excl = gap_tpr_detail(preds, y_test, s_test)
        excluded = tuple(excl)

    zbin = it.discretize_latents(z["test"], bins_per_dim, dims_used)
    joint = it.empirical_joint(
        zbin, s_test, y_test,
        num_bins=bins_per_dim ** min(dims_used, z["test"].shape[1]),
        num_s=ds.num_sensitive, num_y=ds.num_classes,
    )
    cond_mi = it.conditional_mi(joint)

    params_extra = 0
    if bundle.baseline_reg is not None:
        params_extra = sum(p.size for p in bundle.adversary_parameters())

    return TrialReport(
        method=cfg.method,
        strategy=cfg.reg.strategy if cfg.method == "CLINIC" else "-",
        lam=cfg.lam,
        seed=cfg.seed,
        main_acc=main_acc,
        sensitive_acc=sensitive_acc,
        gap=gap,
        cond_mi_nats=cond_mi,
        params_extra=params_extra,
        wall_seconds=time.perf_counter() - started,
        tau_p=cfg.reg.tau_p,
        tau_n=cfg.reg.tau_n,
        batch_size=cfg.batch_size,
        probe_dev_acc=probe_dev_acc,
        gap_excluded_classes=excluded,
        probe_config=probe_cfg.to_dict(),
    )


def probe_null_calibration(
    z: np.ndarray, s: np.ndarray, probe_cfg: ProbeConfig, seed: int
) -> float:
    """Probe accuracy after shuffling s: the no-leakage reference level."""
    rng = np.random.default_rng(derive_seed(seed, "null"))
    shuffled = rng.permutation(np.asarray(s, dtype=np.int64))
    n = len(shuffled)
    n_train = int(n * 0.8)
    n_dev = int(n * 0.9)
    probe, _ = train_probe(
        z[:n_train], shuffled[:n_train], z[n_train:n_dev], shuffled[n_train:n_dev],
        probe_cfg, derive_seed(seed, "null-probe"),
    )
    preds = mdl.probe_values(probe, z[n_dev:]).argmax(axis=1)
    return accuracy(preds, shuffled[n_dev:])


def write_reports_csv(path, reports: list[TrialReport]) -> None:
    """Full per-trial rows (including wall_seconds) in the TrialReport schema."""
    import csv

    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=TrialReport.CSV_FIELDS, lineterminator="\n")
        writer.writeheader()
        for report in reports:
            writer.writerow(report.csv_row())


@dataclass(frozen=True)
class ParetoTable:
    """Trial reports with dominance flags in (sensitive_acc down, main_acc up)."""

    rows: tuple[TrialReport, ...]
    dominant: tuple[bool, ...]

    CSV_FIELDS = TrialReport.CSV_FIELDS + ("dominant",)


def pareto_dominates(a: TrialReport, b: TrialReport) -> bool:
    """True when a is at least as good in both objectives and better in one."""
    return (
        a.sensitive_acc <= b.sensitive_acc
        and a.main_acc >= b.main_acc
        and (a.sensitive_acc < b.sensitive_acc or a.main_acc > b.main_acc)
    )


def pareto_aggregate(reports: list[TrialReport]) -> ParetoTable:
    rows = tuple(sorted(reports, key=lambda r: r.lam))
    flags = []
    for i, r in enumerate(rows):
        flags.append(not any(
            pareto_dominates(other, r) for j, other in enumerate(rows) if j != i
        ))
    return ParetoTable(rows=rows, dominant=tuple(flags))


def quick_probe_config(max_steps: int = 600) -> ProbeConfig:
    """A reduced probe schedule for smoke tests and tiny sweeps."""
    return replace(ProbeConfig(), steps=max_steps, eval_every=50, warmup_steps=20)
