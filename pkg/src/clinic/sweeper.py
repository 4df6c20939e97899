"""Experiment orchestration over method x strategy x lambda x temperature grids.

Every grid cell is an independent, fully seeded trial. A cell writes one JSON
artifact under ``<out>/trials/``; reruns skip cells whose artifact already
exists, so sweeps are resumable and idempotent. The aggregate ``trials.csv``
contains only deterministic columns (wall-clock lives in ``timing.csv``),
which makes two sweeps with the same spec byte-identical.
"""
from __future__ import annotations

import csv
import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import eval as ev
from . import infotheory as it
from . import losses as ls
from . import model as mdl
from . import train as tr
from .data import Dataset, SynthConfig, generate, load_csv

log = logging.getLogger("clinic.sweeper")

TRIALS_CSV_FIELDS = (
    "method", "strategy", "lambda", "tau_p", "tau_n", "batch_size", "seed",
    "status", "main_acc", "sensitive_acc", "gap", "cond_mi", "params_extra",
)


@dataclass(frozen=True)
class SweepSpec:
    data: SynthConfig | str = field(default_factory=SynthConfig)
    methods: tuple[str, ...] = ("CE", "CLINIC", "ADV")
    strategies: tuple[str, ...] = ("S1",)
    lambdas: tuple[float, ...] = ls.LAMBDA_GRID
    taus_p: tuple[float, ...] = (0.5,)
    taus_n: tuple[float, ...] = (0.5,)
    batch_sizes: tuple[int, ...] = (256,)
    seeds: tuple[int, ...] = (0, 1, 2)
    out_dir: str = "sweep_out"
    train: tr.TrainConfig = field(default_factory=tr.TrainConfig)
    probe: ev.ProbeConfig = field(default_factory=ev.ProbeConfig)
    monitor_bound: bool = True

    def __post_init__(self):
        if not self.methods or not self.seeds or not self.batch_sizes:
            raise ValueError("sweep grid is empty")
        if any(lam < 0 for lam in self.lambdas):
            raise ValueError("lambdas must be non-negative")
        for m in self.methods:
            if m not in tr.METHODS:
                raise ValueError(f"unknown method {m!r}")

    def to_dict(self) -> dict:
        return {
            "data": self.data if isinstance(self.data, str) else self.data.to_dict(),
            "methods": list(self.methods),
            "strategies": list(self.strategies),
            "lambdas": list(self.lambdas),
            "taus_p": list(self.taus_p),
            "taus_n": list(self.taus_n),
            "batch_sizes": list(self.batch_sizes),
            "seeds": list(self.seeds),
            "out_dir": self.out_dir,
            "train": self.train.to_dict(),
            "probe": self.probe.to_dict(),
            "monitor_bound": self.monitor_bound,
        }

    @classmethod
    def from_dict(cls, d: dict) -> SweepSpec:
        d = dict(d)
        if isinstance(d.get("data"), dict):
            d["data"] = SynthConfig.from_dict(d["data"])
        if isinstance(d.get("train"), dict):
            d["train"] = tr.TrainConfig.from_dict(d["train"])
        if isinstance(d.get("probe"), dict):
            d["probe"] = ev.ProbeConfig.from_dict(d["probe"])
        for name in ("methods", "strategies", "lambdas", "taus_p", "taus_n",
                     "batch_sizes", "seeds"):
            if name in d:
                d[name] = tuple(d[name])
        return cls(**d)


@dataclass(frozen=True)
class TrialCell:
    method: str
    strategy: str
    lam: float
    tau_p: float
    tau_n: float
    batch_size: int
    seed: int

    @property
    def key(self) -> str:
        return (
            f"{self.method}_{self.strategy}_lam{self.lam:g}"
            f"_tp{self.tau_p:g}_tn{self.tau_n:g}_B{self.batch_size}_seed{self.seed}"
        )

    def train_config(self, base: tr.TrainConfig) -> tr.TrainConfig:
        reg = replace(
            base.reg,
            strategy=self.strategy if self.strategy != "-" else base.reg.strategy,
            tau_p=self.tau_p,
            tau_n=self.tau_n,
        )
        return replace(
            base, method=self.method, lam=self.lam, reg=reg,
            batch_size=self.batch_size, seed=self.seed,
        )


def grid_cells(spec: SweepSpec) -> list[TrialCell]:
    """The unique trial cells of the spec; CE collapses the regularizer axes."""
    cells: list[TrialCell] = []
    default_tp, default_tn = spec.train.reg.tau_p, spec.train.reg.tau_n
    for method in spec.methods:
        for B in spec.batch_sizes:
            for seed in spec.seeds:
                if method == "CE":
                    cells.append(TrialCell("CE", "-", 0.0, default_tp, default_tn, B, seed))
                elif method == "ADV":
                    for lam in spec.lambdas:
                        cells.append(TrialCell("ADV", "-", lam, default_tp, default_tn, B, seed))
                else:
                    for strategy in spec.strategies:
                        for lam in spec.lambdas:
                            for tp in spec.taus_p:
                                for tn in spec.taus_n:
                                    cells.append(TrialCell("CLINIC", strategy, lam, tp, tn, B, seed))
    unique = {c.key: c for c in cells}
    return [unique[k] for k in sorted(unique)]


def load_sweep_dataset(spec: SweepSpec) -> Dataset:
    if isinstance(spec.data, str):
        return load_csv(spec.data)
    return generate(spec.data)


def make_bound_monitor(cfg: tr.TrainConfig, sink: list[dict]):
    """An on_eval callback appending empirical-mode bound reports to ``sink``.

    Monitoring only applies to penalized contrastive trials (lambda > 0) with
    binary labels; checkpoints whose batch misses a class are skipped.
    """
    if cfg.method != "CLINIC" or cfg.lam <= 0.0:
        return None

    def monitor(ckpt, record, batch):
        if record.reg is None or record.latents is None:
            return
        if batch.y.max() > 1 or batch.s.max() > 1:
            return
        z = record.latents
        if cfg.reg.normalize_latents:
            z = mdl.l2_normalize_rows(z)
        try:
            report = it.theorem1_check(z, batch.y, batch.s, record.reg)
        except ValueError:
            return
        sink.append({"step": ckpt.step, **report.to_dict()})

    return monitor


def run_trial(ds: Dataset, cell: TrialCell, spec: SweepSpec, trial_dir: Path) -> dict:
    """Train, evaluate and persist one grid cell; returns the artifact dict."""
    cfg = cell.train_config(spec.train)
    bound_reports: list[dict] = []
    monitor = make_bound_monitor(cfg, bound_reports) if spec.monitor_bound else None
    artifact: dict = {"key": cell.key, "config": cfg.to_dict()}
    try:
        result = tr.fit(ds, cfg, on_eval=monitor)
        report = ev.evaluate_checkpoint(ds, result.best, cfg, spec.probe)
        artifact.update({
            "status": "diverged" if result.diverged else "ok",
            "report": report.to_dict(),
            "step_seconds": result.step_seconds,
            "skipped_batches": result.skipped_batches,
            "selected_step": result.best.step,
            "bound_reports": bound_reports,
        })
        mdl.save_checkpoint(result.best.bundle, trial_dir / f"{cell.key}.ckpt.json")
    except Exception as err:  # failure isolation: record and continue
        log.warning("trial %s failed: %s", cell.key, err)
        artifact.update({"status": "failed", "error": str(err), "bound_reports": []})
    with open(trial_dir / f"{cell.key}.json", "w") as fh:
        json.dump(artifact, fh, indent=1)
    return artifact


def _row_from_artifact(cell: TrialCell, artifact: dict) -> dict:
    row = {
        "method": cell.method,
        "strategy": cell.strategy,
        "lambda": repr(float(cell.lam)),
        "tau_p": repr(float(cell.tau_p)),
        "tau_n": repr(float(cell.tau_n)),
        "batch_size": str(cell.batch_size),
        "seed": str(cell.seed),
        "status": artifact.get("status", "failed"),
        "main_acc": "", "sensitive_acc": "", "gap": "", "cond_mi": "",
        "params_extra": "",
    }
    report = artifact.get("report")
    if report:
        row.update({
            "main_acc": repr(float(report["main_acc"])),
            "sensitive_acc": repr(float(report["sensitive_acc"])),
            "gap": "" if report["gap"] is None else repr(float(report["gap"])),
            "cond_mi": repr(float(report["cond_mi"])),
            "params_extra": str(int(report["params_extra"])),
        })
    return row


def write_trials_csv(path: Path, cells: list[TrialCell], artifacts: dict[str, dict]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=TRIALS_CSV_FIELDS, lineterminator="\n")
        writer.writeheader()
        for cell in cells:
            writer.writerow(_row_from_artifact(cell, artifacts[cell.key]))


def timing_report(artifacts: dict[str, dict]) -> list[dict]:
    """Per-method mean step time and extra-parameter counts."""
    by_method: dict[str, list[dict]] = {}
    for artifact in artifacts.values():
        if artifact.get("status") != "ok":
            continue
        method = artifact["config"]["method"]
        by_method.setdefault(method, []).append(artifact)
    rows = []
    for method in sorted(by_method):
        arts = by_method[method]
        rows.append({
            "method": method,
            "trials": len(arts),
            "mean_step_seconds": float(np.mean([a["step_seconds"] for a in arts])),
            "mean_wall_seconds": float(np.mean([a["report"]["wall_seconds"] for a in arts])),
            "params_extra": int(arts[0]["report"]["params_extra"]),
        })
    return rows


def write_timing_csv(path: Path, rows: list[dict]) -> None:
    fields = ("method", "trials", "mean_step_seconds", "mean_wall_seconds", "params_extra")
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=fields, lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow({k: row[k] for k in fields})


def write_bound_log(path: Path, cells: list[TrialCell], artifacts: dict[str, dict]) -> None:
    with open(path, "w") as fh:
        for cell in cells:
            for report in artifacts[cell.key].get("bound_reports", []):
                fh.write(json.dumps({"key": cell.key, **report}) + "\n")


def run_sweep(spec: SweepSpec, threads: int = 1) -> ev.ParetoTable:
    """Run (or resume) every grid cell and write the aggregate outputs.

    Returns the Pareto table over successful trials. Outputs under
    ``spec.out_dir``: trials/<key>.json artifacts, trials.csv, timing.csv,
    bound_log.jsonl.
    """
    out = Path(spec.out_dir)
    trial_dir = out / "trials"
    trial_dir.mkdir(parents=True, exist_ok=True)
    ds = load_sweep_dataset(spec)
    cells = grid_cells(spec)

    artifacts: dict[str, dict] = {}
    pending: list[TrialCell] = []
    for cell in cells:
        path = trial_dir / f"{cell.key}.json"
        if path.exists():
            with open(path) as fh:
                artifacts[cell.key] = json.load(fh)
        else:
            pending.append(cell)

    log.info("sweep: %d cells (%d cached, %d to run)",
             len(cells), len(artifacts), len(pending))
    if threads > 1 and len(pending) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            futures = {
                cell.key: pool.submit(run_trial, ds, cell, spec, trial_dir)
                for cell in pending
            }
            for key, future in futures.items():
                artifacts[key] = future.result()
    else:
        for cell in pending:
            artifacts[cell.key] = run_trial(ds, cell, spec, trial_dir)

    write_trials_csv(out / "trials.csv", cells, artifacts)
    write_timing_csv(out / "timing.csv", timing_report(artifacts))
    write_bound_log(out / "bound_log.jsonl", cells, artifacts)

    reports = [
        _report_from_artifact(artifacts[cell.key]) for cell in cells
        if artifacts[cell.key].get("status") == "ok"
    ]
    return ev.pareto_aggregate(reports)


def _report_from_artifact(artifact: dict) -> ev.TrialReport:
    r = artifact["report"]
    return ev.TrialReport(
        method=r["method"], strategy=r["strategy"], lam=r["lambda"], seed=r["seed"],
        main_acc=r["main_acc"], sensitive_acc=r["sensitive_acc"], gap=r["gap"],
        cond_mi_nats=r["cond_mi"], params_extra=r["params_extra"],
        wall_seconds=r["wall_seconds"], tau_p=r["tau_p"], tau_n=r["tau_n"],
        batch_size=r["batch_size"], probe_dev_acc=r.get("probe_dev_acc"),
    )
