"""Command-line entry point.

Verbs: gen-data, train, probe, sweep, mi, report. Every command reads an
optional JSON config (--config), applies repeatable dotted-key overrides
(--set a.b=value; file < overrides), and writes a manifest carrying the
effective config, its hash, the seed, and the library version next to its
outputs. Exit codes: 0 ok, 1 usage error, 2 runtime failure, 3 divergence.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from . import eval as ev
from . import infotheory as it
from . import model as mdl
from . import sweeper as sw
from . import train as tr
from .data import SynthConfig, generate, load_csv, write_csv, ys_joint

log = logging.getLogger("clinic")

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_RUNTIME = 2
EXIT_DIVERGED = 3


class UsageError(ValueError):
    pass


class Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def configure_logging() -> None:
    level = os.environ.get("CLINIC_LOG", "info").lower()
    levels = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}
    if level not in levels:
        raise UsageError(f"CLINIC_LOG must be one of {sorted(levels)}, got {level!r}")
    logging.basicConfig(level=levels[level], format="%(name)s %(levelname)s %(message)s")


def parse_override(text: str) -> tuple[list[str], object]:
    if "=" not in text:
        raise UsageError(f"--set expects key=value, got {text!r}")
    key, raw = text.split("=", 1)
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw  # bare strings like S1 stay strings
    return key.split("."), value


def apply_overrides(config: dict, overrides: list[str]) -> dict:
    for text in overrides:
        path, value = parse_override(text)
        node = config
        for part in path[:-1]:
            node = node.setdefault(part, {})
            if not isinstance(node, dict):
                raise UsageError(f"--set {text}: {part!r} is not a section")
        leaf = path[-1]
        old = node.get(leaf)
        if old is not None and not isinstance(old, dict):
            if isinstance(old, bool) != isinstance(value, bool) or (
                not isinstance(old, bool)
                and isinstance(old, (int, float)) != isinstance(value, (int, float))
            ):
                if not (isinstance(old, str) and isinstance(value, str)):
                    raise UsageError(
                        f"--set {text}: expected {type(old).__name__}, got {type(value).__name__}"
                    )
        node[leaf] = value
    return config


def load_config(path: str | None, overrides: list[str]) -> dict:
    config: dict = {}
    if path:
        try:
            with open(path) as fh:
                config = json.load(fh)
        except FileNotFoundError:
            raise UsageError(f"config file not found: {path}")
        except json.JSONDecodeError as err:
            raise UsageError(f"config {path} is not valid JSON: {err}")
    return apply_overrides(config, overrides or [])


def config_hash(config: dict) -> str:
    canonical = json.dumps(config, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode()).hexdigest()


def write_manifest(out: Path, command: str, config: dict, seed: int, extra: dict | None = None) -> None:
    manifest = {
        "command": command,
        "version": __version__,
        "seed": seed,
        "config_hash": config_hash(config),
        "effective_config": config,
    }
    if extra:
        manifest.update(extra)
    with open(out / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _build(cls, config: dict, section: str):
    try:
        return cls.from_dict(config)
    except (TypeError, ValueError) as err:
        raise UsageError(f"bad {section} config: {err}")


def _dataset_from_config(config: dict):
    data_cfg = config.get("data", {})
    if isinstance(data_cfg, str) or "csv" in data_cfg:
        path = data_cfg if isinstance(data_cfg, str) else data_cfg["csv"]
        return load_csv(path), {"csv": path}
    synth = _build(SynthConfig, data_cfg, "data")
    return generate(synth), synth.to_dict()


def cmd_gen_data(args) -> int:
    config = load_config(args.config, args.set)
    if args.seed is not None:
        config["seed"] = args.seed
    cfg = _build(SynthConfig, config, "gen-data")
    out = Path(args.out or "data_out")
    out.mkdir(parents=True, exist_ok=True)
    ds = generate(cfg)
    write_csv(ds, out / "data.csv")
    joint = ys_joint(cfg)
    write_manifest(out, "gen-data", cfg.to_dict(), cfg.seed, {
        "rho": cfg.rho,
        "analytic_mi_y_s_nats": it.mi_from_table(joint),
        "rows": int(cfg.n),
        "csv": "data.csv",
    })
    log.info("wrote %s rows to %s", cfg.n, out / "data.csv")
    return EXIT_OK


def cmd_train(args) -> int:
    config = load_config(args.config, args.set)
    train_cfg = _build(tr.TrainConfig, config.get("train", {}), "train")
    if args.seed is not None:
        train_cfg = tr.TrainConfig.from_dict({**train_cfg.to_dict(), "seed": args.seed})
    probe_cfg = _build(ev.ProbeConfig, config.get("probe", {}), "probe")
    ds, data_desc = _dataset_from_config(config)
    out = Path(args.out or "train_out")
    out.mkdir(parents=True, exist_ok=True)

    result = tr.fit(ds, train_cfg, log_path=out / "train_log.jsonl")
    report = ev.evaluate_checkpoint(ds, result.best, train_cfg, probe_cfg)
    mdl.save_checkpoint(result.best.bundle, out / "checkpoint.json")
    with open(out / "report.json", "w") as fh:
        json.dump(report.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")
    effective = {"data": data_desc, "train": train_cfg.to_dict(), "probe": probe_cfg.to_dict()}
    write_manifest(out, "train", effective, train_cfg.seed, {
        "selected_step": result.best.step,
        "diverged": result.diverged,
    })
    if result.diverged:
        log.error("training diverged; kept last finite checkpoint")
        return EXIT_DIVERGED
    return EXIT_OK


def cmd_probe(args) -> int:
    config = load_config(args.config, args.set)
    if "checkpoint" not in config:
        raise UsageError("probe config needs a 'checkpoint' path")
    probe_cfg = _build(ev.ProbeConfig, config.get("probe", {}), "probe")
    seed = args.seed if args.seed is not None else int(config.get("seed", 0))
    ds, data_desc = _dataset_from_config(config)
    bundle = mdl.load_checkpoint(config["checkpoint"])
    out = Path(args.out or "probe_out")
    out.mkdir(parents=True, exist_ok=True)

    z = {name: mdl.encode_values(bundle.encoder, ds.subset(name)[0])
         for name in ("train", "dev", "test")}
    probe, dev_acc = ev.train_probe(
        z["train"], ds.subset("train")[2], z["dev"], ds.subset("dev")[2],
        probe_cfg, ev.derive_seed(seed, "probe"), num_sensitive=ds.num_sensitive,
    )
    test_acc = ev.accuracy(
        mdl.probe_values(probe, z["test"]).argmax(axis=1), ds.subset("test")[2]
    )
    payload = {"sensitive_acc": test_acc, "probe_dev_acc": dev_acc}
    with open(out / "probe_report.json", "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
    effective = {"data": data_desc, "probe": probe_cfg.to_dict(),
                 "checkpoint": config["checkpoint"]}
    write_manifest(out, "probe", effective, seed, payload)
    print(f"sensitive_acc={test_acc:.4f}")
    return EXIT_OK


def cmd_sweep(args) -> int:
    config = load_config(args.config, args.set)
    if args.out:
        config["out_dir"] = args.out
    spec = _build(sw.SweepSpec, config, "sweep")
    out = Path(spec.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    table = sw.run_sweep(spec, threads=args.threads or 1)
    seed = spec.seeds[0] if spec.seeds else 0
    write_manifest(out, "sweep", spec.to_dict(), seed, {
        "trials": len(sw.grid_cells(spec)),
        "ok": len(table.rows),
    })
    return EXIT_OK


def cmd_mi(args) -> int:
    with open(args.joint) as fh:
        joint = it.DiscreteJoint.from_dict(json.load(fh))
    names = joint.names
    if len(names) != 3:
        raise UsageError(f"mi expects a 3-axis joint, got axes {names}")
    a, b, given = names
    marginal_mi = it.exact_mi(joint, a, b)
    cond = it.conditional_mi(joint, a, b, given)
    inter = it.interaction_info(joint, a, b, given)
    print(f"I({a};{b}) = {marginal_mi:.6f} nats")
    print(f"I({a};{b}|{given}) = {cond:.6f} nats")
    print(f"I({a};{b};{given}) = {inter:.6f} nats")
    return EXIT_OK


def _read_trials_csv(path: str) -> list[ev.TrialReport]:
    reports = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            if row.get("status", "ok") != "ok":
                continue
            reports.append(ev.TrialReport(
                method=row["method"], strategy=row["strategy"],
                lam=float(row["lambda"]), seed=int(row["seed"]),
                main_acc=float(row["main_acc"]),
                sensitive_acc=float(row["sensitive_acc"]),
                gap=float(row["gap"]) if row.get("gap") else None,
                cond_mi_nats=float(row["cond_mi"]) if row.get("cond_mi") else 0.0,
                params_extra=int(row["params_extra"]) if row.get("params_extra") else 0,
                wall_seconds=float(row.get("wall_seconds") or 0.0),
                tau_p=float(row.get("tau_p") or 0.5),
                tau_n=float(row.get("tau_n") or 0.5),
                batch_size=int(row.get("batch_size") or 0),
            ))
    return reports


def cmd_report(args) -> int:
    reports = _read_trials_csv(args.trials)
    out = Path(args.out or "report_out")
    out.mkdir(parents=True, exist_ok=True)
    table = ev.pareto_aggregate(reports)

    with open(out / "pareto.csv", "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=ev.ParetoTable.CSV_FIELDS, lineterminator="\n")
        writer.writeheader()
        for row, dominant in zip(table.rows, table.dominant):
            record = row.csv_row()
            record["dominant"] = str(dominant).lower()
            writer.writerow(record)

    # per-lambda curve data: one file per (method, strategy), seed-averaged
    curves: dict[tuple[str, str], dict[float, list[ev.TrialReport]]] = {}
    for r in reports:
        curves.setdefault((r.method, r.strategy), {}).setdefault(r.lam, []).append(r)
    for (method, strategy), by_lam in sorted(curves.items()):
        name = f"curve_{method}_{strategy.replace('-', 'none')}.csv"
        with open(out / name, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["lambda", "main_acc", "sensitive_acc"])
            for lam in sorted(by_lam):
                rows = by_lam[lam]
                writer.writerow([
                    repr(float(lam)),
                    repr(float(np.mean([r.main_acc for r in rows]))),
                    repr(float(np.mean([r.sensitive_acc for r in rows]))),
                ])
    config = {"trials": args.trials}
    write_manifest(out, "report", config, 0, {"rows": len(reports)})
    return EXIT_OK


def build_parser() -> Parser:
    parser = Parser(prog="clinic", description=__doc__)
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="JSON config path")
        p.add_argument("--set", action="append", metavar="KEY=VALUE", default=[],
                       help="override a config key (dotted path, repeatable)")
        p.add_argument("--out", help="output directory")
        p.add_argument("--seed", type=int, help="override the seed")
        p.add_argument("--threads", type=int, help="worker threads (sweep)")

    for verb, fn in (
        ("gen-data", cmd_gen_data), ("train", cmd_train), ("probe", cmd_probe),
        ("sweep", cmd_sweep),
    ):
        p = sub.add_parser(verb)
        common(p)
        p.set_defaults(fn=fn)

    p_mi = sub.add_parser("mi")
    p_mi.add_argument("joint", help="JSON joint distribution (axes + flat probs)")
    p_mi.set_defaults(fn=cmd_mi)

    p_rep = sub.add_parser("report")
    p_rep.add_argument("trials", help="trials.csv from a sweep")
    p_rep.add_argument("--out", help="output directory")
    p_rep.set_defaults(fn=cmd_report)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        configure_logging()
        return args.fn(args)
    except UsageError as err:
        print(f"clinic: {err}", file=sys.stderr)
        return EXIT_USAGE
    except FileNotFoundError as err:
        print(f"clinic: {err}", file=sys.stderr)
        return EXIT_RUNTIME
    except Exception as err:  # runtime failure
        log.exception("command failed")
        print(f"clinic: {err}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
