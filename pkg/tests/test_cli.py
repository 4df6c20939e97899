import json
import math

import numpy as np
import pytest

from clinic import cli
from clinic.data import load_csv


def run(argv):
    return cli.main(argv)


def write_json(path, payload):
    path.write_text(json.dumps(payload))
    return str(path)


def synth_cfg(tmp_path, **kw):
    cfg = dict(num_classes=2, num_sensitive=2, rho=0.5, dim=4, n=400, seed=7)
    cfg.update(kw)
    return write_json(tmp_path / "data.json", cfg)


def test_gen_data_manifest_reports_analytic_mi(tmp_path):
    out = tmp_path / "out"
    assert run(["gen-data", "--config", synth_cfg(tmp_path), "--out", str(out)]) == 0
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["rho"] == 0.5
    assert manifest["analytic_mi_y_s_nats"] == pytest.approx(0.130812, abs=1e-5)
    assert manifest["seed"] == 7
    assert "config_hash" in manifest and "version" in manifest
    ds = load_csv(out / "data.csv")
    assert len(ds.y) == 400


def test_gen_data_rho_zero_manifest_mi_zero(tmp_path):
    out = tmp_path / "out"
    run(["gen-data", "--config", synth_cfg(tmp_path, rho=0.0), "--out", str(out)])
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["analytic_mi_y_s_nats"] == pytest.approx(0.0, abs=1e-12)


def test_gen_data_same_seed_byte_identical(tmp_path):
    cfg = synth_cfg(tmp_path)
    run(["gen-data", "--config", cfg, "--out", str(tmp_path / "a")])
    run(["gen-data", "--config", cfg, "--out", str(tmp_path / "b")])
    assert (tmp_path / "a" / "data.csv").read_bytes() == (tmp_path / "b" / "data.csv").read_bytes()
    assert (tmp_path / "a" / "manifest.json").read_bytes() == \
        (tmp_path / "b" / "manifest.json").read_bytes()


def test_set_overrides_take_precedence(tmp_path):
    out = tmp_path / "out"
    run(["gen-data", "--config", synth_cfg(tmp_path, rho=0.5),
         "--set", "rho=0.0", "--out", str(out)])
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["effective_config"]["rho"] == 0.0


def test_set_type_mismatch_is_usage_error(tmp_path):
    code = run(["gen-data", "--config", synth_cfg(tmp_path),
                "--set", "rho=banana", "--out", str(tmp_path / "o")])
    assert code == 1


def test_unknown_config_key_is_usage_error(tmp_path):
    code = run(["gen-data", "--config", synth_cfg(tmp_path),
                "--set", "bogus_key=3", "--out", str(tmp_path / "o")])
    assert code == 1


def test_unknown_verb_exits_usage(capsys):
    with pytest.raises(SystemExit) as exc:
        run(["frobnicate"])
    assert exc.value.code == 1


def test_train_writes_checkpoint_report_manifest(tmp_path):
    config = {
        "data": {"num_classes": 2, "num_sensitive": 2, "rho": 0.8, "dim": 4,
                 "n": 800, "seed": 3},
        "train": {"method": "CLINIC", "lambda": 0.1, "max_steps": 40,
                  "warmup_steps": 10, "batch_size": 64, "hidden_dim": 16,
                  "latent_dim": 8, "eval_every": 20, "seed": 5},
        "probe": {"steps": 150, "eval_every": 50, "warmup_steps": 10},
    }
    out = tmp_path / "run"
    code = run(["train", "--config", write_json(tmp_path / "t.json", config),
                "--out", str(out)])
    assert code == 0
    report = json.loads((out / "report.json").read_text())
    assert report["method"] == "CLINIC"
    assert 0.0 <= report["main_acc"] <= 1.0
    assert (out / "checkpoint.json").exists()
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["effective_config"]["train"]["lambda"] == 0.1
    assert (out / "train_log.jsonl").exists()


def test_train_lambda_zero_reports_method_ce(tmp_path):
    config = {
        "data": {"num_classes": 2, "num_sensitive": 2, "rho": 0.8, "dim": 4,
                 "n": 600, "seed": 3},
        "train": {"method": "CE", "max_steps": 30, "warmup_steps": 5,
                  "batch_size": 64, "hidden_dim": 16, "latent_dim": 8, "seed": 5},
        "probe": {"steps": 100, "eval_every": 50, "warmup_steps": 10},
    }
    out = tmp_path / "run"
    assert run(["train", "--config", write_json(tmp_path / "t.json", config),
                "--out", str(out)]) == 0
    report = json.loads((out / "report.json").read_text())
    assert report["method"] == "CE"
    assert report["lambda"] == 0.0


def test_mi_command_fixtures(tmp_path, capsys):
    independent = {
        "axes": [["z", 2], ["s", 2], ["y", 2]],
        "probs": [0.125] * 8,
    }
    assert run(["mi", write_json(tmp_path / "ind.json", independent)]) == 0
    out = capsys.readouterr().out
    assert "I(z;s) = 0.000000" in out
    assert "I(z;s|y) = 0.000000" in out
    assert "I(z;s;y) = 0.000000" in out

    tied = {"axes": [["z", 2], ["s", 2], ["y", 2]], "probs": [0.0] * 8}
    tied["probs"][0] = 0.5   # (0,0,0)
    tied["probs"][7] = 0.5   # (1,1,1)
    run(["mi", write_json(tmp_path / "tied.json", tied)])
    out = capsys.readouterr().out
    ln2 = f"{math.log(2):.6f}"
    assert f"I(z;s) = {ln2}" in out
    assert "I(z;s|y) = 0.000000" in out
    assert f"I(z;s;y) = {ln2}" in out


def test_mi_chain_identity_in_printed_digits(tmp_path, capsys):
    rng = np.random.default_rng(4)
    probs = rng.random(16)
    probs /= probs.sum()
    fixture = {"axes": [["z", 4], ["s", 2], ["y", 2]], "probs": probs.tolist()}
    run(["mi", write_json(tmp_path / "r.json", fixture)])
    out = capsys.readouterr().out
    values = [float(line.split("=")[1].split()[0]) for line in out.strip().splitlines()]
    assert values[0] == pytest.approx(values[1] + values[2], abs=1e-6)


def test_report_empty_input_emits_headers(tmp_path, capsys):
    trials = tmp_path / "trials.csv"
    trials.write_text(
        "method,strategy,lambda,tau_p,tau_n,batch_size,seed,status,"
        "main_acc,sensitive_acc,gap,cond_mi,params_extra\n"
    )
    out = tmp_path / "rep"
    assert run(["report", str(trials), "--out", str(out)]) == 0
    pareto = (out / "pareto.csv").read_text().splitlines()
    assert pareto[0].startswith("method,strategy,lambda")
    assert len(pareto) == 1


def test_report_dominance_matches_oracle(tmp_path):
    from helpers import pareto_oracle

    rows = [
        ("CLINIC", "S1", 0.1, 0, "ok", 0.9, 0.55),
        ("CLINIC", "S1", 1.0, 0, "ok", 0.85, 0.52),
        ("ADV", "-", 0.1, 0, "ok", 0.8, 0.7),
        ("CE", "-", 0.0, 0, "ok", 0.92, 0.9),
    ]
    lines = ["method,strategy,lambda,tau_p,tau_n,batch_size,seed,status,"
             "main_acc,sensitive_acc,gap,cond_mi,params_extra"]
    for m, st_, lam, seed, status, main, sens in rows:
        lines.append(f"{m},{st_},{lam},0.5,0.5,64,{seed},{status},{main},{sens},0.0,0.0,0")
    trials = tmp_path / "trials.csv"
    trials.write_text("\n".join(lines) + "\n")
    out = tmp_path / "rep"
    run(["report", str(trials), "--out", str(out)])
    import csv as csvmod

    with open(out / "pareto.csv") as fh:
        got = list(csvmod.DictReader(fh))
    got.sort(key=lambda r: (float(r["lambda"]), r["method"]))
    points = [(float(r["sensitive_acc"]), float(r["main_acc"])) for r in got]
    expected = pareto_oracle(points)
    assert [r["dominant"] == "true" for r in got] == expected
    assert (out / "curve_CLINIC_S1.csv").exists()
    curve = (out / "curve_CLINIC_S1.csv").read_text().splitlines()
    assert curve[0] == "lambda,main_acc,sensitive_acc"
    assert len(curve) == 3


def test_env_log_level_validation(monkeypatch, tmp_path):
    monkeypatch.setenv("CLINIC_LOG", "verbose")
    assert run(["mi", str(tmp_path / "nope.json")]) == 1
    monkeypatch.setenv("CLINIC_LOG", "debug")
    code = run(["mi", str(tmp_path / "nope.json")])
    assert code == 2  # valid log level, missing file is a runtime failure


def test_missing_config_file_is_usage_error(tmp_path):
    assert run(["gen-data", "--config", str(tmp_path / "none.json")]) == 1


def test_probe_command(tmp_path, capsys):
    train_config = {
        "data": {"num_classes": 2, "num_sensitive": 2, "rho": 0.8, "dim": 4,
                 "n": 600, "seed": 3},
        "train": {"method": "CE", "max_steps": 30, "warmup_steps": 5,
                  "batch_size": 64, "hidden_dim": 16, "latent_dim": 8, "seed": 5},
        "probe": {"steps": 100, "eval_every": 50, "warmup_steps": 10},
    }
    run_dir = tmp_path / "run"
    assert run(["train", "--config", write_json(tmp_path / "t.json", train_config),
                "--out", str(run_dir)]) == 0
    probe_config = {
        "data": train_config["data"],
        "checkpoint": str(run_dir / "checkpoint.json"),
        "probe": {"steps": 100, "eval_every": 50, "warmup_steps": 10},
        "seed": 7,
    }
    out = tmp_path / "probe"
    assert run(["probe", "--config", write_json(tmp_path / "p.json", probe_config),
                "--out", str(out)]) == 0
    payload = json.loads((out / "probe_report.json").read_text())
    assert 0.0 <= payload["sensitive_acc"] <= 1.0
    assert (out / "manifest.json").exists()


def test_sweep_command(tmp_path):
    config = {
        "data": {"num_classes": 2, "num_sensitive": 2, "rho": 0.8, "dim": 4,
                 "n": 800, "seed": 2},
        "methods": ["CE", "CLINIC"],
        "strategies": ["S1"],
        "lambdas": [0.1],
        "seeds": [0],
        "batch_sizes": [64],
        "out_dir": str(tmp_path / "sweep"),
        "train": {"max_steps": 40, "warmup_steps": 10, "batch_size": 64,
                  "hidden_dim": 16, "latent_dim": 8, "eval_every": 20},
        "probe": {"steps": 100, "eval_every": 50, "warmup_steps": 10},
    }
    assert run(["sweep", "--config", write_json(tmp_path / "s.json", config)]) == 0
    out = tmp_path / "sweep"
    assert (out / "trials.csv").exists()
    assert (out / "timing.csv").exists()
    assert (out / "manifest.json").exists()
    rows = (out / "trials.csv").read_text().splitlines()
    assert len(rows) == 3  # header + CE + CLINIC
