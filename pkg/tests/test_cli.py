"""End-to-end command tests driven through cli.main with tiny datasets."""

import csv
import json
import subprocess
import sys

import numpy as np
import pytest

from waverora.cli import (
    EXIT_COMPAT,
    EXIT_CONFIG,
    EXIT_OK,
    main,
)


def write_series_csv(path, rows=120, variables=2, constant=False, freq=0.3):
    t = np.arange(rows, dtype=float)
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["date"] + [f"v{k}" for k in range(variables)])
        for i in range(rows):
            if constant:
                values = [1.0] * variables
            else:
                values = [
                    float(np.sin(freq * t[i] + 0.5 * k) + 0.05 * k)
                    for k in range(variables)
                ]
            writer.writerow([f"2020-01-{i % 28 + 1:02d}"] + values)
    return str(path)


TINY_SETS = [
    "--set", "L=16", "--set", "H=8", "--set", "J=2", "--set", "D=8",
    "--set", "N=1", "--set", "heads=2", "--set", "r=2", "--set", "basis=haar",
    "--set", "dropout=0.0", "--set", "max_epochs=1", "--set", "patience=1",
    "--set", "batch_size=32",
]


def train_tiny(tmp_path, csv_path, out_name="run", extra=()):
    out = tmp_path / out_name
    code = main(
        ["train", "--dataset", csv_path, "--out", str(out), *TINY_SETS, *extra]
    )
    return code, out


# ---------------------------------------------------------------- train


def test_train_writes_artifacts(tmp_path):
    csv_path = write_series_csv(tmp_path / "toy.csv")
    code, out = train_tiny(tmp_path, csv_path)
    assert code == EXIT_OK
    for name in ("model.ckpt", "history.csv", "config.json"):
        assert (out / name).exists()
    resolved = json.loads((out / "config.json").read_text())
    assert resolved["model"]["levels"] == 2
    assert resolved["model"]["variables"] == 2
    assert resolved["training"]["max_epochs"] == 1
    assert resolved["dataset"] == csv_path


def test_train_unknown_dataset_names_registry(tmp_path, capsys):
    code = main(["train", "--dataset", "no_such_set", "--out", str(tmp_path / "x")])
    assert code == EXIT_CONFIG
    err = capsys.readouterr().err
    assert "no_such_set" in err
    assert "ETTh1" in err


def test_train_rejects_zero_levels(tmp_path):
    csv_path = write_series_csv(tmp_path / "toy.csv")
    code, _ = train_tiny(tmp_path, csv_path, extra=["--set", "J=0"])
    assert code == EXIT_CONFIG


def test_train_unknown_key_rejected(tmp_path):
    csv_path = write_series_csv(tmp_path / "toy.csv")
    code, _ = train_tiny(tmp_path, csv_path, extra=["--set", "bogus=1"])
    assert code == EXIT_CONFIG


def test_config_file_with_flag_override(tmp_path):
    csv_path = write_series_csv(tmp_path / "toy.csv")
    cfg = {
        "dataset": csv_path,
        "model": {
            "lookback": 16, "horizon": 8, "levels": 3, "embed_dim": 8,
            "encoder_layers": 1, "heads": 2, "routes": 2, "basis": "haar",
            "dropout": 0.0,
        },
        "training": {"max_epochs": 1, "patience": 1},
    }
    cfg_path = tmp_path / "run.json"
    cfg_path.write_text(json.dumps(cfg))
    out = tmp_path / "out"
    code = main(["train", "--config", str(cfg_path), "--set", "J=2", "--out", str(out)])
    assert code == EXIT_OK
    resolved = json.loads((out / "config.json").read_text())
    assert resolved["model"]["levels"] == 2  # flag beats file


def test_env_var_dataset_root(tmp_path, monkeypatch):
    write_series_csv(tmp_path / "mine.csv")
    registry = {"mine": {"path": "mine.csv", "fractions": [0.7, 0.1, 0.2]}}
    reg_path = tmp_path / "registry.json"
    reg_path.write_text(json.dumps(registry))
    monkeypatch.setenv("WAVERORA_DATA", str(tmp_path))
    code, out = train_tiny(
        tmp_path, "mine", out_name="envrun", extra=["--registry", str(reg_path)]
    )
    assert code == EXIT_OK
    assert (out / "model.ckpt").exists()


# ---------------------------------------------------------------- eval


def test_eval_single_checkpoint(tmp_path):
    csv_path = write_series_csv(tmp_path / "toy.csv")
    _, run_out = train_tiny(tmp_path, csv_path)
    eval_out = tmp_path / "eval"
    code = main(
        [
            "eval", "--dataset", csv_path, "--out", str(eval_out),
            "--checkpoint", str(run_out / "model.ckpt"),
        ]
    )
    assert code == EXIT_OK
    with open(eval_out / "metrics.csv") as f:
        rows = list(csv.DictReader(f))
    assert len(rows) == 1
    assert rows[0]["horizon"] == "8"
    assert np.isfinite(float(rows[0]["mse"]))
    assert np.isfinite(float(rows[0]["mae"]))
    assert (eval_out / "config.json").exists()


def test_eval_one_row_per_checkpoint(tmp_path):
    csv_path = write_series_csv(tmp_path / "toy.csv")
    _, run_a = train_tiny(tmp_path, csv_path, out_name="run_a")
    _, run_b = train_tiny(
        tmp_path, csv_path, out_name="run_b", extra=["--set", "H=12"]
    )
    eval_out = tmp_path / "eval"
    code = main(
        [
            "eval", "--dataset", csv_path, "--out", str(eval_out),
            "--checkpoint", str(run_a / "model.ckpt"),
            "--checkpoint", str(run_b / "model.ckpt"),
        ]
    )
    assert code == EXIT_OK
    with open(eval_out / "metrics.csv") as f:
        rows = list(csv.DictReader(f))
    assert [row["horizon"] for row in rows] == ["8", "12"]


def test_eval_mismatched_variables_exits_3(tmp_path):
    two_var = write_series_csv(tmp_path / "two.csv", variables=2)
    three_var = write_series_csv(tmp_path / "three.csv", variables=3)
    _, run_out = train_tiny(tmp_path, two_var)
    code = main(
        [
            "eval", "--dataset", three_var, "--out", str(tmp_path / "eval"),
            "--checkpoint", str(run_out / "model.ckpt"),
        ]
    )
    assert code == EXIT_COMPAT


# ---------------------------------------------------------------- decompose


def test_decompose_writes_components(tmp_path):
    csv_path = write_series_csv(tmp_path / "sig.csv", rows=64)
    out = tmp_path / "dec"
    code = main(["decompose", csv_path, "--basis", "haar", "-J", "2", "--out", str(out)])
    assert code == EXIT_OK
    for name in ("high_1.csv", "high_2.csv", "low_2.csv", "energy.csv"):
        assert (out / name).exists()
    sidecar = json.loads((out / "decompose.json").read_text())
    assert sidecar["basis"] == "haar"
    assert sidecar["schedule"] == [32, 16]
    with open(out / "high_1.csv") as f:
        rows = list(csv.DictReader(f))
    assert len(rows) == 32
    assert set(rows[0]) == {"v0", "v1"}


def test_decompose_constant_signal_has_no_detail_energy(tmp_path):
    csv_path = write_series_csv(tmp_path / "flat.csv", rows=64, constant=True)
    out = tmp_path / "dec"
    code = main(["decompose", csv_path, "--basis", "sym3", "-J", "3", "--out", str(out)])
    assert code == EXIT_OK
    with open(out / "energy.csv") as f:
        rows = list(csv.DictReader(f))
    for row in rows:
        if row["component"].startswith("high"):
            assert float(row["v0"]) < 1e-20
            assert float(row["v1"]) < 1e-20


def test_decompose_depth_beyond_signal_exits_2(tmp_path):
    csv_path = write_series_csv(tmp_path / "short.csv", rows=16)
    code = main(["decompose", csv_path, "--basis", "haar", "-J", "10"])
    assert code == EXIT_CONFIG


def test_decompose_unknown_basis_exits_2(tmp_path):
    csv_path = write_series_csv(tmp_path / "sig.csv", rows=64)
    code = main(["decompose", csv_path, "--basis", "db9000"])
    assert code == EXIT_CONFIG


# ---------------------------------------------------------------- bench


def test_bench_tiny_grid(tmp_path):
    out = tmp_path / "bench"
    code = main(
        [
            "bench", "--sizes", "32,128", "--width", "32", "--heads", "4",
            "--routes", "4", "--repeats", "2", "--out", str(out),
        ]
    )
    assert code == EXIT_OK
    with open(out / "bench.csv") as f:
        rows = list(csv.DictReader(f))
    assert len(rows) == 8  # 4 mechanisms x 2 sizes
    mechanisms = {row["mechanism"] for row in rows}
    assert mechanisms == {"softmax", "linear", "rora", "rora_core"}
    summary = json.loads((out / "summary.json").read_text())
    assert set(summary["slopes"]) == mechanisms
    assert summary["rora_over_softmax_at_max_tokens"] > 0


def test_bench_zero_repeats_exits_2(tmp_path):
    code = main(["bench", "--sizes", "32", "--repeats", "0", "--out", str(tmp_path / "b")])
    assert code == EXIT_CONFIG


# ---------------------------------------------------------------- ablate


def test_ablate_single_variant(tmp_path):
    csv_path = write_series_csv(tmp_path / "toy.csv")
    out = tmp_path / "abl"
    code = main(
        [
            "ablate", "--dataset", csv_path, "--out", str(out),
            "--variants", "full", *TINY_SETS,
        ]
    )
    assert code == EXIT_OK
    with open(out / "ablation.csv") as f:
        rows = list(csv.DictReader(f))
    assert len(rows) == 1
    assert rows[0]["variant"] == "full"
    resolved = json.loads((out / "config.json").read_text())
    assert resolved["variants"] == ["full"]


def test_ablate_all_variants_share_seed(tmp_path):
    csv_path = write_series_csv(tmp_path / "toy.csv")
    out = tmp_path / "abl"
    code = main(
        ["ablate", "--dataset", csv_path, "--out", str(out), "--seed", "11", *TINY_SETS]
    )
    assert code == EXIT_OK
    with open(out / "ablation.csv") as f:
        rows = list(csv.DictReader(f))
    assert [row["variant"] for row in rows] == [
        "full", "sa", "la", "no_ro", "no_gate", "no_skip",
    ]
    assert {row["seed"] for row in rows} == {"11"}
    for row in rows:
        assert np.isfinite(float(row["test_mse"]))


def test_ablate_unknown_variant_exits_2(tmp_path):
    csv_path = write_series_csv(tmp_path / "toy.csv")
    code = main(
        ["ablate", "--dataset", csv_path, "--out", str(tmp_path / "x"),
         "--variants", "warp", *TINY_SETS]
    )
    assert code == EXIT_CONFIG


# ---------------------------------------------------------------- entry point


def test_module_entry_point_help():
    proc = subprocess.run(
        [sys.executable, "-m", "waverora", "--help"],
        capture_output=True,
        text=True,
    )
    assert proc.returncode == 0
    for command in ("train", "eval", "decompose", "bench", "ablate"):
        assert command in proc.stdout
