import csv
import io
from pathlib import Path

import numpy as np
import pytest

from histloss.cli import EXIT_OK, EXIT_RUNTIME, EXIT_USAGE, build_parser, main
from histloss.experiment import METRICS_HEADER
from histloss.toy import read_dataset

from oracles import quad_histogram

GOLDEN = Path(__file__).parent / "golden"

SMALL_RUN = """\
[dataset]
seed = 2
samples = 120
atoms_max = 5

[optimizer]
total_steps = 30
warmup_steps = 5
batch_size = 8

[run]
hidden = 8
eval_interval = 10
eval_batch = 12
"""


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


@pytest.fixture
def dataset(tmp_path, capsys):
    path = tmp_path / "d.txt"
    assert run(capsys, "generate", "--seed", 2, "--samples", 120, "--atoms-max", 5, "--out", path)[0] == EXIT_OK
    return path


@pytest.fixture
def small_config(tmp_path):
    path = tmp_path / "small.ini"
    path.write_text(SMALL_RUN)
    return path


@pytest.mark.parametrize("command", ["main", "generate", "train", "eval", "ablate", "encode"])
def test_help_matches_golden(command, capsys, monkeypatch):
    monkeypatch.setenv("COLUMNS", "80")
    argv = ["--help"] if command == "main" else [command, "--help"]
    code, out, _ = run(capsys, *argv)
    assert code == EXIT_OK
    assert out == (GOLDEN / f"help_{command}.txt").read_text()


def test_every_flag_documents_default():
    parser = build_parser()
    subparsers = next(a for a in parser._actions if a.dest == "command").choices
    for name, sub in subparsers.items():
        for action in sub._actions:
            if action.dest == "help":
                continue
            assert "(default:" in action.help or "(required)" in action.help, (name, action.dest)


def test_generate_is_deterministic(tmp_path, capsys):
    a, b = tmp_path / "a.txt", tmp_path / "b.txt"
    for p in (a, b):
        run(capsys, "generate", "--samples", 30, "--out", p)
    assert a.read_bytes() == b.read_bytes()


def test_generate_rejects_inverted_range(tmp_path, capsys):
    code, _, err = run(capsys, "generate", "--atoms-min", 5, "--atoms-max", 2, "--out", tmp_path / "x.txt")
    assert code == EXIT_USAGE
    assert "atoms-min" in err
    assert not (tmp_path / "x.txt").exists()


def test_generated_file_round_trips(dataset):
    text = dataset.read_text()
    from histloss.toy import dump_dataset

    assert dump_dataset(read_dataset(dataset)) == text


def test_train_writes_run_directory(tmp_path, dataset, small_config, capsys):
    out = tmp_path / "run"
    code, stdout, _ = run(capsys, "train", "--config", small_config, "--dataset", dataset, "--out-dir", out)
    assert code == EXIT_OK, stdout
    header = (out / "metrics.csv").read_text().splitlines()[0]
    assert header == ",".join(METRICS_HEADER)
    assert (out / "correlation.csv").is_file() and (out / "checkpoint.npz").is_file()
    assert "bins = 128" in (out / "run_config.echo").read_text()


def test_train_honours_out_dir_env(tmp_path, dataset, small_config, capsys, monkeypatch):
    monkeypatch.setenv("HISTLOSS_OUT_DIR", str(tmp_path / "root"))
    code, _, _ = run(capsys, "train", "--config", small_config, "--dataset", dataset, "--bins", 64)
    assert code == EXIT_OK
    assert (tmp_path / "root" / "hl_gauss_k64_s0.75" / "metrics.csv").is_file()


def test_baseline_warns_about_bins(tmp_path, dataset, small_config, capsys):
    code, _, err = run(
        capsys, "train", "--config", small_config, "--dataset", dataset, "--mode", "baseline", "--bins", 128,
        "--out-dir", tmp_path / "b",
    )
    assert code == EXIT_OK
    assert "--bins is ignored in baseline mode" in err
    assert not (tmp_path / "b" / "correlation.csv").exists()


def test_missing_dataset_is_usage_error(tmp_path, capsys):
    code, _, err = run(capsys, "train", "--dataset", tmp_path / "nope.txt")
    assert code == EXIT_USAGE
    assert "not found" in err and "histloss generate" in err


def test_unknown_config_key_is_usage_error(tmp_path, capsys):
    path = tmp_path / "bad.ini"
    path.write_text("[run]\nmood = hl_gauss\n")
    assert run(capsys, "train", "--config", path)[0] == EXIT_USAGE


def test_runtime_failure_exit_code(tmp_path, dataset, small_config, capsys):
    cfg = tmp_path / "offgrid.ini"
    cfg.write_text(SMALL_RUN + "\n[grid]\nlo = 5.0\nhi = 6.0\n")
    code, _, err = run(capsys, "train", "--config", cfg, "--dataset", dataset, "--out-dir", tmp_path / "r")
    assert code == EXIT_RUNTIME
    assert "outside the histogram grid" in err


def test_eval_reports_and_writes_records(tmp_path, dataset, small_config, capsys):
    out = tmp_path / "run"
    run(capsys, "train", "--config", small_config, "--dataset", dataset, "--out-dir", out)
    code, stdout, _ = run(capsys, "eval", "--checkpoint", out / "checkpoint.npz", "--dataset", dataset, "--split", "all")
    assert code == EXIT_OK
    report = dict(line.split("=", 1) for line in stdout.split())
    assert report["split"] == "all" and report["samples"] == "120"
    rows = list(csv.DictReader(io.StringIO((out / "eval_all.csv").read_text())))
    assert len(rows) == 120
    mae = np.mean([float(r["abs_error"]) for r in rows])
    assert float(report["energy_mae"]) == pytest.approx(mae, rel=1e-12)


def test_eval_missing_checkpoint(tmp_path, dataset, capsys):
    assert run(capsys, "eval", "--checkpoint", tmp_path / "c.npz", "--dataset", dataset)[0] == EXIT_USAGE


def test_eval_corrupt_checkpoint(tmp_path, dataset, capsys):
    bad = tmp_path / "c.npz"
    bad.write_bytes(b"not a checkpoint")
    assert run(capsys, "eval", "--checkpoint", bad, "--dataset", dataset)[0] == EXIT_RUNTIME


def test_ablate_writes_table(tmp_path, dataset, small_config, capsys):
    code, stdout, err = run(
        capsys, "ablate", "--config", small_config, "--dataset", dataset, "--bins", "128", "--sigma-mults", "0.25,0.75",
        "--workers", 1, "--out-dir", tmp_path / "ab",
    )
    assert code == EXIT_OK
    assert stdout == (tmp_path / "ab" / "ablation.csv").read_text()
    overall = [r for r in csv.DictReader(io.StringIO(stdout)) if r["stratum"] == "overall"]
    assert [r["variant"] for r in overall] == ["baseline_mae", "hl_gauss_k128_s0.25", "hl_gauss_k128_s0.75"]
    assert "sigma trend" in err


def test_ablate_bad_list_is_usage_error(capsys):
    assert run(capsys, "ablate", "--bins", "128,x")[0] == EXIT_USAGE


def _encode(capsys, *argv):
    code, out, _ = run(capsys, "encode", *argv)
    assert code == EXIT_OK
    rows = list(csv.DictReader(io.StringIO(out)))
    return np.array([float(r["center"]) for r in rows]), np.array([float(r["prob"]) for r in rows])


def test_encode_midpoint_symmetric(capsys):
    _, p = _encode(capsys, "--energy", 0.5, "--lo", 0, "--hi", 1, "--bins", 64)
    np.testing.assert_array_equal(p, p[::-1])
    assert abs(p.sum() - 1.0) < 1e-9


def test_encode_matches_quadrature(capsys):
    centers, p = _encode(capsys, "--energy", 0.123, "--lo", -0.5, "--hi", 1.5, "--bins", 40, "--sigma-mult", 0.75)
    ref = quad_histogram(0.123, 0.75 * 2.0 / 40, -0.5, 1.5, 40)
    np.testing.assert_allclose(p, ref, atol=1e-9, rtol=0)
    np.testing.assert_allclose(centers, -0.5 + (np.arange(40) + 0.5) * 0.05, atol=1e-15)


def test_encode_bad_grid(capsys):
    assert run(capsys, "encode", "--energy", 0, "--lo", 1, "--hi", 0)[0] == EXIT_USAGE
    assert run(capsys, "encode", "--energy", "abc", "--lo", 0, "--hi", 1)[0] == EXIT_USAGE
