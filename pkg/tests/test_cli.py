import json
import subprocess
import sys

import numpy as np
import pytest

from relpatch.cli import main


def run_cli(capsys, *argv):
    code = main(list(argv))
    out = capsys.readouterr()
    return code, out.out, out.err


def test_no_args_is_usage_error(capsys):
    code, _, err = run_cli(capsys)
    assert code == 2 and "usage" in err


def test_unknown_subcommand_and_flag(capsys):
    assert run_cli(capsys, "frobnicate")[0] == 2
    assert run_cli(capsys, "labels", "--rows", "2", "--cols", "2", "--bogus")[0] == 2
    assert run_cli(capsys, "labels", "--rows", "two", "--cols", "2")[0] == 2


def test_labels_3x3(capsys):
    code, out, _ = run_cli(capsys, "labels", "--rows", "3", "--cols", "3")
    doc = json.loads(out)
    assert code == 0 and len(doc["relations"]) == 81
    assert sum(len(r) for r in doc["rel"]) == 81
    assert doc["rel"][0][8] == 8 and doc["abs_pos"] == list(range(9))


def test_labels_megapatch_deterministic(capsys, tmp_path):
    a = run_cli(capsys, "labels", "--rows", "8", "--cols", "8", "--megapatch", "3", "--seed", "4")[1]
    b = run_cli(capsys, "labels", "--rows", "8", "--cols", "8", "--megapatch", "3", "--seed", "4")[1]
    assert a == b
    doc = json.loads(a)
    assert doc["N"] == 9 and len(doc["layout"]["row_cuts"]) == 2
    out = tmp_path / "t.json"
    assert run_cli(capsys, "labels", "--rows", "2", "--cols", "2", "--out", str(out))[0] == 0
    assert json.loads(out.read_text())["N"] == 4


def test_labels_infeasible_is_runtime_error(capsys):
    code, _, err = run_cli(capsys, "labels", "--rows", "2", "--cols", "2", "--megapatch", "3")
    assert code == 1 and "error" in err


def test_gradcheck_micro(capsys):
    code, out, _ = run_cli(capsys, "gradcheck", "--config", "micro", "--samples", "4")
    assert code == 0 and "max relative error" in out and "PASS" in out


def test_gradcheck_tiny(capsys):
    code, out, _ = run_cli(capsys, "gradcheck", "--config", "tiny")
    err = float(out.split("max relative error ")[1].split()[0])
    assert code == 0 and err < 1e-4


def test_gradcheck_unknown_preset(capsys):
    assert run_cli(capsys, "gradcheck", "--config", "huge")[0] == 1


def test_pretrain_finetune_eval_plot(capsys, tmp_path):
    common = ["--data", "synthetic:colored-shapes", "--subset", "16", "--batch", "8", "--model", "micro"]
    pre = tmp_path / "pre"
    code, out, err = run_cli(capsys, "pretrain", *common, "--epochs", "2", "--out", str(pre), "--shuffle",
                             "--deterministic")
    assert code == 0, err
    report = json.loads(out)
    assert (pre / "checkpoint.rlvt").is_file() and (pre / "metrics.csv").is_file()
    assert "acc_sp_rel" in report["final_eval"]

    cfg = tmp_path / "ft.cfg"
    cfg.write_text("warmup_epochs = 0\nepochs = 1\n")
    code, out, err = run_cli(capsys, "finetune", "--config", str(cfg), *common,
                             "--checkpoint", str(pre / "checkpoint.rlvt"), "--out", str(tmp_path / "ft"))
    assert code == 0, err
    assert "acc_cls" in json.loads(out)["final_eval"]

    code, out, err = run_cli(capsys, "eval", "--checkpoint", str(pre / "checkpoint.rlvt"), "--tasks",
                             "sp_rel,abs_pos", "--data", "synthetic:colored-shapes", "--subset", "16")
    assert code == 0, err
    assert 0 <= json.loads(out)["acc_abs_pos"] <= 1

    svg = tmp_path / "m.svg"
    code, out, err = run_cli(capsys, "plot", str(pre / "metrics.csv"), "--out", str(svg))
    assert code == 0, err
    assert svg.read_text().lstrip().startswith("<?xml") and "<svg" in svg.read_text()


def test_cli_runs_are_pure_functions_of_inputs(capsys, tmp_path):
    argv = ["downstream", "--data", "synthetic:gradient-fields", "--subset", "16", "--batch", "8",
            "--model", "micro", "--epochs", "2", "--seed", "3", "--deterministic"]
    for k in range(2):
        assert run_cli(capsys, *argv, "--out", str(tmp_path / f"r{k}"))[0] == 0
    a = (tmp_path / "r0" / "metrics.csv").read_bytes()
    assert a == (tmp_path / "r1" / "metrics.csv").read_bytes()
    assert (tmp_path / "r0" / "checkpoint.rlvt").read_bytes() == (tmp_path / "r1" / "checkpoint.rlvt").read_bytes()


def test_runtime_errors_exit_1(capsys, tmp_path):
    assert run_cli(capsys, "eval", "--data", "synthetic:noise")[0] == 1
    assert run_cli(capsys, "finetune", "--data", "synthetic:noise", "--model", "micro")[0] == 1
    assert run_cli(capsys, "pretrain", "--config", str(tmp_path / "missing.cfg"))[0] == 1
    bad = tmp_path / "bad.cfg"
    bad.write_text("learning_rate = 3\n")
    assert run_cli(capsys, "pretrain", "--config", str(bad))[0] == 1
    assert run_cli(capsys, "pretrain", "--data-dir", str(tmp_path), "--model", "micro")[0] == 1
    assert run_cli(capsys, "plot", str(tmp_path / "none.csv"))[0] == 1


def test_module_entry_point():
    r = subprocess.run([sys.executable, "-m", "relpatch", "labels", "--rows", "1", "--cols", "2"],
                       capture_output=True, text=True)
    assert r.returncode == 0 and json.loads(r.stdout)["N"] == 2
    r = subprocess.run([sys.executable, "-m", "relpatch"], capture_output=True, text=True)
    assert r.returncode == 2
