import csv
import json
import subprocess
import sys

import numpy as np
import pytest

from nspda import harness
from nspda.cli import main
from nspda.exceptions import InputError

SMALL = ["--pos", "24", "--neg", "24", "--len", "1:12", "--seed", "3", "--eval-lengths", "30", "--eval-size", "40"]
CAPS = ["--set", "curriculum.ntr=4", "--set", "curriculum.stage1_cap=1", "--set", "curriculum.stage2_cap=1",
        "--epochs-cap", "8"]


def _error_line(capsys):
    err = capsys.readouterr().err.strip().splitlines()
    assert len(err) == 1 and err[0].startswith("nspda-lab: error[")
    return err[0]


@pytest.fixture
def data_dir(tmp_path):
    out = tmp_path / "data"
    assert main(["gen-data", "--grammar", "anbn", *SMALL, "--out", str(out)]) == 0
    return out


def test_gen_data_is_byte_identical(tmp_path, data_dir):
    again = tmp_path / "again"
    assert main(["gen-data", "--grammar", "anbn", *SMALL, "--out", str(again)]) == 0
    names = sorted(p.name for p in data_dir.iterdir())
    assert names == ["test.txt", "test_len30.txt", "train.txt", "validation.txt"]
    for n in names:
        assert (data_dir / n).read_bytes() == (again / n).read_bytes()


def test_unknown_grammar_is_usage_error(capsys):
    assert main(["gen-data", "--grammar", "anbncn"]) == 2
    assert "error[usage]" in _error_line(capsys)


def test_unknown_config_key(tmp_path, capsys):
    assert main(["gen-data", "--set", "model.colour=red", "--out", str(tmp_path)]) == 2
    _error_line(capsys)


def test_missing_dataset_exit_3(tmp_path, capsys):
    assert main(["train", "--data", str(tmp_path / "nope")]) == 3
    assert "error[missing-input]" in _error_line(capsys)


def test_bad_checkpoint_exit_4(tmp_path, capsys):
    (tmp_path / "c.json").write_text('{"format_version": 99}')
    assert main(["eval", "--checkpoint", str(tmp_path / "c.json"), "--grammar", "anbn"]) == 4
    assert "error[checkpoint]" in _error_line(capsys)


def test_capacity_error_is_reported(tmp_path, capsys):
    assert main(["program", "--grammar", "anbn", "--states", "2", "--out", str(tmp_path / "p.json")]) != 0
    assert "J > M" in _error_line(capsys)


def test_epochs_cap_zero_emits_initial_metrics(tmp_path, data_dir, capsys):
    out = tmp_path / "run"
    rc = main(["train", "--data", str(data_dir), "--grammar", "anbn", "--epochs-cap", "0", "--replicates", "1",
               "--out", str(out)])
    assert rc == 0
    lines = (out / "metrics_rep0.jsonl").read_text().splitlines()
    first, last = json.loads(lines[0]), json.loads(lines[-1])
    assert first["epoch"] == 0 and first["phase"] == "initial" and first["characters"] == 0
    assert "final" in last and len(lines) == 2
    assert (out / "checkpoint_rep0.json").is_file()


def test_training_is_reproducible_and_aggregates_are_means(tmp_path, data_dir):
    outs = []
    for name in ("a", "b"):
        out = tmp_path / name
        rc = main(["train", "--data", str(data_dir), "--grammar", "anbn", "--algo", "bptt", "--replicates", "2",
                   *CAPS, "--out", str(out)])
        assert rc == 0
        outs.append(out)
    for f in ("metrics_rep0.jsonl", "metrics_rep1.jsonl", "checkpoint_rep0.json", "checkpoint_rep1.json",
              "aggregate.csv"):
        assert (outs[0] / f).read_bytes() == (outs[1] / f).read_bytes(), f
    assert (outs[0] / "checkpoint_rep0.json").read_bytes() != (outs[0] / "checkpoint_rep1.json").read_bytes()
    rows = list(csv.DictReader((outs[0] / "aggregate.csv").open()))
    assert rows[-1]["replicate"] == "mean"
    finals = [json.loads((outs[0] / f"metrics_rep{r}.jsonl").read_text().splitlines()[-1])["final"] for r in (0, 1)]
    for key in ("test", "len30", "pooled"):
        mean = np.mean([f["test_error"][key] for f in finals])
        assert float(rows[-1][f"test_error_{key}"]) == pytest.approx(mean, abs=1e-12)
    records = [json.loads(l) for l in (outs[0] / "metrics_rep0.jsonl").read_text().splitlines()[:-1]]
    chars = [r["characters"] for r in records]
    assert chars == sorted(chars)


def test_env_var_overrides_output(tmp_path, data_dir, monkeypatch):
    monkeypatch.setenv("NSPDA_OUT", str(tmp_path / "env"))
    assert main(["train", "--data", str(data_dir), "--grammar", "anbn", "--epochs-cap", "0", "--replicates", "1",
                 "--out", str(tmp_path / "ignored")]) == 0
    assert (tmp_path / "env" / "aggregate.csv").is_file() and not (tmp_path / "ignored").exists()


def test_config_file_and_flag_precedence(tmp_path):
    cfg_file = tmp_path / "run.cfg"
    cfg_file.write_text("# comment\ngrammar = dyck2\nopt.algo = rtrl\nnoise.np = 0.2\ndata.len = 2:9\n")
    cfg = harness.build_config({**harness.read_config_file(cfg_file), "opt.algo": "bptt"})
    assert (cfg.grammar, cfg.algo, cfg.noise_np, cfg.data_len) == ("dyck2", "bptt", 0.2, (2, 9))
    lines = harness.config_lines(cfg)
    assert harness.build_config(dict(l.split(" = ") for l in lines)) == cfg
    with pytest.raises(InputError):
        harness.build_config({"data.len": "9"})


def test_program_then_eval(tmp_path, capsys):
    path = tmp_path / "p.json"
    assert main(["program", "--grammar", "anbn", "--out", str(path)]) == 0
    out = capsys.readouterr().out
    assert "W_s 0:" in out and "W_a -1:" in out
    assert main(["eval", "--checkpoint", str(path), "--lengths", "60,480", "--size", "100", "--json"]) == 0
    table = json.loads(capsys.readouterr().out)
    assert table == {"len60": 0.0, "len480": 0.0, "pooled": 0.0}
    assert main(["eval", "--checkpoint", str(path), "--trace", "aabb"]) == 0
    trace = capsys.readouterr().out.splitlines()
    assert len(trace) == 5 and trace[-1].startswith("accept=True")


def test_program_second_order_logs_split(tmp_path, capsys, caplog):
    assert main(["program", "--grammar", "anbn", "--order", "second", "--out", str(tmp_path / "s.json")]) == 0
    assert "split-accepting" in capsys.readouterr().out
    assert any("split-accepting" in r.message for r in caplog.records)


def test_eval_on_data_dir_and_empty_set(tmp_path, data_dir, capsys):
    path = tmp_path / "p.json"
    main(["program", "--grammar", "anbn", "--out", str(path)])
    capsys.readouterr()
    assert main(["eval", "--checkpoint", str(path), "--data", str(data_dir), "--json"]) == 0
    assert json.loads(capsys.readouterr().out)["test"] == 0.0
    from nspda.checkpoint import load_checkpoint
    from nspda.grammars import Dataset
    with pytest.raises(InputError):
        harness.error_percent(load_checkpoint(path), Dataset((), "anbn", 0))


def test_gradcheck_passes_and_is_deterministic(capsys):
    args = ["gradcheck", "--algo", "rtrl", "--trials", "5", "--seed", "2"]
    assert main(args) == 0
    first = capsys.readouterr().out
    assert main(args) == 0
    assert capsys.readouterr().out == first and first.startswith("PASS")
    assert main(["gradcheck", "--algo", "tbptt", "--trials", "5"]) == 0
    assert "measured 0.000e+00" in capsys.readouterr().out


def test_gradcheck_failure_exit_5(monkeypatch, capsys):
    from nspda import verification
    monkeypatch.setattr(verification, "RTRL_TOLERANCE", 0.0)
    monkeypatch.setattr(verification, "check_rtrl", lambda *a, **k: verification.SuiteResult("rtrl", 1.0, 0.0, False))
    assert main(["gradcheck", "--algo", "rtrl", "--trials", "1"]) == 5
    assert "error[verification]" in _error_line(capsys)


def test_usage_errors(capsys):
    assert main([]) == 2
    _error_line(capsys)
    assert main(["train", "--epochs-cap", "x"]) == 2
    _error_line(capsys)


def test_console_script_runs():
    proc = subprocess.run([sys.executable, "-m", "nspda.cli", "gen-data", "--grammar", "zzz"], capture_output=True,
                          text=True)
    assert proc.returncode == 2 and proc.stderr.startswith("nspda-lab: error[usage]")
