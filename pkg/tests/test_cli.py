import json
import math
import subprocess
import sys

import numpy as np
import pytest

from trevision.cli import main, max_workers
from trevision.config import ExperimentConfig, StageConfig
from trevision.errors import ConfigError
from trevision.datasets import load_csv


def write_config(path, **changes):
    cfg = ExperimentConfig()
    cfg.data.n, cfg.data.n_test = 100, 40
    cfg.train.hidden = [4]
    cfg.train.stage1 = StageConfig(epochs=2, learning_rate=0.05)
    cfg.train.stage2_init = StageConfig(epochs=2, learning_rate=0.05)
    cfg.train.revision = StageConfig(epochs=2, learning_rate=1e-3, optimizer="adam", weight_decay=0.0)
    for key, value in changes.items():
        obj = cfg
        *head, last = key.split("__")
        for h in head:
            obj = getattr(obj, h)
        setattr(obj, last, value)
    cfg.validate().save(path)
    return str(path)


def test_gen_data_line_count(tmp_path):
    cfg = write_config(tmp_path / "c.json")
    assert main(["gen-data", "--config", cfg, "--out", str(tmp_path / "d")]) == 0
    assert len((tmp_path / "d" / "train.csv").read_text().splitlines()) == 101
    meta = json.loads((tmp_path / "d" / "data.json").read_text())
    assert meta["n_train"] == 100 and meta["n_test"] == 40


def test_identity_corruption(tmp_path):
    cfg = write_config(tmp_path / "c.json", noise__rate=0.0)
    assert main(["corrupt", "--config", cfg, "--out", str(tmp_path / "d")]) == 0
    clean = load_csv(tmp_path / "d" / "clean.csv")
    noisy = load_csv(tmp_path / "d" / "noisy.csv", label_kind="noisy")
    np.testing.assert_array_equal(clean.clean_labels, noisy.noisy_labels)
    np.testing.assert_array_equal(clean.features, noisy.features)
    side = json.loads((tmp_path / "d" / "corruption.json").read_text())
    assert side["flip_rate"] == 0.0 and side["T_true"] == np.eye(3).tolist()


def test_half_flip_rate(tmp_path):
    n = 20000
    cfg = write_config(tmp_path / "c.json", noise__rate=0.5, data__n=n, data__n_test=0)
    assert main(["corrupt", "--config", cfg, "--seed", "11", "--out", str(tmp_path / "d")]) == 0
    side = json.loads((tmp_path / "d" / "corruption.json").read_text())
    assert side["seed"] == 11 and side["n"] == n
    assert abs(side["flip_rate"] - 0.5) <= 3 * math.sqrt(0.25 / n)


def test_train_then_report(tmp_path, capsys):
    for method in ("reweight", "reweight-r"):
        cfg = write_config(tmp_path / f"{method}.json", seeds=[0, 1], method=method)
        assert main(["train", "--config", cfg, "--out", str(tmp_path / method)]) == 0
    out = tmp_path / "rep"
    assert main(["report", str(tmp_path / "reweight"), str(tmp_path / "reweight-r"), "--out", str(out),
                 "--figures"]) == 0
    printed = capsys.readouterr().out
    assert printed == (out / "comparison.csv").read_text()
    assert (out / "estimation_error.png").stat().st_size > 0
    assert (out / "accuracy.png").read_bytes()[:8] == b"\x89PNG\r\n\x1a\n"


def test_report_without_figures_writes_no_png(tmp_path):
    cfg = write_config(tmp_path / "c.json")
    main(["train", "--config", cfg, "--out", str(tmp_path / "r")])
    main(["report", str(tmp_path / "r"), "--out", str(tmp_path / "rep")])
    assert not list((tmp_path / "rep").glob("*.png"))


def test_train_is_byte_deterministic(tmp_path):
    cfg = write_config(tmp_path / "c.json")
    for d in ("a", "b"):
        assert main(["train", "--config", cfg, "--out", str(tmp_path / d)]) == 0
    for name in ("history.csv", "model.bin", "summary.txt", "transition_revised.txt"):
        assert (tmp_path / "a" / "seed_0" / name).read_bytes() == (tmp_path / "b" / "seed_0" / name).read_bytes()


def test_parallel_seeds_match_serial(tmp_path, monkeypatch):
    cfg = write_config(tmp_path / "c.json", seeds=[0, 1])
    main(["train", "--config", cfg, "--out", str(tmp_path / "serial")])
    monkeypatch.setenv("TREV_THREADS", "2")
    main(["train", "--config", cfg, "--out", str(tmp_path / "par")])
    for s in ("seed_0", "seed_1"):
        assert (tmp_path / "serial" / s / "history.csv").read_bytes() == (tmp_path / "par" / s / "history.csv").read_bytes()


def test_refuses_non_empty_output(tmp_path, capsys):
    cfg = write_config(tmp_path / "c.json")
    (tmp_path / "d").mkdir()
    (tmp_path / "d" / "keep.txt").write_text("x")
    assert main(["gen-data", "--config", cfg, "--out", str(tmp_path / "d")]) == 2
    assert "--force" in capsys.readouterr().err
    assert main(["gen-data", "--config", cfg, "--out", str(tmp_path / "d"), "--force"]) == 0


@pytest.mark.parametrize("doc,code", [("{", 2), ('{"method": "mae"}', 2), ('{"nope": 1}', 2)])
def test_config_errors_exit_2(tmp_path, doc, code):
    (tmp_path / "c.json").write_text(doc)
    assert main(["train", "--config", str(tmp_path / "c.json"), "--out", str(tmp_path / "o")]) == code


def test_data_error_exit_3(tmp_path):
    (tmp_path / "bad.csv").write_text("label,f1\n1,abc\n")
    cfg = write_config(tmp_path / "c.json", data__source="csv", data__train_csv=str(tmp_path / "bad.csv"))
    assert main(["corrupt", "--config", cfg, "--out", str(tmp_path / "o")]) == 3
    assert main(["report", str(tmp_path / "missing"), "--out", str(tmp_path / "r")]) == 3


def test_numeric_error_exit_4(tmp_path, monkeypatch, capsys):
    import trevision.revision as rev

    # a singular estimate makes the backward correction impossible
    singular = np.array([[0.5, 0.5, 0.0], [0.5, 0.5, 0.0], [0.0, 0.0, 1.0]])
    real = rev.estimate_transition
    monkeypatch.setattr(rev, "estimate_transition", lambda *a: (singular, real(*a)[1]))
    cfg = write_config(tmp_path / "c.json", method="backward")
    assert main(["train", "--config", cfg, "--out", str(tmp_path / "o")]) == 4
    assert "stage 2 initialisation failed" in capsys.readouterr().err


def test_threads_env(monkeypatch):
    monkeypatch.setenv("TREV_THREADS", "3")
    assert max_workers(5) == 3 and max_workers(2) == 2
    for bad in ("0", "many"):
        monkeypatch.setenv("TREV_THREADS", bad)
        with pytest.raises(ConfigError):
            max_workers(2)


def test_console_entry_point(tmp_path):
    cfg = write_config(tmp_path / "c.json")
    res = subprocess.run([sys.executable, "-m", "trevision.cli", "gen-data", "-v", "--config", cfg,
                          "--out", str(tmp_path / "d")], capture_output=True, text=True)
    assert res.returncode == 0, res.stderr
    assert "wrote 100 training" in res.stderr
