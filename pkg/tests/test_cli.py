import numpy as np
import pytest

from conftest import tiny_config
from selfcritic import cli
from selfcritic.harness import load_checkpoint, read_metrics_csv


@pytest.fixture
def config_file(tmp_path):
    path = tmp_path / "tiny.txt"
    path.write_text(tiny_config(use_task_embedding=True).to_text())
    return path


@pytest.fixture
def trained(config_file, tmp_path):
    out = tmp_path / "run"
    assert cli.main(["train", "--config", str(config_file), "--out", str(out), "--quiet"]) == 0
    return out


def test_train_writes_exactly_three_artifacts(trained, config_file):
    assert sorted(p.name for p in trained.iterdir()) == ["checkpoint.ckpt", "config.txt", "metrics.csv"]
    ckpt = load_checkpoint(trained / "checkpoint.ckpt")
    assert (trained / "config.txt").read_text() == ckpt.config.to_text()
    assert len(read_metrics_csv(trained / "metrics.csv")) == 2


def test_train_seed_override(config_file, tmp_path):
    out = tmp_path / "s"
    assert cli.main(["train", "--config", str(config_file), "--out", str(out), "--seed", "11", "--quiet"]) == 0
    assert load_checkpoint(out / "checkpoint.ckpt").config.seed == 11


def test_train_bad_config_exits_2(tmp_path, capsys):
    bad = tmp_path / "bad.txt"
    bad.write_text("n_way = -1\n")
    assert cli.main(["train", "--config", str(bad), "--out", str(tmp_path / "o")]) == 2
    assert "config error" in capsys.readouterr().err
    assert cli.main(["train", "--config", str(tmp_path / "missing.txt"), "--out", str(tmp_path / "o")]) == 2


def test_usage_error_exits_2():
    with pytest.raises(SystemExit) as info:
        cli.main(["train"])
    assert info.value.code == 2


def test_train_divergence_exits_1(config_file, tmp_path, monkeypatch, capsys):
    import selfcritic.harness as harness
    from selfcritic.errors import DivergenceError

    def boom(*a, **k):
        raise DivergenceError("non-finite outer loss")

    monkeypatch.setattr(harness, "meta_step", boom)
    out = tmp_path / "d"
    assert cli.main(["train", "--config", str(config_file), "--out", str(out), "--quiet"]) == 1
    assert "diverged" in capsys.readouterr().err
    assert (out / "checkpoint.ckpt").exists()


def test_eval_prints_intervals_and_writes_csv(trained, capsys):
    assert cli.main(["eval", "--ckpt", str(trained / "checkpoint.ckpt"), "--episodes", "6", "--seed", "2"]) == 0
    out = capsys.readouterr().out
    assert "pre-target" in out and "post-target" in out and "±" in out
    lines = (trained / "eval-meta-test-seed2.csv").read_text().splitlines()
    assert lines[0] == "# selfcritic-episodes v1" and len(lines) == 8


def test_eval_unreadable_checkpoint_exits_1(tmp_path, capsys):
    (tmp_path / "x.ckpt").write_bytes(b"garbage")
    assert cli.main(["eval", "--ckpt", str(tmp_path / "x.ckpt")]) == 1
    assert "not a selfcritic checkpoint" in capsys.readouterr().err


def test_gradcheck_passes_and_reports(capsys):
    assert cli.main(["gradcheck", "--instances", "2"]) == 0
    out = capsys.readouterr().out
    assert "max relative error meta.theta" in out and "0 failed" in out


def test_gradcheck_breach_exits_nonzero(monkeypatch, capsys):
    import selfcritic.gradcheck as gc

    monkeypatch.setattr(gc, "META_TOL", 1e-30)
    assert cli.main(["gradcheck", "--instances", "1"]) == 1
    assert "FAIL" in capsys.readouterr().out


def test_inspect_writes_csv_and_svg(trained, tmp_path):
    out = tmp_path / "inspect"
    assert cli.main(["inspect", "--ckpt", str(trained / "checkpoint.ckpt"), "--out", str(out), "--steps", "5"]) == 0
    lines = (out / "inspect.csv").read_text().splitlines()
    assert lines[0] == "# selfcritic-inspect v1"
    assert lines[1] == "example,phase,label,p0,p1,p2"
    assert len(lines) == 2 + 2 * 9
    for line in lines[2:]:
        probs = [float(v) for v in line.split(",")[3:]]
        assert abs(sum(probs) - 1) <= 1e-6
    import xml.etree.ElementTree as ET

    root = ET.fromstring((out / "inspect.svg").read_text())
    assert root.tag.endswith("svg")


def test_inspect_zero_steps_leaves_probabilities_unchanged(trained, tmp_path):
    out = tmp_path / "k0"
    assert cli.main(["inspect", "--ckpt", str(trained / "checkpoint.ckpt"), "--out", str(out), "--steps", "0"]) == 0
    rows = [l.split(",") for l in (out / "inspect.csv").read_text().splitlines()[2:]]
    for before, after in zip(rows[::2], rows[1::2]):
        assert before[3:] == after[3:]


def test_gradcheck_scales_available():
    parser = cli.build_parser()
    args = parser.parse_args(["gradcheck", "--scale", "medium"])
    assert args.scale == "medium" and args.func is cli.cmd_gradcheck
    assert np.isfinite(0.0)
