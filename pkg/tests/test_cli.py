import csv
import xml.etree.ElementTree as ET

import pytest

from sncl import cli
from sncl.config import ExperimentConfig, parse_config_text
from sncl.errors import ConfigError

BLOBS = """
# quick synthetic run
protocol = blobs
methods = sgd, sncl
buffer = 20
seeds = 0, 1
hidden = 16
"""


def write_cfg(tmp_path, text, name="exp.cfg"):
    p = tmp_path / name
    p.write_text(text)
    return p


def test_parse_config_values():
    cfg = parse_config_text(BLOBS + "lr = 0.05\nrefresh_losses = false\nsweep.alpha = 0.1, 1\n")
    assert cfg.methods == ["sgd", "sncl"] and cfg.seeds == [0, 1]
    assert cfg.lr == 0.05 and cfg.refresh_losses is False
    assert cfg.sweep == {"alpha": [0.1, 1]}
    assert parse_config_text("method = ER\nseed = 3").methods == ["er"]


@pytest.mark.parametrize("text", [
    "colour = red",
    "buffer = 10\nbuffer = 20",
    "protocol = cifar",
    "methods = sncl, magic",
    "buffer = 0",
    "seeds = 1, 1",
    "just words",
    "sweep.depth = 1, 2",
])
def test_config_rejects(text):
    with pytest.raises(ConfigError):
        parse_config_text(text)


def test_method_config_drops_foreign_weights():
    cfg = ExperimentConfig(beta=0.3, gamma=0.2)
    er = cfg.method_config("er")
    assert er.weights.beta == 0 and er.weights.gamma == 0
    assert cfg.method_config("sncl").weights.beta == 0.3


def test_run_is_byte_identical(tmp_path):
    cfg = write_cfg(tmp_path, BLOBS)
    for out in ("a", "b"):
        assert cli.main(["run", "--config", str(cfg), "--out", str(tmp_path / out)]) == 0
    for method in ("sgd", "sncl"):
        for seed in (0, 1):
            a = (tmp_path / "a" / method / f"metrics_{seed}.json").read_bytes()
            b = (tmp_path / "b" / method / f"metrics_{seed}.json").read_bytes()
            assert a == b
    assert (tmp_path / "a" / "aggregate.csv").read_bytes() == (tmp_path / "b" / "aggregate.csv").read_bytes()


def test_run_outputs(tmp_path, capsys):
    cfg = write_cfg(tmp_path, BLOBS + "save_checkpoints = true\ndump_buffer = true\n")
    out = tmp_path / "run"
    assert cli.main(["run", "--config", str(cfg), "--out", str(out), "--seed", "5"]) == 0
    with open(out / "aggregate.csv") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == cli.CSV_HEADER
    assert [r[1] for r in rows[1:]] == ["sgd", "sncl"]
    assert all(r[3] == "1" for r in rows[1:])
    for svg in ("accuracy.svg", "sparsity.svg"):
        root = ET.parse(out / svg).getroot()
        assert root.tag.endswith("svg")
    assert (out / "sncl" / "model_5.json").exists()
    assert (out / "sncl" / "buffer_5.jsonl").read_text().count("\n") == 20
    assert (out / "timing.json").exists()
    capsys.readouterr()
    assert cli.main(["report", str(out)]) == 0
    text = capsys.readouterr().out
    assert "blobs / sncl / seed 5" in text and ",".join(cli.CSV_HEADER) in text


def test_sweep_ranks_cells(tmp_path):
    cfg = write_cfg(tmp_path, "protocol = blobs\nmethods = er\nbuffer = 20\nseeds = 0, 1\n"
                              "sweep.lr = 0.0001, 0.1\n")
    out = tmp_path / "sweep"
    assert cli.main(["sweep", "--config", str(cfg), "--out", str(out)]) == 0
    with open(out / "sweep.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert [r["rank"] for r in rows] == ["1", "2"]
    assert float(rows[0]["val_acc_mean"]) >= float(rows[1]["val_acc_mean"])
    assert rows[0]["lr"] == "0.1"


def test_sweep_without_grid_fails(tmp_path, capsys):
    cfg = write_cfg(tmp_path, BLOBS)
    assert cli.main(["sweep", "--config", str(cfg), "--out", str(tmp_path / "s")]) == 2
    assert "sweep" in capsys.readouterr().err


def test_invalid_config_exit_code(tmp_path, capsys):
    cfg = write_cfg(tmp_path, "protocol = blobs\nwidth = 3\n")
    assert cli.main(["run", "--config", str(cfg)]) == 2
    assert "unknown key" in capsys.readouterr().err
    assert cli.main(["run", "--config", str(tmp_path / "missing.cfg")]) == 2
    assert cli.main(["report", str(tmp_path / "nowhere")]) == 2


def test_aggregate_skips_failed_runs():
    runs = [
        {"protocol": "p", "method": "m", "buffer": 5, "status": "ok", "average_accuracy": 0.5, "forgetting_mean": 0.1},
        {"protocol": "p", "method": "m", "buffer": 5, "status": "ok", "average_accuracy": 0.7, "forgetting_mean": 0.3},
        {"protocol": "p", "method": "m", "buffer": 5, "status": "failed", "average_accuracy": None,
         "forgetting_mean": None},
    ]
    (row,) = cli.aggregate_rows(runs)
    assert row["seed_count"] == 2
    assert row["avg_acc_mean"] == pytest.approx(0.6)
    assert row["avg_acc_std"] == pytest.approx(0.1414213562, rel=1e-6)
