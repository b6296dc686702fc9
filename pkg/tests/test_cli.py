import numpy as np
import pytest

from fedseq import cli, compare
from fedseq.config import ConfigError, ExperimentConfig, format_config, parse_config
from fedseq.federation import RoundMetrics

SMALL = """
run_id = t
examples_per_client = 20
test_size = 20
size_menu = 2,3,4,5,6
hidden = 4
rounds = 2
batch_size = 8
"""


def write_cfg(tmp_path, name, extra=""):
    path = tmp_path / name
    path.write_text(SMALL + f"out_dir = {tmp_path}\n" + extra)
    return path


def test_config_round_trip():
    cfg = parse_config(SMALL + "clip_norm = 1.5\nlocal_steps_cap = none\npersist_optimizer = true\n")
    assert cfg.size_menu == (2, 3, 4, 5, 6) and cfg.clip_norm == 1.5 and cfg.persist_optimizer
    assert parse_config(format_config(cfg)) == cfg
    assert parse_config(format_config(ExperimentConfig())) == ExperimentConfig()


def test_config_errors():
    with pytest.raises(ConfigError, match="unknown key"):
        parse_config("learning_rate = 0.1")
    with pytest.raises(ConfigError, match="bad value"):
        parse_config("hidden = many")
    with pytest.raises(ConfigError):
        parse_config("strategy = sorted")
    with pytest.raises(ConfigError):
        parse_config("just words")


def test_overrides_win():
    assert parse_config("seed = 1", seed=9, threads=None).seed == 9


def test_metrics_header_golden():
    assert ",".join(compare.metrics_header(2)) == (
        "run_id,strategy,round,test_acc,avg_train_loss,div_0,div_1,loss_0,loss_1"
    )
    assert compare.fmt(0.1) == "1.00000000e-01"
    with pytest.raises(ValueError):
        compare.fmt(float("nan"))


def test_compare_summary_rows():
    vl = [RoundMetrics(r, a, 1.0) for r, a in enumerate([0.1, 0.5, 0.7, 0.8], 1)]
    fl = [RoundMetrics(r, a, 0.5) for r, a in enumerate([0.6, 0.7, 0.8, 0.8], 1)]
    rows = compare.compare_rows(vl, fl)
    by_kind = {r[0]: r for r in rows[1:] if r[0] != "round"}
    trap = lambda a: sum((a[i] + a[i + 1]) / 2 for i in range(len(a) - 1))
    assert float(by_kind["auc"][2]) == pytest.approx(trap([0.1, 0.5, 0.7, 0.8]), abs=1e-8)
    assert float(by_kind["auc"][3]) == pytest.approx(trap([0.6, 0.7, 0.8, 0.8]), abs=1e-8)
    # 80% of final: vl needs 0.64 -> round 3; fl needs 0.64 -> round 2
    assert by_kind["reach_0.8"][2:5] == [3, 2, -1]
    assert float(rows[1][4]) == pytest.approx(0.5)
    with pytest.raises(ValueError, match="round count mismatch"):
        compare.compare_rows(vl, fl[:3])


def test_generate_run_determinism(tmp_path, capsys):
    cfg = write_cfg(tmp_path, "a.cfg")
    assert cli.main(["generate", "--config", str(cfg)]) == 0
    manifest = tmp_path / "t_vl_seed0.manifest.csv"
    assert manifest.read_text().startswith("client_id,example_index,length,label\n")
    outs = []
    for i, threads in enumerate(["1", "1", "4"]):
        out = tmp_path / f"m{i}.csv"
        assert cli.main(["run", "--config", str(cfg), "--out", str(out), "--threads", threads]) == 0
        outs.append(out.read_bytes())
    assert outs[0] == outs[1] == outs[2]
    rows = compare.read_metrics(tmp_path / "m0.csv")
    assert [r["round"] for r in rows] == ["1", "2"]
    assert "final test accuracy" in capsys.readouterr().out


def test_run_without_dataset_fails(tmp_path, capsys):
    cfg = write_cfg(tmp_path, "a.cfg")
    assert cli.main(["run", "--config", str(cfg), "--out", str(tmp_path / "x.csv")]) == 2
    assert "fedseq generate" in capsys.readouterr().err


def test_run_rejects_mismatched_dataset(tmp_path):
    cfg = write_cfg(tmp_path, "a.cfg")
    cli.main(["generate", "--config", str(cfg)])
    other = write_cfg(tmp_path, "b.cfg", f"dataset = {tmp_path / 't_vl_seed0.npz'}\nn_clients = 4\nsize_menu = 2,3,4,5\n")
    assert cli.main(["run", "--config", str(other), "--out", str(tmp_path / "x.csv")]) == 2


def test_compare_end_to_end(tmp_path):
    vl = write_cfg(tmp_path, "vl.cfg", "construction = vl\nstrategy = vl\nrun_id = armvl\n")
    fl = write_cfg(tmp_path, "fl.cfg", "construction = fl\nstrategy = aligned\nrun_id = armfl\n")
    out = tmp_path / "cmp.csv"
    assert cli.main(["compare", "--vl", str(vl), "--fl", str(fl), "--out", str(out)]) == 0
    lines = out.read_text().splitlines()
    assert lines[0].startswith("kind,round,vl_test_acc,fl_test_acc")
    assert sum(l.startswith("round,") for l in lines) == 2
    assert (tmp_path / "cmp.vl.csv").exists() and (tmp_path / "cmp.fl.csv").exists()

    bad = write_cfg(tmp_path, "bad.cfg", "rounds = 3\nconstruction = fl\n")
    assert cli.main(["compare", "--vl", str(vl), "--fl", str(bad), "--out", str(out)]) == 2


def test_show_config(capsys):
    assert cli.main(["show-config"]) == 0
    assert "hidden = 64" in capsys.readouterr().out


def test_fl_dataset_has_one_length_per_client(tmp_path):
    from fedseq import sequence_data as sd

    cfg = parse_config(SMALL + "construction = fl\n", out_dir=str(tmp_path))
    data = cli.cmd_generate(cfg)
    assert all(len(set(c.lengths().tolist())) == 1 for c in data.clients)
    assert sd.load_dataset(cfg.dataset_path()).construction == "fl"


def test_setup_defaults():
    cfg = ExperimentConfig()
    assert (cfg.n_clients, cfg.batch_size, cfg.lr, cfg.local_epochs) == (5, 32, 0.01, 1)
    assert cfg.size_menu == (14, 17, 21, 24, 28)
    assert cfg.strategy == "vl" and not cfg.persist_optimizer and cfg.divergence_ref == "post"
