"""Config parsing, run layout, reproducibility of outputs, second-stage and
ensemble entry points, aggregation, and the CLI's exit codes."""

import json
import os
import shutil

import numpy as np
import pytest

from ltlab.cli import main
from ltlab.data import Dataset, load_dataset, save_dataset
from ltlab.harness import (
    ConfigError,
    ExperimentConfig,
    build_datasets,
    collect_rows,
    config_text,
    crt_existing,
    ensemble_existing,
    gen_data,
    parse_config,
    report_text,
    run,
    summarize,
    thread_cap,
)


def base_cfg(out_dir, **kw):
    kw.setdefault("classes", 3)
    kw.setdefault("n_max", 60)
    kw.setdefault("imbalance", 10.0)
    kw.setdefault("dim", 4)
    kw.setdefault("m_per_class", 4)
    kw.setdefault("epochs", 2)
    kw.setdefault("batch_size", 8)
    kw.setdefault("meta_batch_size", 8)
    kw.setdefault("hidden", 8)
    kw.setdefault("seeds", (0,))
    kw.setdefault("crt_steps", 8)
    return ExperimentConfig(out_dir=str(out_dir), **kw)


@pytest.fixture(scope="module")
def runs_dir(tmp_path_factory):
    """One dnet run and one ce run sharing an out_dir, reused read-only."""
    out = tmp_path_factory.mktemp("runs")
    run(base_cfg(out, method="dnet"))
    run(base_cfg(out, method="ce"))
    return out


# ------------------------------------------------------------------- parsing

def test_defaults_without_any_input():
    cfg = parse_config(None)
    assert cfg == ExperimentConfig()
    assert cfg.method == "dnet" and cfg.seeds == (0, 1, 2, 3, 4)


def test_parse_file_with_comments_and_overrides(tmp_path):
    p = tmp_path / "exp.cfg"
    p.write_text(
        "# comparison run\n"
        "\n"
        "method = cdb\n"
        "lambda = 0.5\n"
        "seeds = 3, 4\n"
        "trace_classes = 0,2\n"
        "record_losses = true\n",
        encoding="utf-8",
    )
    cfg = parse_config(str(p), overrides=("method=focal", "epochs=7"))
    assert cfg.method == "focal"  # --set wins over the file
    assert cfg.lam == 0.5
    assert cfg.seeds == (3, 4)
    assert cfg.trace_classes == (0, 2)
    assert cfg.record_losses is True
    assert cfg.epochs == 7


def test_unknown_key_named_in_error(tmp_path):
    p = tmp_path / "exp.cfg"
    p.write_text("lamda = 0.3\n", encoding="utf-8")
    with pytest.raises(ConfigError, match="lamda"):
        parse_config(str(p))


def test_bad_value_and_bad_line_report_position(tmp_path):
    p = tmp_path / "exp.cfg"
    p.write_text("epochs = ten\n", encoding="utf-8")
    with pytest.raises(ConfigError, match="epochs"):
        parse_config(str(p))
    p.write_text("method dnet\n", encoding="utf-8")
    with pytest.raises(ConfigError, match=":1"):
        parse_config(str(p))


def test_override_requires_key_value():
    with pytest.raises(ConfigError, match="--set"):
        parse_config(None, overrides=("alpha",))


def test_missing_config_file_rejected(tmp_path):
    with pytest.raises(ConfigError, match="cannot read"):
        parse_config(str(tmp_path / "nope.cfg"))


@pytest.mark.parametrize(
    "override",
    [
        "method=bogus",
        "stage2=warm",
        "head=tanh",
        "classifier_optimizer=lbfgs",
        "seeds=",
        "epochs=-1",
        "alpha=0",
        "lambda=-0.1",
        "many_min=20",  # equals few_max
        "train_file=only_one.ltds",
        "crt_lr=0",
    ],
)
def test_validation_rejects(override):
    with pytest.raises(ConfigError):
        parse_config(None, overrides=(override,))


def test_trace_spellings():
    assert parse_config(None, overrides=("trace_classes=auto",)).trace_classes == "auto"
    assert parse_config(None, overrides=("trace_classes=none",)).trace_classes == "none"
    assert parse_config(None, overrides=("trace_classes=1,2",)).trace_classes == (1, 2)


def test_config_text_round_trips(tmp_path):
    cfg = base_cfg(tmp_path, method="effnum", lam=0.125, seeds=(7,),
                   trace_classes=(0, 2), ensemble_members=("a/b", "c/d"))
    p = tmp_path / "resolved.cfg"
    p.write_text(config_text(cfg), encoding="utf-8")
    assert parse_config(str(p)) == cfg
    assert "lambda = 0.125" in config_text(cfg)  # file key, not the attr name


def test_thread_cap(monkeypatch):
    monkeypatch.delenv("LTLAB_THREADS", raising=False)
    assert thread_cap() == 1
    monkeypatch.setenv("LTLAB_THREADS", "4")
    assert thread_cap() == 4
    for bad in ("0", "abc"):
        monkeypatch.setenv("LTLAB_THREADS", bad)
        with pytest.raises(ConfigError):
            thread_cap()


# ---------------------------------------------------------------------- data

def test_gen_data_then_train_from_files(tmp_path):
    cfg = base_cfg(tmp_path / "data")
    train_path, meta_path = gen_data(cfg)
    t_direct, m_direct = build_datasets(cfg)
    t_file, m_file = build_datasets(
        ExperimentConfig(train_file=train_path, meta_file=meta_path)
    )
    assert np.array_equal(t_file.features, t_direct.features)
    assert np.array_equal(t_file.labels, t_direct.labels)
    assert np.array_equal(m_file.features, m_direct.features)
    assert np.all(m_file.per_class_counts == cfg.m_per_class)


def test_files_must_agree_on_class_count(tmp_path):
    a = tmp_path / "a.ltds"
    b = tmp_path / "b.ltds"
    save_dataset(Dataset(np.zeros((2, 2)), np.array([0, 1]), 2), str(a))
    save_dataset(Dataset(np.zeros((3, 2)), np.array([0, 1, 2]), 3), str(b))
    with pytest.raises(ConfigError, match="class count"):
        build_datasets(ExperimentConfig(train_file=str(a), meta_file=str(b)))


def test_missing_dataset_file_is_config_error(tmp_path):
    with pytest.raises(ConfigError, match="cannot read"):
        build_datasets(ExperimentConfig(train_file=str(tmp_path / "no.ltds"),
                                        meta_file=str(tmp_path / "no2.ltds")))


def test_impossible_synthetic_profile_is_config_error(tmp_path):
    # n_max too small to give the rarest class a single sample after the split
    with pytest.raises(ConfigError):
        build_datasets(base_cfg(tmp_path, n_max=4, imbalance=100.0))


# ------------------------------------------------------------------ run layout

def test_dnet_run_layout_and_schemas(runs_dir):
    d = runs_dir / "dnet" / "seed0"
    for name in ("metrics.csv", "weights_trace.csv", "classifier.ltnn",
                 "dnet.ltnn", "run_config.txt", "manifest.json"):
        assert (d / name).exists(), name

    lines = (d / "metrics.csv").read_text(encoding="ascii").splitlines()
    assert lines[0] == "epoch,overall,many,medium,few,entropy,d_0,d_1,d_2"
    assert len(lines) == 3  # header + 2 epochs
    first = lines[1].split(",")
    assert first[0] == "0"
    assert first[2] == ""  # no class exceeds many_min=100 at this scale
    assert 0.0 <= float(first[1]) <= 1.0
    for v in first[6:]:
        assert 0.0 < float(v) < 1.0  # sigmoid difficulties

    trace = (d / "weights_trace.csv").read_text(encoding="ascii").splitlines()
    assert trace[0] == "step,class,normalized_weight"
    # trace_classes=auto picks (0, C//2, C-1); 2 epochs of 73//8 steps each
    assert len(trace) == 1 + 3 * 2 * (73 // 8)

    rc = parse_config(str(d / "run_config.txt"))
    assert rc.method == "dnet" and rc.seeds == (0,)

    manifest = json.loads((d / "manifest.json").read_text(encoding="utf-8"))
    assert set(manifest) == {"started", "finished", "wall_seconds"}


def test_ce_run_uses_base_schema(runs_dir):
    d = runs_dir / "ce" / "seed0"
    lines = (d / "metrics.csv").read_text(encoding="ascii").splitlines()
    assert lines[0] == "epoch,overall,many,medium,few"
    assert not (d / "weights_trace.csv").exists()
    assert not (d / "dnet.ltnn").exists()


def test_run_returns_final_epoch_rows(runs_dir):
    rows = run(base_cfg(runs_dir, method="dnet"))  # same dirs, same bytes
    assert len(rows) == 1
    r = rows[0]
    assert r.method == "dnet" and r.seed == 0
    assert 0.0 <= r.overall <= 1.0
    assert r.many is None  # counts (56, 15, 2) leave the many split empty
    assert r.wall_seconds >= 0


def test_runs_are_byte_reproducible(tmp_path):
    tracked = ("metrics.csv", "weights_trace.csv", "classifier.ltnn", "dnet.ltnn")
    blobs, configs = [], []
    for sub in ("one", "two"):
        run(base_cfg(tmp_path / sub, method="dnet", epochs=1))
        d = tmp_path / sub / "dnet" / "seed0"
        blobs.append({n: (d / n).read_bytes() for n in tracked})
        configs.append((d / "run_config.txt").read_text("utf-8").splitlines())
    assert blobs[0] == blobs[1]
    # the config echo differs only in where it was told to write
    diff = [(a, b) for a, b in zip(configs[0], configs[1]) if a != b]
    assert all(a.startswith("out_dir") for a, _ in diff)


def test_thread_cap_does_not_change_outputs(tmp_path, monkeypatch):
    outs = []
    for sub, cap in (("serial", "1"), ("pooled", "3")):
        monkeypatch.setenv("LTLAB_THREADS", cap)
        run(base_cfg(tmp_path / sub, method="ce", epochs=1, seeds=(0, 1, 2)))
        per_seed = []
        for s in (0, 1, 2):
            d = tmp_path / sub / "ce" / f"seed{s}"
            per_seed.append((d / "metrics.csv").read_bytes()
                            + (d / "classifier.ltnn").read_bytes())
        outs.append(per_seed)
    assert outs[0] == outs[1]


# ---------------------------------------------------------------- second stage

def test_crt_existing_appends_row_and_checkpoint(runs_dir, tmp_path):
    work = tmp_path / "copy"
    shutil.copytree(runs_dir / "ce", work / "ce")
    cfg = base_cfg(work, method="ce", crt_steps=8)
    before = (work / "ce" / "seed0" / "metrics.csv").read_text("ascii").splitlines()
    rows = crt_existing(cfg)
    after = (work / "ce" / "seed0" / "metrics.csv").read_text("ascii").splitlines()
    assert len(after) == len(before) + 1
    assert after[-1].split(",")[0] == str(int(before[-1].split(",")[0]) + 1)
    assert (work / "ce" / "seed0" / "classifier_crt.ltnn").exists()
    assert len(rows) == 1 and rows[0].method == "ce"


def test_crt_existing_requires_stage1_checkpoint(tmp_path):
    with pytest.raises(ConfigError, match="checkpoint"):
        crt_existing(base_cfg(tmp_path, method="ce"))


def test_stage2_in_run_adds_crt_record(tmp_path):
    cfg = base_cfg(tmp_path, method="ce", epochs=1, stage2="crt", crt_steps=8)
    rows = run(cfg)
    d = tmp_path / "ce" / "seed0"
    lines = (d / "metrics.csv").read_text("ascii").splitlines()
    assert len(lines) == 3  # header, epoch 0, crt row
    assert (d / "classifier_crt.ltnn").exists()
    assert rows[0].overall == float(lines[-1].split(",")[1])


# -------------------------------------------------------------------- ensemble

def test_ensemble_existing_writes_summary(runs_dir, tmp_path):
    members = (str(runs_dir / "dnet" / "seed0"), str(runs_dir / "ce" / "seed0"))
    cfg = base_cfg(tmp_path / "ens", ensemble_members=members)
    result = ensemble_existing(cfg)
    assert len(result["members"]) == 2
    assert result["ensemble"].overall is not None
    csv = (tmp_path / "ens" / "ensemble_metrics.csv").read_text("ascii").splitlines()
    assert csv[0] == "name,overall,many,medium,few"
    assert len(csv) == 4  # two members + the ensemble line
    assert csv[-1].startswith("ensemble,")


def test_ensemble_needs_two_members(tmp_path):
    with pytest.raises(ConfigError, match="two"):
        ensemble_existing(base_cfg(tmp_path, ensemble_members=("just_one",)))


def test_ensemble_needs_run_config(runs_dir, tmp_path):
    bogus = tmp_path / "notarun"
    bogus.mkdir()
    cfg = base_cfg(tmp_path, ensemble_members=(str(runs_dir / "ce" / "seed0"),
                                               str(bogus)))
    with pytest.raises(ConfigError, match="run_config"):
        ensemble_existing(cfg)


# ------------------------------------------------------------------- reporting

def test_collect_and_summarize(runs_dir):
    rows = collect_rows([str(runs_dir)])
    methods = sorted({r.method for r in rows})
    assert methods == ["ce", "dnet"]
    summaries = summarize(rows)
    assert [s.method for s in summaries] == ["ce", "dnet"]
    for s in summaries:
        assert s.seeds == 1
        assert s.medians["many"] is None  # empty split stays empty
        assert s.iqrs["overall"] == 0.0
    text = report_text(summaries)
    assert "dnet" in text and "ce" in text
    assert "-" in text  # the empty many column


def test_collect_rows_direct_run_dir(runs_dir):
    rows = collect_rows([str(runs_dir / "dnet" / "seed0")])
    assert len(rows) == 1
    assert rows[0].method == "dnet" and rows[0].seed == 0
    assert rows[0].entropy is not None


# ------------------------------------------------------------------------ CLI

def test_cli_gen_data_and_train(tmp_path, capsys):
    cfg_path = tmp_path / "exp.cfg"
    cfg_path.write_text(config_text(base_cfg(tmp_path / "out", method="ce", epochs=1)),
                        encoding="utf-8")
    assert main(["gen-data", "--config", str(cfg_path)]) == 0
    assert "train.ltds" in capsys.readouterr().out
    assert main(["train", "--config", str(cfg_path)]) == 0
    out = capsys.readouterr().out
    assert "ce seed=0 overall=" in out
    assert "many=-" in out  # empty split prints a dash


def test_cli_report(runs_dir, tmp_path, capsys):
    csv_path = tmp_path / "summary.csv"
    assert main(["report", str(runs_dir), "--csv", str(csv_path)]) == 0
    out = capsys.readouterr().out
    assert "method" in out and "dnet" in out
    header = csv_path.read_text("ascii").splitlines()[0]
    assert header.startswith("method,seeds,overall_median,overall_iqr")


def test_cli_config_errors_exit_2(tmp_path, capsys):
    assert main(["train", "--set", "method=bogus"]) == 2
    assert "config error" in capsys.readouterr().err
    assert main(["train", "--set", "lamda=0.3"]) == 2
    capsys.readouterr()
    bad = tmp_path / "bad.ltds"
    bad.write_text("not a header\n", encoding="ascii")
    code = main(["train", "--set", f"train_file={bad}",
                 "--set", f"meta_file={bad}"])
    assert code == 2
    assert "config error" in capsys.readouterr().err


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_cli_numeric_failure_exits_3(tmp_path, capsys):
    cfg_path = tmp_path / "exp.cfg"
    cfg_path.write_text(
        config_text(base_cfg(tmp_path / "out", method="ce", epochs=1,
                             alpha=1e200, classifier_optimizer="adam")),
        encoding="utf-8",
    )
    assert main(["train", "--config", str(cfg_path)]) == 3
    assert "numeric failure" in capsys.readouterr().err
    # the partial run was still flushed for post-mortems
    assert (tmp_path / "out" / "ce" / "seed0" / "metrics.csv").exists()
