import io
import json

import pytest

from coclr import binio
from coclr.benchmark import METHODS, method_config, schedule
from coclr.cli import main
from coclr.config import parse_config
from coclr.experiment import (METRIC_FIELDS, ExperimentError, compare, load_tag, read_metrics, run_experiment,
                              sign_test_p, summary_table, sweep)
from coclr.synthdata import import_dataset

TINY_CFG = """\
schema_version = 1
run.tag = "tiny"
run.seeds = [0, 1]
plan.stages = [["infonce", "both", 2, "init"], ["coclr", "1", 1, "c1-v1"], ["coclr", "2", 1, "c1-v2"]]
plan.k = 2
plan.tau = 0.1
plan.momentum = 0.99
plan.queue_capacity = 16
plan.batch_size = 8
plan.lr = 0.5
plan.backbone = [8]
plan.head = [6, 4]
eval.probe_steps = 40
dataset.n_classes = 3
dataset.per_class = 10
dataset.d_signal = 2
dataset.d_nuisance = 4
dataset.d2 = 4
"""


@pytest.fixture
def cfg_path(tmp_path):
    path = tmp_path / "tiny.cfg"
    path.write_text(TINY_CFG)
    return path


def _run(args, capsys):
    code = main([str(a) for a in args])
    out, err = capsys.readouterr()
    return code, out, err


def test_run_writes_streams_checkpoints_and_summary(cfg_path, tmp_path, capsys):
    out_dir = tmp_path / "out"
    code, out, _ = _run(["run", "--config", cfg_path, "--seeds", "3", "--out", out_dir], capsys)
    assert code == 0 and "tiny" in out
    for s in range(3):
        recs = read_metrics(out_dir / "tiny" / f"seed_{s}" / "metrics.jsonl")
        assert all(list(r) == list(METRIC_FIELDS) for r in recs)
        assert {r["stage"] for r in recs} == {"init", "c1-v1", "c1-v2"}
        assert {r["seed"] for r in recs} == {s}
        ckpt = out_dir / "tiny" / f"seed_{s}" / "checkpoints"
        assert binio.load_params(ckpt / "stage2_view1_query.bin").dims[0] == 6
        assert binio.load_queue(ckpt / "final_queue_view1.bin").fill == 16
    summary = (out_dir / "tiny" / "summary.txt").read_text()
    assert summary == summary_table("tiny", load_tag(out_dir, "tiny"))
    assert parse_config((out_dir / "tiny" / "config.cfg").read_text()).seeds == [0, 1, 2]


def test_same_config_twice_gives_identical_metrics(cfg_path, tmp_path, capsys):
    for name in ("a", "b"):
        assert _run(["run", "--config", cfg_path, "--out", tmp_path / name, "--normalize-timestamps"], capsys)[0] == 0
    for s in (0, 1):
        rel = f"tiny/seed_{s}/metrics.jsonl"
        assert (tmp_path / "a" / rel).read_bytes() == (tmp_path / "b" / rel).read_bytes()
        assert all(r["wall"] == 0.0 for r in read_metrics(tmp_path / "a" / rel))


def test_missing_k_exits_nonzero_naming_the_field(tmp_path, capsys):
    path = tmp_path / "bad.cfg"
    path.write_text("\n".join(l for l in TINY_CFG.splitlines() if not l.startswith("plan.k")))
    code, _, err = _run(["run", "--config", path, "--out", tmp_path], capsys)
    assert code != 0 and "plan.k" in err


def test_output_dir_from_environment(cfg_path, tmp_path, monkeypatch, capsys):
    monkeypatch.setenv("COCLR_OUT", str(tmp_path / "env"))
    assert _run(["run", "--config", cfg_path, "--seeds", "1"], capsys)[0] == 0
    assert (tmp_path / "env" / "tiny" / "seed_0" / "metrics.jsonl").exists()


def test_mid_run_failure_keeps_partial_output(cfg_path, tmp_path, monkeypatch, capsys):
    import coclr.experiment as ex

    calls = {"n": 0}
    real = ex.evaluate_state

    def flaky(state, data, hyper):
        calls["n"] += 1
        if calls["n"] == 2:
            raise RuntimeError("disk on fire")
        return real(state, data, hyper)

    monkeypatch.setattr(ex, "evaluate_state", flaky)
    code, _, err = _run(["run", "--config", cfg_path, "--seeds", "1", "--out", tmp_path], capsys)
    assert code != 0 and "disk on fire" in err
    seed_dir = tmp_path / "tiny" / "seed_0"
    recs = read_metrics(seed_dir / "metrics.jsonl")
    assert any(r["metric"] == "loss_v1" for r in recs)
    assert recs[-1]["metric"] == "error"
    assert "disk on fire" in (seed_dir / "error.txt").read_text()
    assert (seed_dir / "checkpoints" / "stage0_view1_query.bin").exists()


def test_compare_cases(cfg_path, tmp_path, capsys):
    cfg = parse_config(TINY_CFG)
    run_experiment(cfg, tmp_path)
    run_experiment(cfg.with_value("run.tag", "other").with_value("plan.k", 1), tmp_path)
    same = compare(tmp_path, "tiny", "tiny")
    assert same.rows and all(d == 0 for r in same.rows for d in r["deltas"])
    code, out, _ = _run(["compare", "tiny", "other", "--out", tmp_path, "--metric", "probe_v1"], capsys)
    assert code == 0 and "probe_v1" in out
    code, _, err = _run(["compare", "tiny", "ghost", "--out", tmp_path], capsys)
    assert code != 0 and "ghost" in err
    run_experiment(cfg.with_value("run.tag", "fewer"), tmp_path, seeds=[0])
    with pytest.raises(ExperimentError, match="seed"):
        compare(tmp_path, "tiny", "fewer")


def test_sign_test_values():
    assert sign_test_p(5, 0) == pytest.approx(2 / 32)
    assert sign_test_p(0, 0) == 1.0
    assert sign_test_p(3, 2) == 1.0


def test_sweep_bookkeeping(cfg_path, tmp_path, capsys):
    code, out, _ = _run(["sweep", "--config", cfg_path, "--param", "plan.k", "--values", "1,2,5",
                         "--seeds", "2", "--out", tmp_path, "--normalize-timestamps"], capsys)
    assert code == 0 and len(out.strip().splitlines()) == 4
    runs = sorted(p.parent.parent.name + "/" + p.parent.name for p in tmp_path.glob("*/seed_*/metrics.jsonl"))
    assert len(runs) == 6 and {r.split("/")[0] for r in runs} == {"tiny@plan.k=1", "tiny@plan.k=2", "tiny@plan.k=5"}


def test_singleton_sweep_equals_plain_run(tmp_path):
    cfg = parse_config(TINY_CFG)
    run_experiment(cfg, tmp_path / "plain", normalize_timestamps=True)
    sweep(cfg, "plan.k", [2], tmp_path / "swept", normalize_timestamps=True)
    for s in (0, 1):
        a = read_metrics(tmp_path / "plain" / "tiny" / f"seed_{s}" / "metrics.jsonl")
        b = read_metrics(tmp_path / "swept" / "tiny@plan.k=2" / f"seed_{s}" / "metrics.jsonl")
        assert [{**r, "run": None} for r in a] == [{**r, "run": None} for r in b]


def test_tau_sweep_changes_records(tmp_path):
    results = sweep(parse_config(TINY_CFG), "plan.tau", [0.07, 0.5], tmp_path, seeds=[0])
    a = read_metrics(tmp_path / "tiny@plan.tau=0.07" / "seed_0" / "metrics.jsonl")
    b = read_metrics(tmp_path / "tiny@plan.tau=0.5" / "seed_0" / "metrics.jsonl")
    assert [r["value"] for r in a] != [r["value"] for r in b]
    assert set(results) == {"0.07", "0.5"}


def test_sweep_rejects_unknown_parameter(cfg_path, tmp_path, capsys):
    code, _, err = _run(["sweep", "--config", cfg_path, "--param", "plan.kk", "--values", "1",
                         "--out", tmp_path], capsys)
    assert code != 0 and "plan.kk" in err


def test_eval_verb_reads_checkpoints(cfg_path, tmp_path, capsys):
    _run(["run", "--config", cfg_path, "--seeds", "1", "--out", tmp_path], capsys)
    ckpt = tmp_path / "tiny" / "seed_0" / "checkpoints"
    code, out, _ = _run(["eval", "--config", cfg_path, "--view1", ckpt / "stage2_view1_query.bin",
                         "--view2", ckpt / "stage2_view2_query.bin"], capsys)
    got = json.loads(out)
    final = load_tag(tmp_path, "tiny")[0]
    assert code == 0
    for key in ("probe_v1", "probe_v2", "R@1_v1", "R@5_v2"):
        assert got[key] == final[key]


def test_export_dataset_round_trip(cfg_path, tmp_path, capsys):
    code, out, _ = _run(["export-dataset", "--config", cfg_path, "--seed", "4"], capsys)
    data = import_dataset(io.StringIO(out))
    assert code == 0 and data.spec == parse_config(TINY_CFG).dataset_spec(4)
    target = tmp_path / "d.tsv"
    _run(["export-dataset", "--config", cfg_path, "--seed", "4", "-o", target], capsys)
    assert target.read_text() == out


def test_plots_are_svg(cfg_path, tmp_path, capsys):
    _run(["run", "--config", cfg_path, "--seeds", "1", "--out", tmp_path, "--plots"], capsys)
    svg = (tmp_path / "tiny" / "seed_0" / "curves.svg").read_text()
    assert svg.lstrip().startswith("<?xml") and "<svg" in svg


def test_benchmark_methods_share_budgets():
    base = parse_config(TINY_CFG)
    init, cycle, cycles = schedule(base)
    for m in METHODS:
        plan = method_config(base, m).plan(0)
        per_view = {v: sum(s.epochs for s in plan.stages if v in s.views) for v in (1, 2)}
        assert per_view == {1: init + cycle * cycles, 2: init + cycle * cycles}, m
    assert method_config(base, "coclr_k50").plan(0).k == 50
    assert method_config(base, "coclr_sim").plan(0).granularity == "simultaneous"
    with pytest.raises(ValueError):
        method_config(base, "nope")


def test_benchmark_shared_init_matches_separate_runs(cfg_path, tmp_path, capsys):
    code, out, _ = _run(["benchmark", "--config", cfg_path, "--methods", "infonce,coclr", "--seeds", "1",
                         "--out", tmp_path / "shared", "--normalize-timestamps"], capsys)
    assert code == 0 and "infonce -> coclr" in out
    base = parse_config(TINY_CFG)
    run_experiment(method_config(base, "coclr"), tmp_path / "alone", seeds=[0], normalize_timestamps=True)
    rel = "coclr/seed_0/metrics.jsonl"
    assert (tmp_path / "shared" / rel).read_bytes() == (tmp_path / "alone" / rel).read_bytes()
