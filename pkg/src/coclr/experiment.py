"""Run configured experiments, write metric streams and checkpoints, summarise.

Output layout for a run with tag ``T`` under ``OUT``::

    OUT/T/config.cfg
    OUT/T/seed_<s>/metrics.jsonl
    OUT/T/seed_<s>/checkpoints/stage<i>_view<v>_{query,key}.bin
    OUT/T/seed_<s>/checkpoints/final_queue_view<v>.bin
    OUT/T/summary.txt

``metrics.jsonl`` holds one JSON object per line with the fields, in this
order: ``schema``, ``run``, ``seed``, ``stage``, ``epoch``, ``metric``,
``value``, ``wall``.  For example::

    {"schema": 1, "run": "coclr", "seed": 0, "stage": "init", "epoch": 1, "metric": "loss_v1", "value": 4.31, "wall": 0.0}

A failed run still keeps what was written and appends a record with
``metric = "error"``; the message goes to ``error.txt`` next to it.
"""

from __future__ import annotations

import json
import math
import os
import time
from dataclasses import dataclass, replace
from pathlib import Path
from statistics import median

from . import binio
from .config import ExperimentConfig, dump_config
from .cotrain import run_plan
from .evaluation import evaluate_state
from .synthdata import generate

METRICS_SCHEMA = 1
METRIC_FIELDS = ("schema", "run", "seed", "stage", "epoch", "metric", "value", "wall")
OUT_ENV = "COCLR_OUT"


class ExperimentError(RuntimeError):
    pass


class MetricsWriter:
    def __init__(self, path: Path, run: str, seed: int, normalize_timestamps: bool = False):
        self.path = Path(path)
        self.run = run
        self.seed = int(seed)
        self.normalize = normalize_timestamps
        self.start = time.monotonic()
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self.fh = open(self.path, "w")

    def write(self, stage: str, epoch: int, metric: str, value: float) -> None:
        wall = 0.0 if self.normalize else round(time.monotonic() - self.start, 3)
        value = None if value is None or (isinstance(value, float) and math.isnan(value)) else float(value)
        rec = dict(zip(METRIC_FIELDS, (METRICS_SCHEMA, self.run, self.seed, stage, int(epoch), metric, value, wall)))
        self.fh.write(json.dumps(rec) + "\n")
        self.fh.flush()

    def close(self) -> None:
        self.fh.close()


def read_metrics(path) -> list[dict]:
    with open(path) as fh:
        return [json.loads(line) for line in fh if line.strip()]


def output_root(out: str | None, cfg: ExperimentConfig | None = None) -> Path:
    if out:
        return Path(out)
    if os.environ.get(OUT_ENV):
        return Path(os.environ[OUT_ENV])
    return Path(cfg["run.out"] if cfg is not None else "runs")


def _init_key(cfg: ExperimentConfig, seed: int):
    """Cache key for the shared InfoNCE initialisation stage."""
    plan = cfg.plan(seed)
    first = plan.stages[0]
    base = replace(plan, stages=(first,), k=0, granularity="cycle")
    return (base, cfg.dataset_spec(seed), cfg.probe_hyper(), cfg["eval.every"])


def _shares_init(cfg: ExperimentConfig, seed: int) -> bool:
    stages = cfg.plan(seed).stages
    return bool(stages) and stages[0].loss == "infonce" and stages[0].view == "both"


def run_seed(cfg: ExperimentConfig, seed: int, root: Path, normalize_timestamps: bool = False,
             init_cache: dict | None = None, data=None):
    """Run one seed of ``cfg``; return ``(final state, final metrics dict)``."""
    seed_dir = root / cfg.tag / f"seed_{seed}"
    ckpt_dir = seed_dir / "checkpoints"
    ckpt_dir.mkdir(parents=True, exist_ok=True)
    writer = MetricsWriter(seed_dir / "metrics.jsonl", cfg.tag, seed, normalize_timestamps)
    plan = cfg.plan(seed)
    data = generate(cfg.dataset_spec(seed)) if data is None else data
    hyper = cfg.probe_hyper()

    def hook(state, d):
        return evaluate_state(state, d, hyper)

    def save_stage(si, stage, state):
        for v in (1, 2):
            binio.save_params(ckpt_dir / f"stage{si}_view{v}_query.bin", state.pairs[v].query)
            binio.save_params(ckpt_dir / f"stage{si}_view{v}_key.bin", state.pairs[v].key)

    labels = [st.label for st in plan.stages]

    def log(rec):
        si, _, epoch, name, value = rec
        writer.write(labels[si], epoch, name, value)

    try:
        state, start = None, 0
        if init_cache is not None and _shares_init(cfg, seed):
            key = _init_key(cfg, seed)
            if key not in init_cache:
                init_cache[key] = run_plan(key[0], data, eval_hook=hook, eval_every=cfg["eval.every"])
            s0, h0 = init_cache[key]
            for rec in h0:
                log(rec)
            state, start = s0.copy(), 1
            save_stage(0, plan.stages[0], state)
        state, _ = run_plan(plan, data, state=state, eval_hook=hook, eval_every=cfg["eval.every"],
                            stage_hook=save_stage, start_stage=start, log_hook=log)
        for v in (1, 2):
            binio.save_queue(ckpt_dir / f"final_queue_view{v}.bin", state.queues[v])
    except Exception as exc:
        writer.write("error", 0, "error", 1.0)
        (seed_dir / "error.txt").write_text(f"{type(exc).__name__}: {exc}\n")
        raise
    finally:
        writer.close()
    return state, final_metrics(read_metrics(seed_dir / "metrics.jsonl"))


def final_metrics(records: list[dict]) -> dict:
    """Last value of each metric in the stream."""
    out = {}
    for rec in records:
        if rec["value"] is not None:
            out[rec["metric"]] = rec["value"]
    return out


def run_experiment(cfg: ExperimentConfig, root: Path, seeds=None, normalize_timestamps: bool = False,
                   init_cache: dict | None = None) -> dict:
    seeds = cfg.seeds if seeds is None else list(seeds)
    tag_dir = root / cfg.tag
    tag_dir.mkdir(parents=True, exist_ok=True)
    (tag_dir / "config.cfg").write_text(dump_config(cfg.with_value("run.seeds", seeds)))
    per_seed = {}
    for s in seeds:
        _, per_seed[s] = run_seed(cfg, s, root, normalize_timestamps, init_cache)
    table = summary_table(cfg.tag, per_seed)
    (tag_dir / "summary.txt").write_text(table)
    return per_seed


def load_tag(root: Path, tag: str) -> dict:
    tag_dir = Path(root) / tag
    if not tag_dir.is_dir():
        raise ExperimentError(f"no run directory for tag {tag!r} under {root}")
    out = {}
    for d in sorted(tag_dir.glob("seed_*")):
        path = d / "metrics.jsonl"
        if path.exists():
            out[int(d.name.split("_", 1)[1])] = final_metrics(read_metrics(path))
    if not out:
        raise ExperimentError(f"tag {tag!r} has no completed seeds")
    return out


def _medians(per_seed: dict) -> dict:
    names = sorted({m for vals in per_seed.values() for m in vals})
    return {m: median(vals[m] for vals in per_seed.values() if m in vals) for m in names}


def summary_table(tag: str, per_seed: dict) -> str:
    meds = _medians(per_seed)
    lines = [f"# {tag}: median over seeds {sorted(per_seed)}", f"{'metric':<22}{'median':>10}"]
    lines += [f"{m:<22}{v:>10.4f}" for m, v in meds.items()]
    return "\n".join(lines) + "\n"


def sign_test_p(n_pos: int, n_neg: int) -> float:
    """Two-sided exact binomial sign test p-value (ties dropped)."""
    n = n_pos + n_neg
    if n == 0:
        return 1.0
    k = min(n_pos, n_neg)
    tail = sum(math.comb(n, i) for i in range(k + 1)) / 2 ** n
    return min(1.0, 2 * tail)


@dataclass
class Comparison:
    baseline: str
    candidate: str
    rows: list

    def render(self) -> str:
        head = (f"{'metric':<22}{self.baseline:>12}{self.candidate:>12}{'delta':>10}"
                f"{'+/-/=':>10}{'sign p':>9}  per-seed deltas")
        lines = [head]
        for r in self.rows:
            deltas = " ".join(f"{d:+.4f}" for d in r["deltas"])
            lines.append(f"{r['metric']:<22}{r['base']:>12.4f}{r['cand']:>12.4f}{r['cand'] - r['base']:>+10.4f}"
                         f"{r['pos']:>4}/{r['neg']}/{r['ties']:<3}{r['p']:>9.3f}  {deltas}")
        return "\n".join(lines) + "\n"


def compare(root: Path, baseline: str, candidate: str, metrics=None) -> Comparison:
    missing = [t for t in (baseline, candidate) if not (Path(root) / t).is_dir()]
    if missing:
        raise ExperimentError(f"missing run directories for tags: {', '.join(missing)}")
    base, cand = load_tag(root, baseline), load_tag(root, candidate)
    if sorted(base) != sorted(cand):
        raise ExperimentError(f"seed sets differ: {sorted(base)} vs {sorted(cand)}")
    bm, cm = _medians(base), _medians(cand)
    names = [m for m in bm if m in cm and (metrics is None or m in metrics)]
    rows = []
    for m in names:
        deltas = [cand[s][m] - base[s][m] for s in sorted(base) if m in base[s] and m in cand[s]]
        pos = sum(d > 0 for d in deltas)
        neg = sum(d < 0 for d in deltas)
        rows.append(dict(metric=m, base=bm[m], cand=cm[m], deltas=deltas, pos=pos, neg=neg,
                         ties=len(deltas) - pos - neg, p=sign_test_p(pos, neg)))
    return Comparison(baseline, candidate, rows)


def sweep(cfg: ExperimentConfig, parameter: str, values, root: Path, seeds=None,
          normalize_timestamps: bool = False, init_cache: dict | None = None) -> dict:
    """One run set per value, tagged ``<tag>@<parameter>=<value>``; returns per-value medians."""
    out = {}
    for value in values:
        sub = cfg.with_value(parameter, value)
        sub = sub.with_value("run.tag", f"{cfg.tag}@{parameter}={json.dumps(value)}")
        per_seed = run_experiment(sub, root, seeds, normalize_timestamps, init_cache)
        out[json.dumps(value)] = _medians(per_seed)
    return out


def render_sweep(parameter: str, results: dict, metrics=("probe_v1", "R@1_v1", "R@1_fused")) -> str:
    lines = [f"{parameter:<16}" + "".join(f"{m:>12}" for m in metrics)]
    for value, meds in results.items():
        lines.append(f"{value:<16}" + "".join(f"{meds.get(m, float('nan')):>12.4f}" for m in metrics))
    return "\n".join(lines) + "\n"


def write_plots(root: Path, tag: str) -> list[Path]:
    """Static SVG curves of losses and probe accuracy per seed."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    written = []
    for seed_dir in sorted((Path(root) / tag).glob("seed_*")):
        recs = read_metrics(seed_dir / "metrics.jsonl")
        fig, axes = plt.subplots(1, 2, figsize=(9, 3.5))
        for ax, prefix in zip(axes, ("loss_", "probe_")):
            for name in sorted({r["metric"] for r in recs if r["metric"].startswith(prefix)}):
                pts = [(r["epoch"], r["value"]) for r in recs if r["metric"] == name and r["value"] is not None]
                ax.plot([p[0] for p in pts], [p[1] for p in pts], marker="." if prefix == "probe_" else None,
                        label=name)
            ax.set_xlabel("epoch")
            ax.legend(fontsize=7)
        fig.tight_layout()
        path = seed_dir / "curves.svg"
        fig.savefig(path, format="svg")
        plt.close(fig)
        written.append(path)
    return written
