"""Command-line entry point: ``coclr <verb> ...``.

Verbs: ``run``, ``compare``, ``sweep``, ``eval``, ``export-dataset`` and
``benchmark``.  The output directory comes from ``--out``, else the
``COCLR_OUT`` environment variable, else ``run.out`` in the config.
"""

from __future__ import annotations

import argparse
import json
import sys

from . import binio
from .benchmark import CORE_METHODS, METHODS, run_benchmark
from .config import ConfigError, load_config, parse_value
from .evaluation import linear_probe, retrieval
from .encoder import features
from .experiment import (compare, output_root, render_sweep, run_experiment, summary_table,
                         sweep, write_plots)
from .synthdata import export_dataset, generate


def _seeds(arg: str | None, cfg) -> list[int] | None:
    """``--seeds 5`` means seeds 0..4; ``--seeds 3,7`` lists them explicitly."""
    if arg is None:
        return None
    if "," in arg:
        return [int(s) for s in arg.split(",") if s.strip()]
    return list(range(int(arg)))


def _common(p: argparse.ArgumentParser, config_required: bool = True) -> None:
    p.add_argument("--config", required=config_required, help="experiment config file")
    p.add_argument("--seeds", help="seed count N (runs 0..N-1) or comma-separated seed list")
    p.add_argument("--out", help="output root directory")
    p.add_argument("--normalize-timestamps", action="store_true", help="write wall = 0 in metrics")
    p.add_argument("--plots", action="store_true", help="write SVG loss/probe curves per seed")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="coclr", description="two-view contrastive co-training experiments")
    sub = parser.add_subparsers(dest="verb", required=True)

    p = sub.add_parser("run", help="run every seed of a config")
    _common(p)

    p = sub.add_parser("compare", help="median/sign-test table of two completed tags")
    p.add_argument("baseline")
    p.add_argument("candidate")
    p.add_argument("--out", help="output root directory")
    p.add_argument("--metric", action="append", help="restrict to these metrics")

    p = sub.add_parser("sweep", help="one run set per parameter value")
    _common(p)
    p.add_argument("--param", required=True, help="config key, e.g. plan.k")
    p.add_argument("--values", required=True, help="comma-separated values, e.g. 1,5,50")

    p = sub.add_parser("eval", help="re-evaluate saved view checkpoints")
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int, default=0, help="selects the dataset instance")
    p.add_argument("--view1", required=True, help="view-1 query checkpoint (.bin)")
    p.add_argument("--view2", help="view-2 query checkpoint (.bin)")

    p = sub.add_parser("export-dataset", help="write the synthetic dataset as text")
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--output", "-o", help="file to write (default stdout)")

    p = sub.add_parser("benchmark", help="run method variants of a base co-training config")
    _common(p)
    p.add_argument("--methods", default=",".join(CORE_METHODS), help=f"subset of {','.join(METHODS)}")
    return parser


def _cmd_run(args) -> int:
    cfg = load_config(args.config)
    root = output_root(args.out, cfg)
    per_seed = run_experiment(cfg, root, _seeds(args.seeds, cfg), args.normalize_timestamps)
    print(summary_table(cfg.tag, per_seed), end="")
    if args.plots:
        write_plots(root, cfg.tag)
    return 0


def _cmd_compare(args) -> int:
    root = output_root(args.out)
    print(compare(root, args.baseline, args.candidate, args.metric).render(), end="")
    return 0


def _cmd_sweep(args) -> int:
    cfg = load_config(args.config)
    values = [parse_value(args.param, v.strip()) for v in args.values.split(",")]
    root = output_root(args.out, cfg)
    results = sweep(cfg, args.param, values, root, _seeds(args.seeds, cfg), args.normalize_timestamps, {})
    print(render_sweep(args.param, results), end="")
    if args.plots:
        for v in results:
            write_plots(root, f"{cfg.tag}@{args.param}={v}")
    return 0


def _cmd_eval(args) -> int:
    cfg = load_config(args.config)
    data = generate(cfg.dataset_spec(args.seed))
    hyper = cfg.probe_hyper()
    tr, te = data.train_idx, data.test_idx
    out = {}
    for v, path in ((1, args.view1), (2, args.view2)):
        if path is None:
            continue
        x = data.view1 if v == 1 else data.view2
        f = features(binio.load_params(path), x)
        out[f"probe_v{v}"] = linear_probe(f[tr], data.labels[tr], f[te], data.labels[te], hyper).accuracy
        r = retrieval(f[te], data.labels[te], f[tr], data.labels[tr])
        out.update({f"R@{k}_v{v}": val for k, val in r.recall.items()})
    print(json.dumps(out, indent=1))
    return 0


def _cmd_export(args) -> int:
    cfg = load_config(args.config)
    data = generate(cfg.dataset_spec(args.seed))
    if args.output:
        with open(args.output, "w") as fh:
            export_dataset(data, fh)
    else:
        export_dataset(data, sys.stdout)
    return 0


def _cmd_benchmark(args) -> int:
    cfg = load_config(args.config)
    root = output_root(args.out, cfg)
    methods = [m.strip() for m in args.methods.split(",") if m.strip()]
    results = run_benchmark(cfg, root, methods, _seeds(args.seeds, cfg), args.normalize_timestamps)
    for m, per_seed in results.items():
        print(summary_table(m, per_seed), end="")
        if args.plots:
            write_plots(root, m)
    for m in methods:
        if m != "infonce" and "infonce" in methods:
            print(f"\n## infonce -> {m}")
            print(compare(root, "infonce", m, ("probe_v1", "probe_fused", "R@1_v1", "R@1_fused")).render(), end="")
    return 0


COMMANDS = {"run": _cmd_run, "compare": _cmd_compare, "sweep": _cmd_sweep, "eval": _cmd_eval,
            "export-dataset": _cmd_export, "benchmark": _cmd_benchmark}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.verb](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
    except Exception as exc:  # any failure must end in a nonzero exit, not a traceback
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
    return 1


if __name__ == "__main__":
    sys.exit(main())
