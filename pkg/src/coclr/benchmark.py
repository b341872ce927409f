"""Method variants of one base experiment, run with matched epoch budgets.

Every method follows the same per-view schedule as the co-training plan:
``init`` epochs on both views, then ``cycles`` rounds of view 1 followed by
view 2.  Only the loss (and for ablations K or the alternation granularity)
changes, so each view receives the same number of updates in every method.

* ``infonce``: instance discrimination throughout.
* ``coclr``: InfoNCE init, then cross-view mined positives.
* ``ubernce``: label-oracle positives from scratch (supervised upper bound).
* ``coclr_k1`` / ``coclr_k50``: K ablation.
* ``coclr_sim``: both views updated together from a shared snapshot.
* ``cmc``: cross-view instance baseline.
"""

from __future__ import annotations

from .config import ExperimentConfig
from .experiment import run_experiment

METHODS = ("infonce", "coclr", "ubernce", "coclr_k1", "coclr_k50", "coclr_sim", "cmc")
CORE_METHODS = ("infonce", "coclr", "ubernce")


def _alternating(loss: str, init_loss: str, init: int, cycle: int, cycles: int) -> list:
    stages = [[init_loss, "both", init, "init"]]
    for c in range(1, cycles + 1):
        stages.append([loss, "1", cycle, f"cycle{c}-v1"])
        stages.append([loss, "2", cycle, f"cycle{c}-v2"])
    return stages


def schedule(cfg: ExperimentConfig) -> tuple[int, int, int]:
    """Read ``(init, cycle, cycles)`` epochs off a base co-training plan."""
    st = cfg["plan.stages"]
    if not st or st[0][0] != "infonce" or st[0][1] != "both":
        raise ValueError("base plan must start with an InfoNCE stage on both views")
    rest = st[1:]
    if len(rest) % 2 or any(s[0] != "coclr" for s in rest) or len({s[2] for s in rest}) > 1:
        raise ValueError("base plan must alternate equal-length coclr stages on views 1 and 2")
    return st[0][2], (rest[0][2] if rest else 0), len(rest) // 2


def method_config(base: ExperimentConfig, method: str) -> ExperimentConfig:
    if method not in METHODS:
        raise ValueError(f"unknown method {method!r}; choose from {', '.join(METHODS)}")
    init, cycle, cycles = schedule(base)
    cfg = base.with_value("run.tag", method).with_value("plan.granularity", "cycle")
    if method == "infonce":
        stages = _alternating("infonce", "infonce", init, cycle, cycles)
    elif method == "ubernce":
        stages = _alternating("ubernce", "ubernce", init, cycle, cycles)
    elif method == "cmc":
        stages = _alternating("cmc", "infonce", init, cycle, cycles)
    elif method == "coclr_sim":
        stages = [["infonce", "both", init, "init"], ["coclr", "both", cycle * cycles, "sim"]]
        cfg = cfg.with_value("plan.granularity", "simultaneous")
    else:
        stages = _alternating("coclr", "infonce", init, cycle, cycles)
        if method == "coclr_k1":
            cfg = cfg.with_value("plan.k", 1)
        elif method == "coclr_k50":
            cfg = cfg.with_value("plan.k", 50)
    return cfg.with_value("plan.stages", stages)


def run_benchmark(base: ExperimentConfig, root, methods=CORE_METHODS, seeds=None,
                  normalize_timestamps: bool = False) -> dict:
    """Run each method; methods starting with the same InfoNCE init share it."""
    cache: dict = {}
    return {m: run_experiment(method_config(base, m), root, seeds, normalize_timestamps, cache)
            for m in methods}
