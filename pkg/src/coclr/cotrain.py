"""Two-view co-training: InfoNCE initialisation, then alternating CoCLR stages.

A run is a list of stages.  Each stage names a loss (``infonce``,
``ubernce``, ``coclr`` or ``cmc``), which view it optimises (``1``, ``2``
or ``both``) and an epoch budget.  Every training step pushes both view
queues with the same sample ids, so queue row ``j`` always refers to the
same sample in both views.

All randomness is keyed by ``(seed, purpose, counter)`` so that a step's
draws do not depend on which other steps ran before it.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field, replace

import numpy as np

from . import encoder as enc
from .losses import build_logits, mil_nce, uber_nce_mask
from .mining import build_mask, mask_quality, self_only_mask
from .numerics import make_rng
from .queue import QueueState, empty_queue, push_batch
from .synthdata import AugmentSpec, TwoViewDataset, augment

LOSSES = ("infonce", "ubernce", "coclr", "cmc")
VIEWS = ("1", "2", "both")

_INIT_STREAM, _ORDER_STREAM, _AUG_STREAM = 1, 2, 3


class PlanError(ValueError):
    pass


@dataclass(frozen=True)
class Stage:
    loss: str
    view: str
    epochs: int
    name: str = ""

    @property
    def views(self) -> tuple[int, ...]:
        return (1, 2) if self.view == "both" else (int(self.view),)

    @property
    def label(self) -> str:
        return self.name or f"{self.loss}-v{self.view}"


@dataclass(frozen=True)
class TrainPlan:
    stages: tuple[Stage, ...] = ()
    k: int = 5
    tau: float = 0.07
    momentum: float = 0.999
    queue_capacity: int = 64
    batch_size: int = 32
    lr: float = 1.0
    weight_decay: float = 1e-5
    seed: int = 0
    granularity: str = "cycle"
    backbone: tuple[int, ...] = (64, 64)
    head: tuple[int, ...] = (32, 16)
    augment: AugmentSpec = AugmentSpec()

    def validate(self, initialized: frozenset = frozenset()) -> None:
        if self.k < 0:
            raise PlanError("plan.k must be >= 0")
        if self.tau <= 0:
            raise PlanError("plan.tau must be > 0")
        if not 0.0 <= self.momentum <= 1.0:
            raise PlanError("plan.momentum must lie in [0, 1]")
        if self.batch_size < 1 or self.queue_capacity < self.batch_size:
            raise PlanError("plan.batch_size must be >= 1 and <= plan.queue_capacity")
        if self.lr <= 0 or self.weight_decay < 0:
            raise PlanError("plan.lr must be > 0 and plan.weight_decay >= 0")
        if self.granularity not in ("cycle", "simultaneous"):
            raise PlanError("plan.granularity must be 'cycle' or 'simultaneous'")
        self.augment.validate()
        ready = set(initialized)
        for i, st in enumerate(self.stages):
            where = f"plan.stages[{i}]"
            if st.loss not in LOSSES:
                raise PlanError(f"{where}.loss: unknown loss {st.loss!r}")
            if st.view not in VIEWS:
                raise PlanError(f"{where}.view: must be one of {VIEWS}")
            if st.epochs < 0:
                raise PlanError(f"{where}.epochs must be >= 0")
            if st.loss == "coclr":
                if ready != {1, 2}:
                    raise PlanError(f"{where}: coclr needs an InfoNCE initialisation of both views first")
                if st.view == "both" and self.granularity != "simultaneous":
                    raise PlanError(f"{where}: optimising both views at once requires granularity 'simultaneous'")
            if st.loss == "infonce":
                ready.update(st.views)


@dataclass
class CoTrainState:
    pairs: dict
    queues: dict
    step: int = 0
    epoch: int = 0
    initialized: frozenset = frozenset()

    def copy(self) -> "CoTrainState":
        return copy.deepcopy(self)

    def lockstep(self) -> bool:
        return self.queues[1].ids == self.queues[2].ids


@dataclass
class StepMetrics:
    losses: dict = field(default_factory=dict)
    precision: dict = field(default_factory=dict)
    mined: dict = field(default_factory=dict)
    logits: dict = field(default_factory=dict)
    masks: dict = field(default_factory=dict)


def init_state(plan: TrainPlan, data: TwoViewDataset) -> CoTrainState:
    pairs, queues = {}, {}
    for v, x in ((1, data.view1), (2, data.view2)):
        dims = enc.encoder_dims(x.shape[1], plan.backbone, plan.head)
        params = enc.init_params(dims, make_rng(plan.seed, _INIT_STREAM, v), n_backbone=len(plan.backbone))
        pairs[v] = enc.EncoderPair.from_query(params, plan.momentum)
        queues[v] = empty_queue(plan.queue_capacity, dims[-1])
    return CoTrainState(pairs, queues)


def _view(data: TwoViewDataset, v: int) -> np.ndarray:
    return data.view1 if v == 1 else data.view2


def _aug_pair(plan: TrainPlan, x: np.ndarray, step: int, v: int):
    rng = make_rng(plan.seed, _AUG_STREAM, step, v)
    return augment(x, plan.augment, rng), augment(x, plan.augment, rng)


def _frozen_features(state: CoTrainState, v: int, x: np.ndarray) -> np.ndarray:
    z, _ = enc.forward(state.pairs[v].query, x)
    return z


def _update(state: CoTrainState, plan: TrainPlan, v: int, tape, grad) -> None:
    pair = state.pairs[v]
    grads = enc.backward(pair.query, tape, grad)
    query = enc.sgd_step(pair.query, grads, plan.lr, plan.weight_decay)
    state.pairs[v] = enc.momentum_update(enc.EncoderPair(query, pair.key, pair.momentum))


def _push(state: CoTrainState, batch: np.ndarray, keys: dict) -> None:
    for v in (1, 2):
        state.queues[v] = push_batch(state.queues[v], keys[v], ids=batch.tolist(), step=state.step)


def _labels_of(data: TwoViewDataset, q: QueueState) -> np.ndarray:
    return data.labels[np.asarray(q.ids, dtype=np.int64)]


def _view_loss(state, plan, data, batch, v, loss, k, pre_state=None):
    """Forward + loss for one view; returns (loss result, tape, key features, diagnostics)."""
    src = pre_state or state
    other = 2 if v == 1 else 1
    x = _view(data, v)[batch]
    xq, xk = _aug_pair(plan, x, state.step, v)
    pair = src.pairs[v]
    zq, tape = enc.forward(pair.query, xq, record=True)
    zk, _ = enc.forward(pair.key, xk)
    diag = {}
    if loss == "cmc":
        xo = _view(data, other)[batch]
        _, xo_k = _aug_pair(plan, xo, state.step, other)
        zo_k, _ = enc.forward(src.pairs[other].key, xo_k)
        block = build_logits(zq, zo_k, src.queues[other], plan.tau)
        mask = self_only_mask(len(batch), src.queues[other].fill)
    else:
        block = build_logits(zq, zk, src.queues[v], plan.tau)
        fill = src.queues[v].fill
        if loss == "ubernce":
            mask = uber_nce_mask(data.labels[batch], _labels_of(data, src.queues[v]))
        elif loss == "coclr":
            k_eff = k if fill >= k + 1 else 0
            if k_eff:
                z_other = _frozen_features(src, other, _view(data, other)[batch])
                mask = build_mask(z_other @ src.queues[other].entries.T, k_eff)
                prec, _ = mask_quality(mask, data.labels[batch], _labels_of(data, src.queues[v]))
                diag["precision"] = prec
            else:
                mask = self_only_mask(len(batch), fill)
            diag["k_eff"] = k_eff
        else:
            mask = self_only_mask(len(batch), fill)
    diag["logits"], diag["mask"] = block.logits, mask
    return mil_nce(block, mask), tape, zk, diag


def train_step(state: CoTrainState, plan: TrainPlan, data: TwoViewDataset, batch, loss: str,
               views: tuple[int, ...], k: int | None = None):
    """One optimisation step of ``loss`` on ``views``; other views stay frozen.

    With several views the step is simultaneous: every view computes its loss
    (and mines its positives) from the same pre-step snapshot.
    """
    batch = np.asarray(batch, dtype=np.int64)
    k = plan.k if k is None else k
    snapshot = state.copy() if len(views) > 1 else None
    metrics = StepMetrics()
    results = {}
    for v in views:
        res, tape, zk, diag = _view_loss(state, plan, data, batch, v, loss, k, pre_state=snapshot)
        results[v] = (res, tape, zk)
        metrics.losses[v] = res.loss
        metrics.logits[v], metrics.masks[v] = diag["logits"], diag["mask"]
        if "precision" in diag:
            metrics.precision[v] = diag["precision"]
        if "k_eff" in diag:
            metrics.mined[v] = diag["k_eff"]
    src = snapshot or state
    keys = {}
    for v in (1, 2):
        if v in results:
            keys[v] = results[v][2]
        else:
            keys[v] = _frozen_features(src, v, _view(data, v)[batch])
    for v in views:
        res, tape, _ = results[v]
        _update(state, plan, v, tape, res.grad)
    _push(state, batch, keys)
    state.step += 1
    return state, metrics


def coclr_step(state: CoTrainState, plan: TrainPlan, data: TwoViewDataset, batch, active_view: int,
               k: int | None = None):
    """One CoCLR update of ``active_view`` with positives mined in the other view.

    Until the other view's queue holds ``k + 1`` entries the step falls back
    to plain InfoNCE.
    """
    if state.initialized != {1, 2}:
        raise PlanError(f"coclr step on view {active_view}: both views must be InfoNCE-initialised")
    return train_step(state, plan, data, batch, "coclr", (int(active_view),), k)


def simultaneous_step(state: CoTrainState, plan: TrainPlan, data: TwoViewDataset, batch, k: int | None = None):
    if state.initialized != {1, 2}:
        raise PlanError("simultaneous coclr step: both views must be InfoNCE-initialised")
    return train_step(state, plan, data, batch, "coclr", (1, 2), k)


def epoch_batches(plan: TrainPlan, indices: np.ndarray, epoch: int) -> list[np.ndarray]:
    order = make_rng(plan.seed, _ORDER_STREAM, epoch).permutation(indices)
    return [order[i:i + plan.batch_size] for i in range(0, len(order), plan.batch_size)]


def run_plan(plan: TrainPlan, data: TwoViewDataset, state: CoTrainState | None = None, eval_hook=None,
             eval_every: int = 0, stage_hook=None, start_stage: int = 0, log_hook=None):
    """Execute the stages in order; return ``(state, history)``.

    ``history`` is a list of ``(stage_index, stage_label, epoch, metric, value)``
    tuples.  ``eval_hook(state, data)`` returning a ``{name: value}`` dict is
    called at the end of every non-empty stage and, if ``eval_every > 0``,
    every ``eval_every`` epochs within a stage.  ``stage_hook(index, stage,
    state)`` runs after each stage.  ``start_stage`` resumes a plan from a
    state produced by its earlier stages; because all draws are keyed by the
    state's counters the result is identical to an uninterrupted run.
    ``log_hook(record)`` sees each history record as soon as it exists.
    """
    if start_stage and state is None:
        raise PlanError("resuming at a later stage needs the state produced by the earlier ones")
    ready = frozenset(state.initialized) if state is not None else frozenset()
    replace(plan, stages=plan.stages[start_stage:]).validate(ready)
    state = init_state(plan, data) if state is None else state
    history = []

    def log(*rec):
        history.append(rec)
        if log_hook:
            log_hook(rec)

    train_idx = np.asarray(data.train_idx, dtype=np.int64)
    for si, stage in enumerate(plan.stages):
        if si < start_stage:
            continue
        for e in range(stage.epochs):
            sums: dict = {}
            for batch in epoch_batches(plan, train_idx, state.epoch):
                state, m = train_step(state, plan, data, batch, stage.loss, stage.views)
                for v, val in m.losses.items():
                    sums.setdefault(f"loss_v{v}", []).append(val)
                for v, val in m.precision.items():
                    sums.setdefault(f"mask_precision_v{v}", []).append(val)
            state.epoch += 1
            for name, vals in sums.items():
                log(si, stage.label, state.epoch, name, float(np.mean(vals)))
            if eval_hook and eval_every and (e + 1) % eval_every == 0 and e + 1 < stage.epochs:
                for name, val in eval_hook(state, data).items():
                    log(si, stage.label, state.epoch, name, float(val))
        if stage.loss == "infonce":
            state.initialized = frozenset(set(state.initialized) | set(stage.views))
        if eval_hook and stage.epochs:
            for name, val in eval_hook(state, data).items():
                log(si, stage.label, state.epoch, name, float(val))
        if stage_hook:
            stage_hook(si, stage, state)
    return state, history


def default_stages(init_epochs: int = 60, cycle_epochs: int = 20, cycles: int = 2) -> tuple[Stage, ...]:
    stages = [Stage("infonce", "both", init_epochs, "init")]
    for c in range(cycles):
        stages.append(Stage("coclr", "1", cycle_epochs, f"cycle{c + 1}-v1"))
        stages.append(Stage("coclr", "2", cycle_epochs, f"cycle{c + 1}-v2"))
    return tuple(stages)


def with_stages(plan: TrainPlan, stages) -> TrainPlan:
    return replace(plan, stages=tuple(stages))
