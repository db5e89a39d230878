"""Per-worker delayed-update loop with optional local optimizers."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

from . import models, schedules
from .models import Batch, ModelSpec
from .numerics import ParamVector
from .optim import AdamState, HyperParams, adam_delta_
from .pserver import GlobalStore, GradAccumulator


@dataclass
class GroupReport:
    worker: int
    loss_sum: float
    tokens: int
    u_pull: int
    u_new: int
    staleness: int
    local_steps: int


@dataclass
class WorkerState:
    id: int
    spec: ModelSpec
    local_params: ParamVector | None = None
    local_adam: AdamState | None = None
    acc: GradAccumulator | None = None
    microbatches_seen: int = 0
    u_pull: int = 0
    local_retired: bool = field(default=False)


def accumulate(acc: GradAccumulator, grad: ParamVector, tokens: int) -> GradAccumulator:
    return acc.add(grad, tokens)


def begin_group(w: WorkerState, store: GlobalStore) -> None:
    """Pull the global model; local divergences are dropped here."""
    w.local_params, w.u_pull = store.pull()
    w.acc = GradAccumulator(store.layout)


def finish_group(w: WorkerState, batches: Sequence[Batch], store: GlobalStore,
                 schedule: schedules.TrainSchedule, tau: int, sim_time: float = 0.0) -> GroupReport:
    if tau < 1 or len(batches) != tau:
        raise ValueError(f"need exactly tau={tau} batches, got {len(batches)}")
    if w.local_params is None:
        raise RuntimeError("finish_group before begin_group")
    if not w.local_retired and not schedules.local_opt_enabled(schedule, w.microbatches_seen):
        w.local_adam = None
        w.local_retired = True

    t_global = w.u_pull + 1
    lo, hi = store.table.range(w.id)
    loss_sum, local_steps = 0.0, 0
    for j, batch in enumerate(batches, start=1):
        loss, grad, n = models.loss_and_grad(w.spec, w.local_params, batch)
        loss_sum += loss
        accumulate(w.acc, grad, n)
        if j < tau and not w.local_retired and schedules.local_opt_enabled(schedule, w.microbatches_seen):
            if w.local_adam is None:
                w.local_adam = AdamState.zeros(len(w.local_params))
            g = grad.values / n if schedule.lr_mode == "mean_tokens" else grad.values
            hp = HyperParams(schedules.local_lr(schedules.global_lr(schedule, t_global, tau), tau),
                             schedules.beta1_at(schedule, t_global), store.beta2, store.eps)
            delta = adam_delta_(g, w.local_adam, hp)
            w.local_params.values += delta
            store.local_shard_write(w.id, delta[lo:hi])
            local_steps += 1
        w.microbatches_seen += 1

    rec = store.push(w.acc, w.u_pull, schedule, tau, worker=w.id, sim_time=sim_time)
    report = GroupReport(w.id, loss_sum, w.acc.tokens, w.u_pull, rec.u_apply + 1, rec.staleness, local_steps)
    w.acc = None
    return report


def run_group(w: WorkerState, batches: Sequence[Batch], store: GlobalStore,
              schedule: schedules.TrainSchedule, tau: int, sim_time: float = 0.0) -> GroupReport:
    begin_group(w, store)
    return finish_group(w, batches, store, schedule, tau, sim_time)
