"""Discrete-event execution of asynchronous (and lockstep) training.

Deterministic mode keeps one clock and a heap of ``(time, worker)`` events.
A worker pulls when its group starts; at the group's completion instant the
whole group (gradients, local steps, push) runs atomically. Concurrent mode
runs one thread per worker against the same store and is only
invariant-checked.
"""
from __future__ import annotations

import csv
import heapq
import io
import math
import threading
from collections import Counter
from dataclasses import dataclass, field
from typing import Callable, Iterator, Sequence

import numpy as np

from . import schedules
from .models import Batch, ModelSpec
from .numerics import ParamVector
from .pserver import GlobalStore, GradAccumulator, PushRecord
from .worker import GroupReport, WorkerState, begin_group, finish_group
from . import models

MODES = ("deterministic", "concurrent")


@dataclass(frozen=True)
class CostModel:
    tokens_per_sec: float = 10000.0
    push_overhead_sec: float = 0.05
    jitter: float = 0.0  # log-uniform half-width; factor = exp(U(-jitter, jitter))

    def __post_init__(self):
        if not self.tokens_per_sec > 0 or self.push_overhead_sec < 0:
            raise ValueError("tokens_per_sec must be > 0 and push_overhead_sec >= 0")
        if not 0 <= self.jitter <= math.log(2.0):
            raise ValueError("jitter must lie in [0, ln 2] so the factor stays in [0.5, 2]")


def group_duration(cm: CostModel, group_tokens: int, seed: int = 0, step: int = 0, worker: int = 0) -> float:
    if group_tokens <= 0:
        raise ValueError("group_tokens must be > 0")
    factor = 1.0
    if cm.jitter > 0:
        factor = math.exp(np.random.default_rng([seed, worker, step]).uniform(-cm.jitter, cm.jitter))
    return group_tokens / cm.tokens_per_sec * factor + cm.push_overhead_sec


class EventLog(list):
    """Ordered push records."""

    @property
    def total_tokens(self) -> int:
        return sum(r.tokens for r in self)

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["push_index", "worker", "sim_time", "u_pull", "u_apply", "staleness", "tokens"])
        for r in self:
            writer.writerow([r.push_index, r.worker, repr(r.sim_time), r.u_pull, r.u_apply, r.staleness, r.tokens])
        return buf.getvalue()


def staleness_stats(log: Sequence[PushRecord]) -> tuple[float, int, dict[int, int]]:
    if not log:
        raise ValueError("empty log")
    values = [r.staleness for r in log]
    return float(np.mean(values)), max(values), dict(sorted(Counter(values).items()))


def wps(log: Sequence[PushRecord], horizon: float) -> float:
    if not horizon > 0:
        raise ValueError("horizon must be > 0")
    return sum(r.tokens for r in log if r.sim_time <= horizon) / horizon


# on_push(report, sim_time, store) -> True to stop the run
PushCallback = Callable[[GroupReport, float, GlobalStore], bool]


@dataclass
class SimConfig:
    spec: ModelSpec
    params: ParamVector
    streams: Sequence[Iterator[Batch]]  # one per worker
    schedule: schedules.TrainSchedule
    tau: int = 1
    cost: CostModel = field(default_factory=CostModel)
    mode: str = "deterministic"
    sync: bool = False
    seed: int = 0
    beta2: float = 0.999
    eps: float = 1e-8
    max_updates: int | None = None

    @property
    def n_workers(self) -> int:
        return len(self.streams)


@dataclass
class SimResult:
    log: EventLog
    store: GlobalStore
    sim_time: float
    reports: list[GroupReport]


def _take(stream: Iterator[Batch], k: int) -> list[Batch] | None:
    out = []
    for _ in range(k):
        b = next(stream, None)
        if b is None:
            return None
        out.append(b)
    return out


def run_sim(cfg: SimConfig, on_push: PushCallback | None = None) -> SimResult:
    if cfg.tau < 1:
        raise ValueError("tau must be >= 1")
    if cfg.mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}")
    store = GlobalStore(cfg.params, cfg.n_workers, cfg.beta2, cfg.eps)
    if cfg.sync:
        return _run_sync(cfg, store, on_push)
    if cfg.mode == "concurrent":
        return _run_concurrent(cfg, store, on_push)
    return _run_deterministic(cfg, store, on_push)


def _done(cfg, store) -> bool:
    return cfg.max_updates is not None and store.u >= cfg.max_updates


def _run_deterministic(cfg: SimConfig, store: GlobalStore, on_push) -> SimResult:
    workers = [WorkerState(i, cfg.spec) for i in range(cfg.n_workers)]
    pending: dict[int, list[Batch]] = {}
    steps = [0] * cfg.n_workers
    heap: list[tuple[float, int]] = []
    clock = 0.0
    reports = []

    def start(i: int, now: float) -> None:
        batches = _take(cfg.streams[i], cfg.tau)
        if batches is None:
            return
        begin_group(workers[i], store)
        pending[i] = batches
        d = group_duration(cfg.cost, sum(b.token_count for b in batches), cfg.seed, steps[i], i)
        steps[i] += 1
        heapq.heappush(heap, (now + d, i))

    for i in range(cfg.n_workers):
        start(i, 0.0)
    while heap and not _done(cfg, store):
        clock, i = heapq.heappop(heap)
        rep = finish_group(workers[i], pending.pop(i), store, cfg.schedule, cfg.tau, sim_time=clock)
        reports.append(rep)
        if on_push is not None and on_push(rep, clock, store):
            break
        start(i, clock)
    return SimResult(EventLog(store.log), store, clock, reports)


def _run_concurrent(cfg: SimConfig, store: GlobalStore, on_push) -> SimResult:
    lock = threading.Lock()
    stop = threading.Event()
    reports: list[GroupReport] = []
    clocks = [0.0] * cfg.n_workers
    errors: list[BaseException] = []

    def loop(i: int) -> None:
        w = WorkerState(i, cfg.spec)
        step = 0
        try:
            while not stop.is_set():
                with lock:
                    if _done(cfg, store):
                        break
                    batches = _take(cfg.streams[i], cfg.tau)
                if batches is None:
                    break
                begin_group(w, store)
                clocks[i] += group_duration(cfg.cost, sum(b.token_count for b in batches), cfg.seed, step, i)
                step += 1
                rep = finish_group(w, batches, store, cfg.schedule, cfg.tau, sim_time=clocks[i])
                with lock:
                    reports.append(rep)
                    if on_push is not None and on_push(rep, clocks[i], store):
                        stop.set()
        except BaseException as exc:  # surfaced in the caller's context
            errors.append(exc)
            stop.set()

    threads = [threading.Thread(target=loop, args=(i,), daemon=True) for i in range(cfg.n_workers)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    if errors:
        raise errors[0]
    return SimResult(EventLog(store.log), store, max(clocks), reports)


def _run_sync(cfg: SimConfig, store: GlobalStore, on_push) -> SimResult:
    """Lockstep all-reduce: every worker's gradients summed into one global step."""
    n, tau = cfg.n_workers, cfg.tau
    clock = 0.0
    reports = []
    step = 0
    while not _done(cfg, store):
        groups = [_take(s, tau) for s in cfg.streams]
        if any(g is None for g in groups):
            break
        params, u = store.pull()
        acc = GradAccumulator(store.layout)
        loss_sum = 0.0
        for batches in groups:
            for b in batches:
                loss, grad, tokens = models.loss_and_grad(cfg.spec, params, b)
                loss_sum += loss
                acc.add(grad, tokens)
        clock += max(group_duration(cfg.cost, sum(b.token_count for b in g), cfg.seed, step, i)
                     for i, g in enumerate(groups))
        step += 1
        rec = store.push(acc, u, cfg.schedule, n * tau, worker=0, sim_time=clock)
        rep = GroupReport(0, loss_sum, acc.tokens, u, rec.u_apply + 1, rec.staleness, 0)
        reports.append(rep)
        if on_push is not None and on_push(rep, clock, store):
            break
    return SimResult(EventLog(store.log), store, clock, reports)
