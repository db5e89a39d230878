"""Sharded global parameter store.

Worker ``i`` masters the contiguous range ``table.range(i)`` and owns the
global Adam moments for it. A group push runs the global optimizer shard by
shard; a local write adds a delta to the caller's own range without any
locking (Hogwild).
"""
from __future__ import annotations

import threading
from dataclasses import dataclass

import numpy as np

from . import schedules
from .numerics import LayoutMismatch, ParamVector, zeros_like
from .optim import AdamState, HyperParams, adam_delta_


@dataclass(frozen=True)
class ShardTable:
    boundaries: tuple[int, ...]

    @property
    def n_shards(self) -> int:
        return len(self.boundaries) - 1

    def range(self, i: int) -> tuple[int, int]:
        return self.boundaries[i], self.boundaries[i + 1]

    def ranges(self) -> list[tuple[int, int]]:
        return [self.range(i) for i in range(self.n_shards)]


def shard_bounds(total_len: int, n_workers: int) -> ShardTable:
    if total_len < 0:
        raise ValueError("total_len must be >= 0")
    if n_workers < 1:
        raise ValueError("n_workers must be >= 1")
    return ShardTable(tuple(i * total_len // n_workers for i in range(n_workers + 1)))


class GradAccumulator:
    def __init__(self, layout):
        self.sum = zeros_like(layout)
        self.tokens = 0
        self.microbatches = 0

    def add(self, grad: ParamVector, tokens: int) -> "GradAccumulator":
        if grad.layout != self.sum.layout:
            raise LayoutMismatch("gradient layout differs from accumulator layout")
        self.sum.values += grad.values
        self.tokens += tokens
        self.microbatches += 1
        return self

    def effective_grad(self, lr_mode: str) -> np.ndarray:
        if lr_mode == "mean_tokens":
            return self.sum.values / self.tokens
        return self.sum.values


@dataclass(frozen=True)
class PushRecord:
    push_index: int
    worker: int
    u_pull: int
    u_apply: int
    sim_time: float
    tokens: int

    @property
    def staleness(self) -> int:
        return self.u_apply - self.u_pull


class GlobalStore:
    def __init__(self, params: ParamVector, n_workers: int, beta2: float = 0.999, eps: float = 1e-8):
        self.params = params.copy()
        self.table = shard_bounds(len(params), n_workers)
        self.shard_states = [AdamState.zeros(hi - lo) for lo, hi in self.table.ranges()]
        self.beta2 = beta2
        self.eps = eps
        self.u = 0
        self.log: list[PushRecord] = []
        self._shard_locks = [threading.Lock() for _ in range(n_workers)]
        self._counter_lock = threading.Lock()

    @property
    def layout(self):
        return self.params.layout

    def pull(self) -> tuple[ParamVector, int]:
        # u is read first: a concurrent push may land between the two reads, never the reverse
        u = self.u
        return self.params.copy(), u

    def push_group(self, acc: GradAccumulator, u_pull: int, schedule: schedules.TrainSchedule, tau: int,
                   worker: int = 0, sim_time: float = 0.0) -> int:
        """Apply one global optimizer step; returns the new group counter."""
        return self.push(acc, u_pull, schedule, tau, worker, sim_time).u_apply + 1

    def push(self, acc: GradAccumulator, u_pull: int, schedule: schedules.TrainSchedule, tau: int,
             worker: int = 0, sim_time: float = 0.0) -> PushRecord:
        if acc.sum.layout != self.layout:
            raise LayoutMismatch("accumulator layout differs from store layout")
        if acc.microbatches != tau:
            raise ValueError(f"push needs exactly tau={tau} micro-batches, got {acc.microbatches}")
        g = acc.effective_grad(schedule.lr_mode)
        values = self.params.values
        # ascending shard order keeps concurrent pushes in the same order on every shard
        for lock, state, (lo, hi) in zip(self._shard_locks, self.shard_states, self.table.ranges()):
            with lock:
                t = state.t + 1
                hp = HyperParams(schedules.global_lr(schedule, t, tau), schedules.beta1_at(schedule, t),
                                 self.beta2, self.eps)
                values[lo:hi] += adam_delta_(g[lo:hi], state, hp)
        with self._counter_lock:
            u_apply = self.u
            self.u += 1
            rec = PushRecord(len(self.log), worker, u_pull, u_apply, sim_time, acc.tokens)
            self.log.append(rec)
            return rec

    def local_shard_write(self, worker_id: int, delta) -> None:
        lo, hi = self.table.range(worker_id)
        delta = np.asarray(delta)
        if delta.shape != (hi - lo,):
            raise LayoutMismatch(f"delta of length {delta.size} for shard [{lo}, {hi})")
        self.params.values[lo:hi] += delta
