"""Experiment runner: data, workers, simulator, evaluation, early stopping."""
from __future__ import annotations

import csv
import io
import json
import logging
import math
import time
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from . import datagen, models, schedules
from .config import ConfigError, ExperimentConfig, parse_value
from .models import Batch, ModelSpec
from .numerics import ParamVector
from .sim import CostModel, SimConfig, run_sim, staleness_stats

log = logging.getLogger(__name__)

METRIC_FIELDS = ("sim_time", "wall_time", "global_updates", "epoch", "words_processed",
                 "train_ce_per_token", "valid_ce_per_token", "wps", "mean_staleness")
SWEEP_FIELDS = ("value", "sim_time_to_target", "final_ce", "wps", "mean_staleness")


@dataclass
class MetricsRecord:
    sim_time: float
    wall_time: float
    global_updates: int
    epoch: float
    words_processed: int
    train_ce_per_token: float
    valid_ce_per_token: float
    wps: float
    mean_staleness: float


@dataclass
class ExperimentResult:
    records: list[MetricsRecord]
    params: ParamVector
    summary: dict
    log: list

    def metrics_jsonl(self, wall_time: bool = True) -> str:
        lines = []
        for r in self.records:
            d = asdict(r)
            if not wall_time:
                d.pop("wall_time")
            lines.append(json.dumps(d))
        return "\n".join(lines) + "\n"


def evaluate(spec: ModelSpec, params: ParamVector, valid_batches: Sequence[Batch]) -> float:
    if not valid_batches:
        raise ValueError("empty validation set")
    loss = tokens = 0
    for b in valid_batches:
        l, n = models.forward_loss(spec, params, b)
        loss += l
        tokens += n
    return loss / tokens


def should_stop(history: Sequence[float], patience: int, min_delta: float = 0.0) -> bool:
    """True iff the last ``patience`` evaluations all stalled.

    A stall is a value that does not beat the best seen before it by more
    than ``min_delta``; the best only moves on a strict improvement.
    """
    if patience < 1:
        raise ValueError("patience must be >= 1")
    best = math.inf
    stalls = 0
    for ce in history:
        if ce < best - min_delta:
            best = ce
            stalls = 0
        else:
            stalls += 1
    return stalls >= patience


def model_spec(cfg: ExperimentConfig) -> ModelSpec:
    m = cfg.model
    if m.kind == "gru_lm":
        return ModelSpec.gru_lm(cfg.data.vocab, m.embed_dim, m.hidden)
    if m.kind == "mlp_classifier":
        return ModelSpec.mlp(m.in_dim, m.hidden, m.classes)
    return ModelSpec.linear(m.in_dim)


def train_schedule(cfg: ExperimentConfig) -> schedules.TrainSchedule:
    return schedules.TrainSchedule(
        base_lr=cfg.optimizer.base_lr,
        warmup_steps=cfg.schedule.warmup_steps,
        cooldown=cfg.schedule.cooldown,
        beta1_before=cfg.optimizer.beta1,
        beta1_after=cfg.schedule.beta1_after,
        beta1_switch_step=cfg.schedule.beta1_switch_step,
        local_opt_window=cfg.local_opt.window,
        lr_mode=cfg.train.lr_mode,
    )


def build_data(cfg: ExperimentConfig):
    """Returns (train set, valid set, entropy floor or None)."""
    d = cfg.data
    if cfg.model.kind == "gru_lm":
        train = datagen.gen_corpus(d.seed, d.n_sentences, d.vocab, d.len_min, d.len_max, d.pattern, "train")
        valid = datagen.gen_corpus(d.seed, d.n_valid, d.vocab, d.len_min, d.len_max, d.pattern, "valid")
        return train, valid, datagen.entropy_floor(valid)
    classes = cfg.model.classes if cfg.model.kind == "mlp_classifier" else 0
    train = datagen.gen_features(d.seed, d.n_sentences, cfg.model.in_dim, classes, "train")
    valid = datagen.gen_features(d.seed, d.n_valid, cfg.model.in_dim, classes, "valid")
    return train, valid, None


def worker_streams(batches: list[Batch], packed: datagen.PackedBatches, n_workers: int,
                   max_epochs: int, seed: int) -> list[Iterator[Batch]]:
    """Each epoch's shuffled batch order dealt round-robin to the workers."""

    def stream(w: int) -> Iterator[Batch]:
        for epoch in range(max_epochs):
            order = datagen.epoch_order(packed, seed * 100003 + epoch)
            for k in order[w::n_workers]:
                yield batches[k]

    return [stream(w) for w in range(n_workers)]


def run_experiment(cfg: ExperimentConfig, out_dir: str | Path | None = None) -> ExperimentResult:
    wall0 = time.perf_counter()
    spec = model_spec(cfg)
    train, valid, floor = build_data(cfg)
    packed = datagen.pack_batches(train, cfg.batch.word_budget, cfg.data.seed, cfg.batch.sort_window,
                                  cfg.batch.drop_oversized)
    batches = [train.batch(idx) for idx in packed.batches]
    valid_batches = [valid.batch(idx) for idx in
                     datagen.pack_batches(valid, cfg.batch.word_budget, None, len(valid)).batches]
    corpus_tokens = sum(packed.words)
    target = floor * cfg.stop.target_ratio if floor is not None else None

    n = cfg.train.workers
    sim_cfg = SimConfig(
        spec=spec,
        params=models.init_params(spec, cfg.train.seed),
        streams=worker_streams(batches, packed, n, cfg.train.max_epochs, cfg.data.seed),
        schedule=train_schedule(cfg),
        tau=cfg.train.tau,
        cost=CostModel(cfg.sim.tokens_per_sec, cfg.sim.push_overhead_sec, cfg.sim.jitter),
        mode=cfg.sim.mode,
        sync=cfg.train.mode == "sync",
        seed=cfg.sim.seed,
        beta2=cfg.optimizer.beta2,
        eps=cfg.optimizer.eps,
        max_updates=cfg.train.max_updates or None,
    )

    records: list[MetricsRecord] = []
    history: list[float] = []
    state = {"words": 0, "loss": 0.0, "tokens": 0, "stale": 0, "pushes": 0, "sim_time": 0.0,
             "stopped": "exhausted", "time_to_target": None}

    def record(params: ParamVector, updates: int, sim_time: float) -> MetricsRecord:
        ce = evaluate(spec, params, valid_batches)
        rec = MetricsRecord(
            sim_time=sim_time,
            wall_time=time.perf_counter() - wall0,
            global_updates=updates,
            epoch=state["words"] / corpus_tokens,
            words_processed=state["words"],
            train_ce_per_token=state["loss"] / state["tokens"] if state["tokens"] else math.nan,
            valid_ce_per_token=ce,
            wps=state["words"] / sim_time if sim_time > 0 else 0.0,
            mean_staleness=state["stale"] / state["pushes"] if state["pushes"] else 0.0,
        )
        state["loss"], state["tokens"] = 0.0, 0
        records.append(rec)
        history.append(ce)
        if target is not None and state["time_to_target"] is None and ce <= target:
            state["time_to_target"] = sim_time
        log.debug("u=%d t=%.2f valid_ce=%.4f", updates, sim_time, ce)
        return rec

    def on_push(rep, sim_time, store):
        state["words"] += rep.tokens
        state["loss"] += rep.loss_sum
        state["tokens"] += rep.tokens
        state["stale"] += rep.staleness
        state["pushes"] += 1
        state["sim_time"] = max(state["sim_time"], sim_time)
        if rep.u_new % cfg.stop.eval_every_updates:
            return False
        params, _ = store.pull()
        record(params, rep.u_new, state["sim_time"])
        if should_stop(history, cfg.stop.patience, cfg.stop.min_delta):
            state["stopped"] = "early_stop"
            return True
        return False

    result = run_sim(sim_cfg, on_push)
    store = result.store
    if cfg.train.max_updates and store.u >= cfg.train.max_updates and state["stopped"] == "exhausted":
        state["stopped"] = "max_updates"
    if not records or records[-1].global_updates != store.u:
        record(store.params.copy(), store.u, state["sim_time"])

    mean_st, max_st, hist = staleness_stats(result.log) if result.log else (0.0, 0, {})
    last = records[-1]
    summary = {
        "name": cfg.experiment.name,
        "stopped": state["stopped"],
        "global_updates": store.u,
        "sim_time": state["sim_time"],
        "words_processed": state["words"],
        "corpus_tokens": corpus_tokens,
        "epochs": state["words"] / corpus_tokens,
        "final_ce": last.valid_ce_per_token,
        "best_ce": min(history),
        "entropy_floor": floor,
        "target_ce": target,
        "sim_time_to_target": state["time_to_target"],
        "wps": last.wps,
        "mean_staleness": mean_st,
        "max_staleness": max_st,
        "wall_time": time.perf_counter() - wall0,
    }
    res = ExperimentResult(records, store.params.copy(), summary, list(result.log))
    if out_dir is not None:
        write_outputs(res, out_dir)
    return res


def _csv(header: Sequence[str], rows: Sequence[Sequence]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    return buf.getvalue()


def summary_csv(summary: dict) -> str:
    return _csv(list(summary), [["" if v is None else v for v in summary.values()]])


def write_outputs(res: ExperimentResult, out_dir: str | Path) -> None:
    from .sim import EventLog

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "metrics.jsonl").write_text(res.metrics_jsonl())
    (out / "summary.csv").write_text(summary_csv(res.summary))
    (out / "pushes.csv").write_text(EventLog(res.log).to_csv())


def sweep(cfg: ExperimentConfig, key: str, values: Sequence) -> list[dict]:
    """One run per value with every seed shared; rows follow ``SWEEP_FIELDS``."""
    if not values:
        raise ValueError("values must be non-empty")
    cfg.get(key)  # raises ConfigError for an invalid path
    rows = []
    for v in values:
        if isinstance(v, str):
            v = parse_value(v)
        res = run_experiment(cfg.replace(**{key: v}))
        s = res.summary
        rows.append({"value": v, "sim_time_to_target": s["sim_time_to_target"], "final_ce": s["final_ce"],
                     "wps": s["wps"], "mean_staleness": s["mean_staleness"]})
    return rows


def sweep_csv(rows: Sequence[dict]) -> str:
    return _csv(SWEEP_FIELDS, [["" if r[k] is None else r[k] for k in SWEEP_FIELDS] for r in rows])
