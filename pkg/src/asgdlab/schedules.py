"""Learning-rate, momentum and local-optimizer schedules.

Steps ``t`` count global updates starting at 1.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

LR_MODES = ("mean_tokens", "sum")
COOLDOWNS = ("none", "inv_sqrt")


@dataclass(frozen=True)
class TrainSchedule:
    base_lr: float
    warmup_steps: int = 0
    cooldown: str = "none"
    beta1_before: float = 0.9
    beta1_after: float = 0.9
    beta1_switch_step: int = 0
    local_opt_window: int = 0
    lr_mode: str = "mean_tokens"

    def __post_init__(self):
        if not self.base_lr > 0:
            raise ValueError("base_lr must be > 0")
        if self.warmup_steps < 0 or self.local_opt_window < 0 or self.beta1_switch_step < 0:
            raise ValueError("warmup_steps, beta1_switch_step and local_opt_window must be >= 0")
        if not (0 <= self.beta1_before < 1 and 0 <= self.beta1_after < 1):
            raise ValueError("beta1 values must lie in [0, 1)")
        if self.cooldown not in COOLDOWNS:
            raise ValueError(f"cooldown must be one of {COOLDOWNS}")
        if self.lr_mode not in LR_MODES:
            raise ValueError(f"lr_mode must be one of {LR_MODES}")


def lr_at(s: TrainSchedule, t: int) -> float:
    if t < 1:
        raise ValueError("t starts at 1")
    w = s.warmup_steps
    if s.cooldown == "inv_sqrt":
        if w == 0:
            return s.base_lr / math.sqrt(t)
        # sqrt(w) * min(t^-0.5, t * w^-1.5), written so t == w gives exactly 1
        return s.base_lr * min(math.sqrt(w / t), t / w)
    if w == 0:
        return s.base_lr
    return s.base_lr * min(1.0, t / w)


def beta1_at(s: TrainSchedule, t: int) -> float:
    if t < 1:
        raise ValueError("t starts at 1")
    return s.beta1_before if t < s.beta1_switch_step else s.beta1_after


def local_opt_enabled(s: TrainSchedule, worker_microbatches_seen: int) -> bool:
    if worker_microbatches_seen < 0:
        raise ValueError("count must be >= 0")
    return worker_microbatches_seen < s.local_opt_window


def scaled_lr(base_lr: float, tau: int, lr_mode: str) -> float:
    """Linear scaling for a tau-times larger batch; the sum loss already scales itself."""
    if tau < 1:
        raise ValueError("tau must be >= 1")
    if lr_mode not in LR_MODES:
        raise ValueError(f"lr_mode must be one of {LR_MODES}")
    return base_lr * tau if lr_mode == "mean_tokens" else base_lr


def local_lr(global_lr_at_t: float, tau: int) -> float:
    if tau < 1:
        raise ValueError("tau must be >= 1")
    return global_lr_at_t / tau


def global_lr(s: TrainSchedule, t: int, tau: int) -> float:
    return scaled_lr(lr_at(s, t), tau, s.lr_mode)
