"""Seeded gradient-check instances for each model kind."""
from __future__ import annotations

import numpy as np

from .models import Batch, ModelSpec, grad_check, init_params

TOLERANCE = {"linear_regression": 1e-8, "mlp_classifier": 1e-5, "gru_lm": 1e-4}


def gradcheck_instance(kind: str, seed: int):
    rng = np.random.default_rng([7919, seed])
    if kind == "linear_regression":
        spec = ModelSpec.linear(3)
        batch = Batch([(rng.normal(size=3), float(rng.normal())) for _ in range(8)])
    elif kind == "mlp_classifier":
        spec = ModelSpec.mlp(2, 4, 2)
        batch = Batch([(rng.normal(size=2), int(rng.integers(2))) for _ in range(8)])
    elif kind == "gru_lm":
        spec = ModelSpec.gru_lm(8, 4, 4)
        batch = Batch([rng.integers(0, 8, size=5)])
    else:
        raise ValueError(f"unknown model kind {kind!r}")
    return spec, init_params(spec, seed), batch


def gradcheck_suite(kind: str, seeds=range(20), h: float = 1e-4) -> list[float]:
    return [grad_check(*gradcheck_instance(kind, s), h=h) for s in seeds]
