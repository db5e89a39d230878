"""Small hand-differentiated models.

All losses are SUM-reduced over tokens (gru_lm) or examples (linear, mlp), so
gradients of disjoint batches add up exactly to the gradient of their union.

Layouts (segment names, shapes; row-vector convention ``x @ W``):

* linear:  w (in_dim,)                        loss = sum (w.x - y)^2
* mlp:     W1 (in_dim, hidden), b1 (hidden,), W2 (hidden, classes), b2 (classes,)
           h = tanh(x W1 + b1), cross-entropy on softmax(h W2 + b2)
* gru_lm:  E (vocab, embed), W_z/W_r/W_h (embed, hidden), U_z/U_r/U_h (hidden, hidden),
           b_z/b_r/b_h (hidden,), W_out (hidden, vocab), b_out (vocab,)

The GRU language model predicts every token of a sentence, including the
first one (its input is the zero vector), so the number of predictions equals
the sentence length:

    z = sigmoid(x W_z + h U_z + b_z)
    r = sigmoid(x W_r + h U_r + b_r)
    c = tanh(x W_h + (r * h) U_h + b_h)
    h' = z * h + (1 - z) * c
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Sequence

import numpy as np

from .numerics import NumericalFault, ParamLayout, ParamVector, zeros_like

KINDS = ("linear_regression", "mlp_classifier", "gru_lm")


@dataclass(frozen=True)
class ModelSpec:
    kind: str
    in_dim: int = 0
    hidden: int = 0
    classes: int = 0
    vocab: int = 0
    embed_dim: int = 0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown model kind {self.kind!r}; expected one of {KINDS}")
        needed = {
            "linear_regression": ("in_dim",),
            "mlp_classifier": ("in_dim", "hidden", "classes"),
            "gru_lm": ("vocab", "embed_dim", "hidden"),
        }[self.kind]
        for name in needed:
            if getattr(self, name) < 1:
                raise ValueError(f"{self.kind}: {name} must be >= 1, got {getattr(self, name)}")
        if self.kind == "gru_lm" and self.vocab < 2:
            raise ValueError("gru_lm: vocab must be >= 2")

    @classmethod
    def linear(cls, in_dim: int) -> "ModelSpec":
        return cls("linear_regression", in_dim=in_dim)

    @classmethod
    def mlp(cls, in_dim: int, hidden: int, classes: int) -> "ModelSpec":
        return cls("mlp_classifier", in_dim=in_dim, hidden=hidden, classes=classes)

    @classmethod
    def gru_lm(cls, vocab: int = 16, embed_dim: int = 8, hidden: int = 16) -> "ModelSpec":
        return cls("gru_lm", vocab=vocab, hidden=hidden, embed_dim=embed_dim)

    @property
    def layout(self) -> ParamLayout:
        return ParamLayout.from_shapes(self._shapes())

    def _shapes(self) -> dict[str, tuple[int, ...]]:
        if self.kind == "linear_regression":
            return {"w": (self.in_dim,)}
        if self.kind == "mlp_classifier":
            return {
                "W1": (self.in_dim, self.hidden), "b1": (self.hidden,),
                "W2": (self.hidden, self.classes), "b2": (self.classes,),
            }
        e, h, v = self.embed_dim, self.hidden, self.vocab
        shapes: dict[str, tuple[int, ...]] = {"E": (v, e), "W_out": (h, v), "b_out": (v,)}
        for gate in "zrh":
            shapes[f"W_{gate}"] = (e, h)
            shapes[f"U_{gate}"] = (h, h)
            shapes[f"b_{gate}"] = (h,)
        return shapes

    def fan_in(self, segment: str) -> int:
        if self.kind == "linear_regression":
            return self.in_dim
        if self.kind == "mlp_classifier":
            return self.in_dim if segment in ("W1", "b1") else self.hidden
        if segment == "E":
            return 1
        if segment.startswith("W_") and segment != "W_out":
            return self.embed_dim + self.hidden
        return self.hidden


class Batch:
    """A mini-batch. ``examples`` are token sequences (gru_lm) or (x, y) pairs."""

    def __init__(self, examples: Sequence, token_count: int | None = None, sequences: bool | None = None):
        self.examples = list(examples)
        if not self.examples:
            raise ValueError("empty batch")
        if sequences is None:
            sequences = not isinstance(self.examples[0], tuple)
        self.sequences = sequences
        counted = sum(len(s) for s in self.examples) if sequences else len(self.examples)
        if token_count is not None and token_count != counted:
            raise ValueError(f"token_count {token_count} != counted {counted}")
        if counted <= 0:
            raise ValueError("batch has no tokens")
        self.token_count = counted

    def __len__(self) -> int:
        return len(self.examples)

    def __add__(self, other: "Batch") -> "Batch":
        return Batch(self.examples + other.examples, sequences=self.sequences)

    @cached_property
    def arrays(self):
        if self.sequences:
            lengths = np.array([len(s) for s in self.examples])
            tokens = np.zeros((len(self.examples), lengths.max()), dtype=np.int64)
            for i, s in enumerate(self.examples):
                tokens[i, :len(s)] = s
            mask = np.arange(tokens.shape[1])[None, :] < lengths[:, None]
            return tokens, mask.astype(np.float64)
        X = np.array([np.atleast_1d(x) for x, _ in self.examples], dtype=np.float64)
        y = np.array([y for _, y in self.examples])
        return X, y


def init_params(spec: ModelSpec, seed: int) -> ParamVector:
    rng = np.random.default_rng(seed)
    params = zeros_like(spec.layout)
    for seg in spec.layout.segments:
        bound = 0.5 / np.sqrt(spec.fan_in(seg.name))
        params.values[seg.offset:seg.offset + seg.length] = rng.uniform(-bound, bound, seg.length)
    return params


def _check_layout(spec: ModelSpec, params: ParamVector) -> None:
    if params.layout != spec.layout:
        raise ValueError(f"parameter layout does not match {spec.kind} spec")


def _fault(params: ParamVector, what: str):
    params.check_finite()
    raise NumericalFault(f"non-finite {what} with finite parameters", None)


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def _sigmoid(a):
    return 0.5 * (1.0 + np.tanh(0.5 * a))


# ---------------------------------------------------------------- linear / mlp

def _linear(params, batch, need_grad):
    X, y = batch.arrays
    w = params.view("w")
    resid = X @ w - y
    loss = float(resid @ resid)
    if not need_grad:
        return loss, None
    grad = zeros_like(params.layout)
    grad.view("w")[...] = 2.0 * (X.T @ resid)
    return loss, grad


def _mlp(params, batch, need_grad):
    X, y = batch.arrays
    y = y.astype(np.int64)
    W1, b1, W2, b2 = (params.view(n) for n in ("W1", "b1", "W2", "b2"))
    h = np.tanh(X @ W1 + b1)
    logp = _log_softmax(h @ W2 + b2)
    rows = np.arange(len(y))
    loss = float(-logp[rows, y].sum())
    if not need_grad:
        return loss, None
    dlogits = np.exp(logp)
    dlogits[rows, y] -= 1.0
    grad = zeros_like(params.layout)
    grad.view("W2")[...] = h.T @ dlogits
    grad.view("b2")[...] = dlogits.sum(axis=0)
    da = (dlogits @ W2.T) * (1.0 - h * h)
    grad.view("W1")[...] = X.T @ da
    grad.view("b1")[...] = da.sum(axis=0)
    return loss, grad


# ---------------------------------------------------------------- gru lm

def _gru(params, batch, need_grad):
    tokens, mask = batch.arrays
    B, T = tokens.shape
    p = {name: params.view(name) for name in params.layout.names}
    E, Wo, bo = p["E"], p["W_out"], p["b_out"]
    H = p["U_z"].shape[0]
    # gates stacked along the last axis: [z | r]
    W_zr = np.concatenate([p["W_z"], p["W_r"]], axis=1)
    U_zr = np.concatenate([p["U_z"], p["U_r"]], axis=1)
    b_zr = np.concatenate([p["b_z"], p["b_r"]])

    xs = np.zeros((T, B, E.shape[1]))
    xs[1:] = E[tokens[:, :-1].T]
    h = np.zeros((B, H))
    cache = []
    loss = 0.0
    for t in range(T):
        x = xs[t]
        zr = _sigmoid(x @ W_zr + h @ U_zr + b_zr)
        z, r = zr[:, :H], zr[:, H:]
        c = np.tanh(x @ p["W_h"] + (r * h) @ p["U_h"] + p["b_h"])
        h_new = z * h + (1.0 - z) * c
        logp = _log_softmax(h_new @ Wo + bo)
        loss -= float(logp[np.arange(B), tokens[:, t]] @ mask[:, t])
        if need_grad:
            cache.append((h, z, r, c, h_new, logp))
        h = h_new
    if not need_grad:
        return loss, None

    grad = zeros_like(params.layout)
    g = {name: grad.view(name) for name in grad.layout.names}
    dW_zr = np.zeros_like(W_zr)
    dU_zr = np.zeros_like(U_zr)
    db_zr = np.zeros_like(b_zr)
    dxs = np.zeros_like(xs)
    dh_next = np.zeros((B, H))
    rows = np.arange(B)
    for t in range(T - 1, -1, -1):
        h_prev, z, r, c, h_t, logp = cache[t]
        dlogits = np.exp(logp)
        dlogits[rows, tokens[:, t]] -= 1.0
        dlogits *= mask[:, t:t + 1]
        g["W_out"] += h_t.T @ dlogits
        g["b_out"] += dlogits.sum(axis=0)
        dh = dlogits @ Wo.T + dh_next

        dz = dh * (h_prev - c)
        dc = dh * (1.0 - z)
        dh_prev = dh * z
        da_c = dc * (1.0 - c * c)
        rh = r * h_prev
        g["W_h"] += xs[t].T @ da_c
        g["U_h"] += rh.T @ da_c
        g["b_h"] += da_c.sum(axis=0)
        drh = da_c @ p["U_h"].T
        dr = drh * h_prev
        dh_prev += drh * r

        da_zr = np.concatenate([dz * z * (1.0 - z), dr * r * (1.0 - r)], axis=1)
        dW_zr += xs[t].T @ da_zr
        dU_zr += h_prev.T @ da_zr
        db_zr += da_zr.sum(axis=0)
        dh_prev += da_zr @ U_zr.T
        dxs[t] = da_zr @ W_zr.T + da_c @ p["W_h"].T
        dh_next = dh_prev

    g["W_z"] += dW_zr[:, :H]
    g["W_r"] += dW_zr[:, H:]
    g["U_z"] += dU_zr[:, :H]
    g["U_r"] += dU_zr[:, H:]
    g["b_z"] += db_zr[:H]
    g["b_r"] += db_zr[H:]
    if T > 1:
        np.add.at(g["E"], tokens[:, :-1].T, dxs[1:])
    return loss, grad


_IMPL = {"linear_regression": _linear, "mlp_classifier": _mlp, "gru_lm": _gru}


def _run(spec: ModelSpec, params: ParamVector, batch: Batch, need_grad: bool):
    _check_layout(spec, params)
    if batch.sequences != (spec.kind == "gru_lm"):
        raise ValueError(f"batch type does not match model kind {spec.kind}")
    with np.errstate(over="ignore", invalid="ignore"):
        loss, grad = _IMPL[spec.kind](params, batch, need_grad)
    if not np.isfinite(loss):
        _fault(params, "loss")
    if grad is not None and not np.all(np.isfinite(grad.values)):
        params.check_finite()
        bad = int(np.flatnonzero(~np.isfinite(grad.values))[0])
        raise NumericalFault("non-finite gradient", grad.layout.segment_at(bad))
    return loss, grad


def forward_loss(spec: ModelSpec, params: ParamVector, batch: Batch) -> tuple[float, int]:
    loss, _ = _run(spec, params, batch, need_grad=False)
    return loss, batch.token_count


def backward(spec: ModelSpec, params: ParamVector, batch: Batch) -> tuple[ParamVector, int]:
    _, grad = _run(spec, params, batch, need_grad=True)
    return grad, batch.token_count


def loss_and_grad(spec: ModelSpec, params: ParamVector, batch: Batch) -> tuple[float, ParamVector, int]:
    loss, grad = _run(spec, params, batch, need_grad=True)
    return loss, grad, batch.token_count


def numeric_grad(spec: ModelSpec, params: ParamVector, batch: Batch, h: float = 1e-4) -> np.ndarray:
    """Central-difference gradient, one coordinate at a time."""
    theta = params.copy()
    out = np.empty(len(theta))
    for i in range(len(theta)):
        orig = theta.values[i]
        theta.values[i] = orig + h
        up, _ = forward_loss(spec, theta, batch)
        theta.values[i] = orig - h
        down, _ = forward_loss(spec, theta, batch)
        theta.values[i] = orig
        out[i] = (up - down) / (2.0 * h)
    return out


def grad_check(spec: ModelSpec, params: ParamVector, batch: Batch, h: float = 1e-4) -> float:
    if h <= 0:
        raise ValueError("h must be positive")
    analytic, _ = backward(spec, params, batch)
    numeric = numeric_grad(spec, params, batch, h)
    denom = np.maximum(np.maximum(np.abs(analytic.values), np.abs(numeric)), 1e-8)
    return float(np.max(np.abs(analytic.values - numeric) / denom)) if len(numeric) else 0.0
