"""Flat parameter vectors with a named-segment layout.

Every model parameter set (and every gradient) lives in one contiguous
float64 vector. Segments are laid out in lexicographic name order so shard
boundaries are reproducible.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np


class LayoutMismatch(ValueError):
    pass


class NumericalFault(FloatingPointError):
    """Raised when a vector picks up NaN/Inf. ``segment`` names the first bad segment."""

    def __init__(self, message: str, segment: str | None = None):
        super().__init__(message if segment is None else f"{message} (segment {segment!r})")
        self.segment = segment


@dataclass(frozen=True)
class Segment:
    name: str
    offset: int
    length: int
    shape: tuple[int, ...]


@dataclass(frozen=True)
class ParamLayout:
    segments: tuple[Segment, ...]
    total_len: int

    @classmethod
    def from_shapes(cls, shapes: Mapping[str, Sequence[int] | int]) -> "ParamLayout":
        segs = []
        offset = 0
        for name in sorted(shapes):
            shape = shapes[name]
            shape = (int(shape),) if np.isscalar(shape) else tuple(int(s) for s in shape)
            if any(s < 0 for s in shape):
                raise ValueError(f"negative dimension in segment {name!r}: {shape}")
            length = int(np.prod(shape, dtype=np.int64))
            segs.append(Segment(name, offset, length, shape))
            offset += length
        return cls(tuple(segs), offset)

    def __getitem__(self, name: str) -> Segment:
        for seg in self.segments:
            if seg.name == name:
                return seg
        raise KeyError(name)

    @property
    def names(self) -> list[str]:
        return [s.name for s in self.segments]

    def segment_at(self, index: int) -> str:
        for seg in self.segments:
            if seg.offset <= index < seg.offset + seg.length:
                return seg.name
        raise IndexError(index)


@dataclass
class ParamVector:
    layout: ParamLayout
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        self.values = np.asarray(self.values)
        if self.values.ndim != 1 or self.values.shape[0] != self.layout.total_len:
            raise LayoutMismatch(
                f"values of length {self.values.size} do not fit layout of length {self.layout.total_len}"
            )

    def __len__(self) -> int:
        return self.layout.total_len

    def view(self, name: str) -> np.ndarray:
        """Writable view of one segment in its natural shape."""
        seg = self.layout[name]
        return self.values[seg.offset:seg.offset + seg.length].reshape(seg.shape)

    def copy(self) -> "ParamVector":
        return ParamVector(self.layout, self.values.copy())

    def check_finite(self) -> None:
        if np.all(np.isfinite(self.values)):
            return
        bad = int(np.flatnonzero(~np.isfinite(self.values))[0])
        raise NumericalFault("non-finite value in parameter vector", self.layout.segment_at(bad))


def zeros_like(layout: ParamLayout, dtype=np.float64) -> ParamVector:
    return ParamVector(layout, np.zeros(layout.total_len, dtype=dtype))


def from_segments(layout: ParamLayout, arrays: Mapping[str, np.ndarray], dtype=np.float64) -> ParamVector:
    out = zeros_like(layout, dtype)
    for seg in layout.segments:
        out.view(seg.name)[...] = arrays[seg.name]
    return out


def _check_same(x: ParamVector, y: ParamVector) -> None:
    if x.layout != y.layout:
        raise LayoutMismatch("parameter vectors have different layouts")


def axpy(alpha: float, x: ParamVector, y: ParamVector) -> ParamVector:
    """Return y + alpha*x without touching the inputs."""
    _check_same(x, y)
    return ParamVector(y.layout, y.values + alpha * x.values)


def axpy_(alpha: float, x: ParamVector, y: ParamVector) -> ParamVector:
    """In-place y += alpha*x; returns y."""
    _check_same(x, y)
    y.values += alpha * x.values
    return y


def _check_range(v: ParamVector, start: int, end: int) -> None:
    if not 0 <= start <= end <= v.layout.total_len:
        raise IndexError(f"range [{start}, {end}) outside [0, {v.layout.total_len})")


def range_read(v: ParamVector, start: int, end: int) -> np.ndarray:
    _check_range(v, start, end)
    return v.values[start:end].copy()


def range_write(v: ParamVector, start: int, end: int, src) -> None:
    _check_range(v, start, end)
    src = np.asarray(src)
    if src.shape != (end - start,):
        raise LayoutMismatch(f"slice of length {src.size} written to range of length {end - start}")
    v.values[start:end] = src
