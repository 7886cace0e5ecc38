"""Flat parameter storage, Adam, seeded initialization and finite-difference checks."""

from __future__ import annotations

from dataclasses import dataclass, replace
from math import prod
from typing import Callable, Iterable, Sequence

import numpy as np

Layout = tuple[tuple[str, tuple[int, ...]], ...]


class ParamVector:
    """A contiguous float64 array carved into named blocks.

    ``layout`` is an ordered sequence of ``(name, shape)`` pairs. Blocks are
    returned as reshaped views so writes go straight to ``data``.
    """

    def __init__(self, layout: Iterable[tuple[str, Sequence[int]]], data=None):
        layout = tuple((str(name), tuple(int(s) for s in shape)) for name, shape in layout)
        offsets = {}
        pos = 0
        for name, shape in layout:
            if name in offsets:
                raise ValueError(f"duplicate block name {name!r}")
            size = prod(shape)
            offsets[name] = (pos, pos + size, shape)
            pos += size
        if data is None:
            data = np.zeros(pos)
        else:
            data = np.ascontiguousarray(data, dtype=np.float64).reshape(-1)
            if data.size != pos:
                raise ValueError(f"data has {data.size} entries, layout needs {pos}")
        self._layout = layout
        self._offsets = offsets
        self.data = data

    @property
    def layout(self) -> Layout:
        return self._layout

    @property
    def size(self) -> int:
        return self.data.size

    def names(self) -> list[str]:
        return [name for name, _ in self._layout]

    def span(self, name: str) -> tuple[int, int]:
        try:
            start, stop, _ = self._offsets[name]
        except KeyError:
            raise KeyError(f"unknown block {name!r}; layout has {self.names()}") from None
        return start, stop

    def block(self, name: str) -> np.ndarray:
        start, stop = self.span(name)
        return self.data[start:stop].reshape(self._offsets[name][2])

    __getitem__ = block

    def copy(self) -> "ParamVector":
        return ParamVector(self._layout, self.data.copy())

    def zeros_like(self) -> "ParamVector":
        return ParamVector(self._layout)

    def with_data(self, data) -> "ParamVector":
        return ParamVector(self._layout, data)

    def block_of_index(self, index: int) -> str:
        for name, (start, stop, _) in self._offsets.items():
            if start <= index < stop:
                return name
        raise IndexError(index)

    def __repr__(self):
        blocks = ", ".join(f"{n}{list(s)}" for n, s in self._layout)
        return f"ParamVector({blocks})"


def block_view(params: ParamVector, name: str) -> np.ndarray:
    return params.block(name)


def init_uniform(params: ParamVector, rng: np.random.Generator, fan_in: dict[str, int]) -> ParamVector:
    """Fill weight blocks uniformly in [-1/sqrt(fan_in), 1/sqrt(fan_in)].

    Blocks missing from ``fan_in`` (biases) are left at zero.
    """
    out = params.zeros_like()
    for name, shape in out.layout:
        if name in fan_in:
            s = 1.0 / np.sqrt(fan_in[name])
            out.block(name)[...] = rng.uniform(-s, s, size=shape)
    return out


@dataclass
class OptState:
    m: np.ndarray
    v: np.ndarray
    step: int = 0
    lr: float = 1e-2
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def fresh(cls, size: int, lr=1e-2, beta1=0.9, beta2=0.999, eps=1e-8) -> "OptState":
        return cls(np.zeros(size), np.zeros(size), 0, lr, beta1, beta2, eps)


def adam_step(params: ParamVector, grad: ParamVector, state: OptState) -> tuple[ParamVector, OptState]:
    """One bias-corrected Adam update. Inputs are not modified."""
    g = grad.data if isinstance(grad, ParamVector) else np.asarray(grad, dtype=np.float64)
    if g.size != params.size or state.m.size != params.size:
        raise ValueError("parameter, gradient and moment lengths disagree")
    bad = np.flatnonzero(~np.isfinite(g))
    if bad.size:
        raise FloatingPointError(
            f"non-finite gradient in block {params.block_of_index(int(bad[0]))!r}"
        )
    t = state.step + 1
    m = state.beta1 * state.m + (1.0 - state.beta1) * g
    v = state.beta2 * state.v + (1.0 - state.beta2) * (g * g)
    mhat = m / (1.0 - state.beta1**t)
    vhat = v / (1.0 - state.beta2**t)
    data = params.data - state.lr * mhat / (np.sqrt(vhat) + state.eps)
    return params.with_data(data), replace(state, m=m, v=v, step=t)


def grad_check(
    loss: Callable[[ParamVector], float],
    params: ParamVector,
    analytic_grad,
    h: float = 1e-6,
    max_coords: int | None = None,
    seed: int = 0,
) -> float:
    """Worst relative error between ``analytic_grad`` and central differences.

    The denominator is ``max(|a|, |fd|, 1e-8)``. When ``max_coords`` is given
    and smaller than the parameter count, a seeded random subset is checked.
    """
    a = analytic_grad.data if isinstance(analytic_grad, ParamVector) else np.asarray(analytic_grad)
    idx = np.arange(params.size)
    if max_coords is not None and max_coords < params.size:
        idx = np.sort(np.random.default_rng(seed).choice(params.size, max_coords, replace=False))
    worst = 0.0
    for i in idx:
        p = params.copy()
        p.data[i] += h
        fp = float(loss(p))
        p.data[i] -= 2 * h
        fm = float(loss(p))
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise FloatingPointError(f"non-finite loss while perturbing coordinate {i}")
        fd = (fp - fm) / (2 * h)
        err = abs(a[i] - fd) / max(abs(a[i]), abs(fd), 1e-8)
        worst = max(worst, err)
    return worst
