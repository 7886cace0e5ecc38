"""Reference and target densities, synthetic datasets and the obstacle cost."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.special import logsumexp

LOG2PI = np.log(2.0 * np.pi)


def gauss_logpdf(x) -> np.ndarray:
    """Standard normal log-density; works on a point or on rows of a batch."""
    x = np.asarray(x, dtype=np.float64)
    n = x.shape[-1]
    return -0.5 * n * LOG2PI - 0.5 * np.sum(x * x, axis=-1)


@dataclass(frozen=True)
class GaussianMixture:
    weights: tuple[float, ...]
    means: tuple[tuple[float, ...], ...]
    stdevs: tuple[float, ...]

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64)
        if not (len(self.weights) == len(self.means) == len(self.stdevs)) or w.size == 0:
            raise ValueError("weights, means and stdevs must have equal nonzero length")
        if np.any(w <= 0) or abs(w.sum() - 1.0) > 1e-9:
            raise ValueError("mixture weights must be positive and sum to 1")
        if np.any(np.asarray(self.stdevs) <= 0):
            raise ValueError("mixture stdevs must be positive")
        if len({len(m) for m in self.means}) != 1:
            raise ValueError("all component means need the same dimension")

    @classmethod
    def make(cls, weights: Sequence[float], means, stdevs) -> "GaussianMixture":
        means = np.atleast_2d(np.asarray(means, dtype=np.float64))
        if np.ndim(stdevs) == 0:
            stdevs = [float(stdevs)] * len(means)
        return cls(tuple(float(w) for w in weights), tuple(tuple(map(float, m)) for m in means),
                   tuple(float(s) for s in stdevs))

    @classmethod
    def ring(cls, modes: int = 8, radius: float = 4.0, stdev: float = 0.4) -> "GaussianMixture":
        ang = 2 * np.pi * np.arange(modes) / modes
        means = radius * np.column_stack([np.cos(ang), np.sin(ang)])
        return cls.make([1.0 / modes] * modes, means, stdev)

    @property
    def dim(self) -> int:
        return len(self.means[0])

    def arrays(self):
        return (np.asarray(self.weights), np.asarray(self.means), np.asarray(self.stdevs))

    def mean(self) -> np.ndarray:
        w, mu, _ = self.arrays()
        return w @ mu


def _component_logpdfs(mix: GaussianMixture, X: np.ndarray) -> np.ndarray:
    w, mu, s = mix.arrays()
    n = mix.dim
    d2 = np.sum((X[:, None, :] - mu[None]) ** 2, axis=-1)
    return np.log(w) - n * np.log(s) - 0.5 * n * LOG2PI - 0.5 * d2 / s**2


def mixture_logpdf(mix: GaussianMixture, x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    X = np.atleast_2d(x)
    out = logsumexp(_component_logpdfs(mix, X), axis=1)
    return out[0] if x.ndim == 1 else out


def mixture_score(mix: GaussianMixture, x) -> np.ndarray:
    """Gradient of ``mixture_logpdf`` with respect to ``x``."""
    x = np.asarray(x, dtype=np.float64)
    X = np.atleast_2d(x)
    _, mu, s = mix.arrays()
    lc = _component_logpdfs(mix, X)
    r = np.exp(lc - logsumexp(lc, axis=1, keepdims=True))
    g = np.einsum("bc,bcn->bn", r / s**2, mu[None] - X[:, None, :])
    return g[0] if x.ndim == 1 else g


def mixture_sample(mix: GaussianMixture, count: int, seed) -> np.ndarray:
    rng = np.random.default_rng(seed)
    w, mu, s = mix.arrays()
    comp = rng.choice(w.size, size=count, p=w)
    return mu[comp] + s[comp, None] * rng.standard_normal((count, mix.dim))


@dataclass(frozen=True)
class ObstacleCost:
    center: tuple[float, ...]
    height: float = 50.0
    width: float = 0.5

    def __post_init__(self):
        if self.height <= 0 or self.width <= 0:
            raise ValueError("obstacle height and width must be positive")


def obstacle_eval(obs: ObstacleCost, x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    d2 = np.sum((x - np.asarray(obs.center)) ** 2, axis=-1)
    return obs.height * np.exp(-0.5 * d2 / obs.width**2)


def obstacle_grad(obs: ObstacleCost, x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    diff = x - np.asarray(obs.center)
    return -(obstacle_eval(obs, x) / obs.width**2)[..., None] * diff


@dataclass
class LabeledDataset:
    points: np.ndarray  # (count, n)
    labels: np.ndarray  # (count,) in {0, 1}

    def __post_init__(self):
        self.points = np.atleast_2d(np.asarray(self.points, dtype=np.float64))
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.points.shape[0] != self.labels.shape[0]:
            raise ValueError("points and labels differ in length")
        if not np.all((self.labels == 0) | (self.labels == 1)):
            raise ValueError("labels must be 0 or 1")

    def __len__(self):
        return self.labels.size

    def subset(self, idx) -> "LabeledDataset":
        return LabeledDataset(self.points[idx], self.labels[idx])


def make_circles(count: int, inner: float = 1.0, outer: float = 2.0, noise: float = 0.1, seed=0) -> LabeledDataset:
    """Two noisy concentric circles; class 0 is the inner circle.

    Class 0 gets ``ceil(count/2)`` points, class 1 the rest. Noise is added
    to the radius.
    """
    if not 0 < inner < outer:
        raise ValueError(f"need 0 < inner < outer, got inner={inner}, outer={outer}")
    rng = np.random.default_rng(seed)
    n0 = (count + 1) // 2
    n1 = count // 2
    radius = np.concatenate([np.full(n0, inner), np.full(n1, outer)])
    radius = radius + noise * rng.standard_normal(count)
    ang = rng.uniform(0.0, 2 * np.pi, count)
    pts = radius[:, None] * np.column_stack([np.cos(ang), np.sin(ang)])
    labels = np.concatenate([np.zeros(n0, dtype=np.int64), np.ones(n1, dtype=np.int64)])
    perm = rng.permutation(count)
    return LabeledDataset(pts[perm], labels[perm])
