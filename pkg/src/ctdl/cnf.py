"""Continuous normalizing flows trained by maximum likelihood.

Densities are evaluated by integrating the field backward from the data point
at t=1 to t=0 while accumulating the Jacobian trace; the accumulated value is
the log-determinant of the inverse map. Sampling integrates forward.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .distributions import LOG2PI, gauss_logpdf
from .dynamics import FieldSpec
from .odeint import C_OT, LOGDET, FieldHook, Trajectory, backprop_trajectory, integrate
from .params import OptState, ParamVector, adam_step

log = logging.getLogger(__name__)


@dataclass
class CnfModel:
    spec: FieldSpec
    params: ParamVector
    alpha: float = 0.0

    def __post_init__(self):
        if not (np.isfinite(self.alpha) and self.alpha >= 0):
            raise ValueError(f"transport weight must be finite and >= 0, got {self.alpha}")

    @classmethod
    def create(cls, n: int, k: int = 16, n_intervals: int = 8, alpha: float = 0.0, rng=None) -> "CnfModel":
        spec = FieldSpec(n, k, n_intervals)
        params = spec.zeros() if rng is None else spec.init(rng)
        return cls(spec, params, alpha)

    def hook(self) -> FieldHook:
        return FieldHook(self.spec, self.params, trace=True, transport=True)

    def with_params(self, params: ParamVector) -> "CnfModel":
        return CnfModel(self.spec, params, self.alpha)


def cnf_logdensity(model: CnfModel, y, N: int = 64, scheme: str = "rk4"):
    """Model log-density of ``y`` and the backward trajectory that produced it."""
    y = np.asarray(y, dtype=np.float64)
    traj = integrate(model.hook(), np.atleast_2d(y), 1.0, 0.0, N, scheme)
    end = traj.final()
    logp = gauss_logpdf(end.z) + end.logdet
    return (logp[0] if y.ndim == 1 else logp), traj


def cnf_loss(model: CnfModel, batch, N: int = 32, scheme: str = "rk4"):
    """Mean negative log-likelihood plus ``alpha`` times the transport cost."""
    Y = np.atleast_2d(np.asarray(batch, dtype=np.float64))
    if Y.shape[0] == 0:
        raise ValueError("empty batch")
    B, n = Y.shape
    hook = model.hook()
    traj = integrate(hook, Y, 1.0, 0.0, N, scheme)
    end = traj.final()
    per = 0.5 * np.sum(end.z**2, axis=1) - end.logdet + model.alpha * end.c_ot
    loss = float(np.mean(per) + 0.5 * n * LOG2PI)
    if not np.isfinite(loss):
        raise FloatingPointError("non-finite flow loss")
    Ybar = np.zeros_like(traj.states[-1])
    Ybar[:, :n] = end.z / B
    Ybar[:, n + LOGDET] = -1.0 / B
    Ybar[:, n + C_OT] = model.alpha / B
    grad, _ = backprop_trajectory(hook, traj, Ybar)
    return loss, grad


def cnf_nll(model: CnfModel, data, N: int = 64, scheme: str = "rk4") -> float:
    logp, _ = cnf_logdensity(model, data, N, scheme)
    return float(-np.mean(logp))


def cnf_sample(model: CnfModel, count: int, seed, N: int = 64, scheme: str = "rk4"):
    """Push standard normal draws through the flow; returns ``(samples, trajectory)``."""
    x = np.random.default_rng(seed).standard_normal((count, model.spec.n))
    traj = integrate(model.hook(), x, 0.0, 1.0, N, scheme)
    return traj.z[-1], traj


def inverse_error(model: CnfModel, x, N: int = 64, scheme: str = "rk4") -> np.ndarray:
    """Per-sample ``|F^-1(F(x)) - x|``."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    hook = model.hook()
    y = integrate(hook, x, 0.0, 1.0, N, scheme).z[-1]
    back = integrate(hook, y, 1.0, 0.0, N, scheme).z[-1]
    return np.linalg.norm(back - x, axis=1)


def spacetime(traj: Trajectory) -> np.ndarray:
    """Trajectory points with time prepended, shape (N + 1, B, n + 1)."""
    Z = traj.z
    T = np.broadcast_to(traj.times[:, None, None], Z.shape[:2] + (1,))
    return np.concatenate([T, Z], axis=-1)


def straightness(trajectories) -> float:
    """Mean over trajectories of max distance to the end-to-end chord / chord length.

    Accepts a :class:`Trajectory`, an array of shape (T, B, d), or a sequence
    of (T, d) point arrays. Distances are measured to the chord segment.
    Trajectories with a chord shorter than 1e-9 count as 0.
    """
    if isinstance(trajectories, Trajectory):
        P = trajectories.z
    elif isinstance(trajectories, np.ndarray) and trajectories.ndim == 3:
        P = trajectories
    else:
        P = np.stack([np.asarray(p, dtype=np.float64) for p in trajectories], axis=1)
    if P.shape[1] == 0:
        raise ValueError("no trajectories")
    p0, p1 = P[0], P[-1]
    u = p1 - p0
    L = np.linalg.norm(u, axis=1)
    safe = np.where(L < 1e-9, 1.0, L)
    s = np.clip(np.einsum("tbd,bd->tb", P - p0, u) / safe**2, 0.0, 1.0)
    dist = np.linalg.norm(P - p0 - s[..., None] * u, axis=2)
    dev = np.where(L < 1e-9, 0.0, dist.max(axis=0) / safe)
    return float(dev.mean())


def train_cnf(
    data,
    alpha: float = 0.0,
    k: int = 16,
    n_intervals: int = 8,
    steps: int = 32,
    scheme: str = "rk4",
    iterations: int = 2000,
    batch: int = 256,
    lr: float = 1e-2,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
    seed: int = 0,
    callback=None,
):
    """Adam on minibatches of ``data``; returns ``(model, history)`` with one record per epoch."""
    data = np.atleast_2d(np.asarray(data, dtype=np.float64))
    rng = np.random.default_rng(seed)
    model = CnfModel.create(data.shape[1], k, n_intervals, alpha, rng)
    state = OptState.fresh(model.params.size, lr, beta1, beta2, eps)
    history = []
    it = epoch = 0
    while it < iterations:
        perm = rng.permutation(data.shape[0])
        losses = []
        for start in range(0, data.shape[0], batch):
            if it >= iterations:
                break
            loss, grad = cnf_loss(model, data[perm[start : start + batch]], steps, scheme)
            params, state = adam_step(model.params, grad, state)
            model = model.with_params(params)
            losses.append(loss)
            it += 1
        rec = {"epoch": epoch, "iteration": it, "loss": float(np.mean(losses))}
        history.append(rec)
        if callback is not None:
            callback(rec)
        log.debug("epoch %d loss %.5f", epoch, rec["loss"])
        epoch += 1
    return model, history
