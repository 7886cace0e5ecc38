"""Fixed-step integration of augmented neural ODEs and exact reverse sweeps.

The augmented state of a batch of ``B`` samples is packed as an array of
shape ``(B, n + 4)``::

    [ z_1 .. z_n | logdet | c_ot | c_run | c_hjb ]

``logdet`` accumulates the Jacobian trace with the sign of the time step, so
integrating from t=1 down to t=0 yields log det of the inverse map. The three
cost columns accumulate with ``|h|`` and are therefore nonnegative whichever
direction is integrated.

Hooks describe the right-hand side. They expose ``n``, ``params`` and

``rhs(t, tcell, Y) -> dY``
    time derivatives of every packed column;
``vjp(t, tcell, Y, dYbar, gacc) -> Ybar``
    reverse-mode pullback; parameter gradients are added into ``gacc``.

``t`` is the stage time. ``tcell`` is the midpoint of the current step and is
used by fields whose weights are piecewise constant in time, so that all
stages of one step see the same weights in either direction.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dynamics import FieldSpec, field_forward, field_vjp_into
from .params import ParamVector

LOGDET, C_OT, C_RUN, C_HJB = range(4)
N_ACC = 4

RK4_WEIGHTS = np.array([1.0, 2.0, 2.0, 1.0]) / 6.0


@dataclass
class AugmentedState:
    z: np.ndarray
    logdet: np.ndarray
    c_ot: np.ndarray
    c_run: np.ndarray
    c_hjb: np.ndarray

    @classmethod
    def start(cls, z) -> "AugmentedState":
        Z = np.atleast_2d(np.asarray(z, dtype=np.float64))
        zero = np.zeros(Z.shape[0])
        return cls(Z.copy(), zero.copy(), zero.copy(), zero.copy(), zero.copy())

    def pack(self) -> np.ndarray:
        return np.column_stack([self.z, self.logdet, self.c_ot, self.c_run, self.c_hjb])

    @classmethod
    def unpack(cls, Y: np.ndarray) -> "AugmentedState":
        n = Y.shape[-1] - N_ACC
        return cls(Y[..., :n], Y[..., n], Y[..., n + 1], Y[..., n + 2], Y[..., n + 3])


@dataclass
class Trajectory:
    times: np.ndarray  # (N + 1,)
    states: np.ndarray  # (N + 1, B, n + 4)
    stages: np.ndarray  # (N, S, B, n + 4) stage inputs
    scheme: str
    n: int

    @property
    def steps(self) -> int:
        return self.times.size - 1

    @property
    def h(self) -> float:
        return (self.times[-1] - self.times[0]) / self.steps

    @property
    def z(self) -> np.ndarray:
        """Feature states, shape (N + 1, B, n)."""
        return self.states[..., : self.n]

    def final(self) -> AugmentedState:
        return AugmentedState.unpack(self.states[-1])

    def accumulator(self, which: int) -> np.ndarray:
        return self.states[..., self.n + which]


def _scale(n: int, h: float) -> np.ndarray:
    return np.concatenate([np.full(n + 1, h), np.full(N_ACC - 1, abs(h))])


def _stage_times(t: float, h: float, scheme: str):
    if scheme == "euler":
        return (t,)
    return (t, t + 0.5 * h, t + 0.5 * h, t + h)


def integrate(hook, init, t0: float, t1: float, N: int, scheme: str = "rk4") -> Trajectory:
    """Integrate the packed augmented state from ``t0`` to ``t1`` in ``N`` steps."""
    if N < 1:
        raise ValueError("step count must be at least 1")
    if scheme not in ("euler", "rk4"):
        raise ValueError(f"unknown scheme {scheme!r}")
    if isinstance(init, AugmentedState):
        Y = init.pack()
    else:
        Y = AugmentedState.start(init).pack()
    n = Y.shape[1] - N_ACC
    if n != hook.n:
        raise ValueError(f"state dimension {n} does not match hook dimension {hook.n}")
    h = (t1 - t0) / N
    scale = _scale(n, h)
    S = 1 if scheme == "euler" else 4
    times = t0 + (t1 - t0) * np.arange(N + 1) / N
    states = np.empty((N + 1,) + Y.shape)
    stages = np.empty((N, S) + Y.shape)
    states[0] = Y
    # overflow surfaces through the finiteness check below, not as numpy warnings
    with np.errstate(over="ignore", invalid="ignore"):
        for step in range(N):
            t = times[step]
            tc = t0 + (t1 - t0) * (step + 0.5) / N
            if scheme == "euler":
                stages[step, 0] = Y
                Y = Y + scale * hook.rhs(t, tc, Y)
            else:
                ts = _stage_times(t, h, scheme)
                stages[step, 0] = Y
                k1 = hook.rhs(ts[0], tc, Y)
                stages[step, 1] = Y + 0.5 * scale * k1
                k2 = hook.rhs(ts[1], tc, stages[step, 1])
                stages[step, 2] = Y + 0.5 * scale * k2
                k3 = hook.rhs(ts[2], tc, stages[step, 2])
                stages[step, 3] = Y + scale * k3
                k4 = hook.rhs(ts[3], tc, stages[step, 3])
                Y = Y + scale * (k1 + 2.0 * k2 + 2.0 * k3 + k4) / 6.0
            if not np.all(np.isfinite(Y)):
                raise FloatingPointError(f"non-finite state after step {step} (t={times[step + 1]:.6g})")
            states[step + 1] = Y
    return Trajectory(times, states, stages, scheme, n)


def invert_map(hook, y, N: int, scheme: str = "rk4") -> np.ndarray:
    """Approximate the inverse flow map by integrating from t=1 back to t=0."""
    y = np.asarray(y, dtype=np.float64)
    traj = integrate(hook, y, 1.0, 0.0, N, scheme)
    x = traj.z[-1]
    return x[0] if y.ndim == 1 else x


def backprop_trajectory(hook, traj: Trajectory, terminal_cotangent):
    """Reverse sweep through the recorded steps.

    ``terminal_cotangent`` is the gradient of the loss with respect to the
    packed final state (or an :class:`AugmentedState` holding it). Returns
    ``(param_grad, init_cotangent)``; ``param_grad`` is a ParamVector when the
    hook's parameters are one.
    """
    if traj.stages is None or traj.stages.shape[0] != traj.steps:
        raise ValueError("trajectory has no stage cache")
    if isinstance(terminal_cotangent, AugmentedState):
        Ybar = terminal_cotangent.pack()
    else:
        Ybar = np.array(terminal_cotangent, dtype=np.float64, copy=True)
    Ybar = Ybar.reshape(traj.states.shape[1:])
    params = hook.params
    gacc = np.zeros(params.size)
    h = traj.h
    scale = _scale(traj.n, h)
    t0, t1 = traj.times[0], traj.times[-1]
    N = traj.steps
    for step in range(N - 1, -1, -1):
        t = traj.times[step]
        tc = t0 + (t1 - t0) * (step + 0.5) / N
        st = traj.stages[step]
        if traj.scheme == "euler":
            Ybar = Ybar + hook.vjp(t, tc, st[0], scale * Ybar, gacc)
            continue
        ts = _stage_times(t, h, traj.scheme)
        kbar = [w * scale * Ybar for w in RK4_WEIGHTS]
        Yn_bar = Ybar.copy()
        Ubar = hook.vjp(ts[3], tc, st[3], kbar[3], gacc)
        Yn_bar += Ubar
        kbar[2] = kbar[2] + scale * Ubar
        Ubar = hook.vjp(ts[2], tc, st[2], kbar[2], gacc)
        Yn_bar += Ubar
        kbar[1] = kbar[1] + 0.5 * scale * Ubar
        Ubar = hook.vjp(ts[1], tc, st[1], kbar[1], gacc)
        Yn_bar += Ubar
        kbar[0] = kbar[0] + 0.5 * scale * Ubar
        Yn_bar += hook.vjp(ts[0], tc, st[0], kbar[0], gacc)
        Ybar = Yn_bar
    grad = params.with_data(gacc) if isinstance(params, ParamVector) else gacc
    return grad, Ybar


# ---------------------------------------------------------------------------
# hooks


class FieldHook:
    """Neural field driving ``z``, optionally the trace and transport columns."""

    def __init__(self, spec: FieldSpec, params: ParamVector, trace: bool = True, transport: bool = True):
        self.spec = spec
        self.params = params
        self.n = spec.n
        self.trace = trace
        self.transport = transport

    def rhs(self, t, tcell, Y):
        n = self.n
        F, tr = field_forward(self.spec, self.params, self.spec.interval(tcell), Y[:, :n])
        dY = np.zeros_like(Y)
        dY[:, :n] = F
        if self.trace:
            dY[:, n + LOGDET] = tr
        if self.transport:
            dY[:, n + C_OT] = 0.5 * np.sum(F * F, axis=1)
        return dY

    def vjp(self, t, tcell, Y, dYbar, gacc):
        n = self.n
        i = self.spec.interval(tcell)
        Z = Y[:, :n]
        vbar = dYbar[:, :n]
        if self.transport:
            F, _ = field_forward(self.spec, self.params, i, Z)
            vbar = vbar + dYbar[:, n + C_OT, None] * F
        sbar = dYbar[:, n + LOGDET] if self.trace else None
        Ybar = np.zeros_like(Y)
        Ybar[:, :n] = field_vjp_into(self.spec, self.params, i, Z, vbar, sbar, gacc)
        return Ybar


class LinearHook:
    """Closed-form test field ``dz/dt = A z`` with trace ``tr A``.

    The parameter vector is the single block ``A``.
    """

    def __init__(self, A):
        A = np.atleast_2d(np.asarray(A, dtype=np.float64))
        self.n = A.shape[0]
        self.params = ParamVector([("A", A.shape)], A.reshape(-1))

    @property
    def A(self):
        return self.params["A"]

    def rhs(self, t, tcell, Y):
        n = self.n
        dY = np.zeros_like(Y)
        dY[:, :n] = Y[:, :n] @ self.A.T
        dY[:, n + LOGDET] = np.trace(self.A)
        return dY

    def vjp(self, t, tcell, Y, dYbar, gacc):
        n = self.n
        zbar = dYbar[:, :n]
        G = self.params.with_data(gacc)["A"]
        G += zbar.T @ Y[:, :n]
        G += dYbar[:, n + LOGDET].sum() * np.eye(n)
        Ybar = np.zeros_like(Y)
        Ybar[:, :n] = zbar @ self.A
        return Ybar
