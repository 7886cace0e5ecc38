"""One-hidden-layer tanh networks and their analytic derivatives.

Two networks live here:

* the dynamics field ``f(z) = W1 tanh(W0 z + b0) + b1`` with weights that are
  piecewise constant over ``n_intervals`` equal slices of [0, 1];
* the scalar value network ``Phi(t, x) = w1 . tanh(W0 (t, x) + b0) + b1``.

Every function accepts a single point of shape ``(n,)`` or a batch of shape
``(B, n)``; outputs follow the input's batching. Reverse-mode products are
written by hand so that gradients are exact to rounding.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .params import ParamVector, init_uniform


@dataclass(frozen=True)
class TanhDerivs:
    t: np.ndarray
    d1: np.ndarray
    d2: np.ndarray
    d3: np.ndarray

    @classmethod
    def of(cls, a, order: int = 3) -> "TanhDerivs":
        t = np.tanh(a)
        d1 = 1.0 - t * t
        d2 = -2.0 * t * d1 if order >= 2 else None
        d3 = -2.0 * d1 * (1.0 - 3.0 * t * t) if order >= 3 else None
        return cls(t, d1, d2, d3)


def _batch(z, n: int) -> tuple[np.ndarray, bool]:
    z = np.asarray(z, dtype=np.float64)
    single = z.ndim == 1
    Z = np.atleast_2d(z)
    if Z.ndim != 2 or Z.shape[1] != n:
        raise ValueError(f"expected state dimension {n}, got shape {z.shape}")
    return Z, single


# ---------------------------------------------------------------------------
# dynamics field


@dataclass(frozen=True)
class FieldSpec:
    n: int
    k: int
    n_intervals: int = 8

    def __post_init__(self):
        if self.n < 1 or self.k < 1 or self.n_intervals < 1:
            raise ValueError(f"invalid field sizes n={self.n} k={self.k} N_t={self.n_intervals}")

    @property
    def autonomous(self) -> bool:
        return self.n_intervals == 1

    def layout(self):
        out = []
        for i in range(self.n_intervals):
            out += [
                (f"W0_{i}", (self.k, self.n)),
                (f"b0_{i}", (self.k,)),
                (f"W1_{i}", (self.n, self.k)),
                (f"b1_{i}", (self.n,)),
            ]
        return out

    def zeros(self) -> ParamVector:
        return ParamVector(self.layout())

    def init(self, rng: np.random.Generator) -> ParamVector:
        fan = {}
        for i in range(self.n_intervals):
            fan[f"W0_{i}"] = self.n
            fan[f"W1_{i}"] = self.k
        return init_uniform(self.zeros(), rng, fan)

    def interval(self, t: float) -> int:
        if not 0.0 <= t <= 1.0:
            raise ValueError(f"time {t} outside [0, 1]")
        return min(int(np.floor(t * self.n_intervals)), self.n_intervals - 1)

    def weights(self, params: ParamVector, i: int):
        return (params[f"W0_{i}"], params[f"b0_{i}"], params[f"W1_{i}"], params[f"b1_{i}"])


def _field_core(spec, params, t, z):
    Z, single = _batch(z, spec.n)
    i = spec.interval(t)
    W0, b0, W1, b1 = spec.weights(params, i)
    A = Z @ W0.T + b0
    return Z, single, i, (W0, b0, W1, b1), A


def field_eval(spec: FieldSpec, params: ParamVector, t: float, z) -> np.ndarray:
    _, single, _, (W0, b0, W1, b1), A = _field_core(spec, params, t, z)
    F = np.tanh(A) @ W1.T + b1
    return F[0] if single else F


def field_jacobian(spec: FieldSpec, params: ParamVector, t: float, z) -> np.ndarray:
    _, single, _, (W0, _, W1, _), A = _field_core(spec, params, t, z)
    d1 = 1.0 - np.tanh(A) ** 2
    J = np.einsum("ik,bk,kj->bij", W1, d1, W0)
    return J[0] if single else J


def trace_coeffs(W0: np.ndarray, W1: np.ndarray) -> np.ndarray:
    # c_j = sum_i W1[i, j] W0[j, i], so tr(W1 diag(d) W0) = d . c
    return np.einsum("ij,ji->j", W1, W0)


def field_trace(spec: FieldSpec, params: ParamVector, t: float, z):
    _, single, _, (W0, _, W1, _), A = _field_core(spec, params, t, z)
    tr = (1.0 - np.tanh(A) ** 2) @ trace_coeffs(W0, W1)
    return tr[0] if single else tr


def field_forward(spec: FieldSpec, params: ParamVector, i: int, Z: np.ndarray):
    """Velocity and Jacobian trace on a batch for weight interval ``i``."""
    W0, b0, W1, b1 = spec.weights(params, i)
    T = np.tanh(Z @ W0.T + b0)
    return T @ W1.T + b1, (1.0 - T * T) @ trace_coeffs(W0, W1)


def field_vjp_into(spec, params, i, Z, vbar, sbar, gacc: np.ndarray) -> np.ndarray:
    """Pull back cotangents of (f, tr grad f) on interval ``i``.

    ``vbar`` has shape (B, n) or is None; ``sbar`` has shape (B,) or is None.
    Parameter gradients are added into the flat array ``gacc``; the state
    gradient of shape (B, n) is returned.
    """
    W0, b0, W1, b1 = spec.weights(params, i)
    G = params.with_data(gacc)
    T = np.tanh(Z @ W0.T + b0)
    d1 = 1.0 - T * T
    Abar = np.zeros_like(T)
    if vbar is not None:
        G[f"W1_{i}"][...] += vbar.T @ T
        G[f"b1_{i}"][...] += vbar.sum(axis=0)
        Abar += (vbar @ W1) * d1
    if sbar is not None:
        cbar = sbar @ d1
        G[f"W1_{i}"][...] += cbar[None, :] * W0.T
        G[f"W0_{i}"][...] += cbar[:, None] * W1.T
        d2 = -2.0 * T * d1
        Abar += np.outer(sbar, trace_coeffs(W0, W1)) * d2
    G[f"W0_{i}"][...] += Abar.T @ Z
    G[f"b0_{i}"][...] += Abar.sum(axis=0)
    return Abar @ W0


def field_vjp(spec: FieldSpec, params: ParamVector, t: float, z, v=None, s=None):
    """Return (dz, dparams) for the scalar ``v . f(z) + s * tr grad f(z)``."""
    Z, single = _batch(z, spec.n)
    i = spec.interval(t)
    V = None if v is None else np.asarray(v, dtype=np.float64).reshape(Z.shape)
    S = None if s is None else np.asarray(s, dtype=np.float64).reshape(Z.shape[0])
    gacc = np.zeros(params.size)
    zbar = field_vjp_into(spec, params, i, Z, V, S, gacc)
    return (zbar[0] if single else zbar), params.with_data(gacc)


def resnet_step(spec: FieldSpec, params: ParamVector, z) -> np.ndarray:
    """Residual layer ``z + f(z)``: one forward-Euler step of unit length."""
    if not spec.autonomous:
        raise ValueError("resnet_step needs an autonomous field (n_intervals=1)")
    z = np.asarray(z, dtype=np.float64)
    return z + 1.0 * field_eval(spec, params, 0.0, z)


# ---------------------------------------------------------------------------
# value network


@dataclass(frozen=True)
class ValueNetSpec:
    n: int
    k: int

    def __post_init__(self):
        if self.n < 1 or self.k < 1:
            raise ValueError(f"invalid value-net sizes n={self.n} k={self.k}")

    def layout(self):
        return [("W0", (self.k, self.n + 1)), ("b0", (self.k,)), ("w1", (self.k,)), ("b1", (1,))]

    def zeros(self) -> ParamVector:
        return ParamVector(self.layout())

    def init(self, rng: np.random.Generator) -> ParamVector:
        return init_uniform(self.zeros(), rng, {"W0": self.n + 1, "w1": self.k})


def _value_inputs(spec, t, x):
    X, single = _batch(x, spec.n)
    T = np.broadcast_to(np.asarray(t, dtype=np.float64), (X.shape[0],))
    return np.column_stack([T, X]), single


def value_forward(spec: ValueNetSpec, params: ParamVector, U: np.ndarray):
    W0, b0, w1, b1 = params["W0"], params["b0"], params["w1"], params["b1"]
    d = TanhDerivs.of(U @ W0.T + b0, order=2)
    V = W0[:, 1:]
    g = w1 * d.d1
    phi = d.t @ w1 + b1[0]
    phit = g @ W0[:, 0]
    grad = g @ V
    lap = (w1 * d.d2) @ np.sum(V * V, axis=1)
    return phi, phit, grad, lap


def value_eval(spec: ValueNetSpec, params: ParamVector, t, x):
    """Return ``(Phi, dPhi/dt, grad_x Phi, laplacian_x Phi)``."""
    U, single = _value_inputs(spec, t, x)
    out = value_forward(spec, params, U)
    if single:
        return float(out[0][0]), float(out[1][0]), out[2][0], float(out[3][0])
    return out


def value_vjp_into(spec, params, U, phibar, tbar, gbar, lbar, gacc: np.ndarray) -> np.ndarray:
    """Pull back cotangents of the four value-net outputs on a batch.

    Any cotangent may be None. Returns the gradient with respect to the input
    rows ``U = (t, x)``, shape (B, n + 1).
    """
    W0, b0, w1 = params["W0"], params["b0"], params["w1"]
    G = params.with_data(gacc)
    d = TanhDerivs.of(U @ W0.T + b0)
    V = W0[:, 1:]
    a = W0[:, 0]
    Abar = np.zeros_like(d.t)
    w1bar = np.zeros_like(w1)
    W0bar = np.zeros_like(W0)
    if phibar is not None:
        w1bar += phibar @ d.t
        G["b1"][0] += phibar.sum()
        Abar += np.outer(phibar, w1) * d.d1
    if tbar is not None:
        w1bar += (tbar @ d.d1) * a
        W0bar[:, 0] += w1 * (tbar @ d.d1)
        Abar += np.outer(tbar, w1 * a) * d.d2
    if gbar is not None:
        proj = gbar @ V.T  # (B, k)
        W0bar[:, 1:] += (w1 * d.d1).T @ gbar
        w1bar += np.sum(d.d1 * proj, axis=0)
        Abar += w1 * proj * d.d2
    if lbar is not None:
        q = np.sum(V * V, axis=1)
        w1bar += (lbar @ d.d2) * q
        W0bar[:, 1:] += 2.0 * ((lbar @ d.d2) * w1)[:, None] * V
        Abar += np.outer(lbar, w1 * q) * d.d3
    W0bar += Abar.T @ U
    G["W0"][...] += W0bar
    G["b0"][...] += Abar.sum(axis=0)
    G["w1"][...] += w1bar
    return Abar @ W0


def value_vjp(spec: ValueNetSpec, params: ParamVector, t, x, phibar=None, tbar=None, gbar=None, lbar=None):
    """Return ``(dx, dt, dparams)`` for the cotangent-weighted value outputs."""
    U, single = _value_inputs(spec, t, x)
    B = U.shape[0]

    def col(c):
        return None if c is None else np.broadcast_to(np.asarray(c, dtype=np.float64), (B,))

    gb = None if gbar is None else np.asarray(gbar, dtype=np.float64).reshape(B, spec.n)
    gacc = np.zeros(params.size)
    Ubar = value_vjp_into(spec, params, U, col(phibar), col(tbar), gb, col(lbar), gacc)
    if single:
        return Ubar[0, 1:], float(Ubar[0, 0]), params.with_data(gacc)
    return Ubar[:, 1:], Ubar[:, 0], params.with_data(gacc)
