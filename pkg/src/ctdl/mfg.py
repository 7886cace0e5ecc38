"""Lagrangian solver for potential mean field games.

The control is never parameterized directly. A scalar value network
``Phi(t, x)`` defines it through the feedback form ``f = -grad Phi / alpha``
(the Hamiltonian of the quadratic running cost is ``|p|^2 / (2 alpha)``), and
agents carry their own log-density along their paths. Violations of the HJB
equation along the same paths enter the objective as a least-squares penalty.

Augmented columns used here: ``logdet`` holds the integrated trace of the
feedback field, so ``log rho(t, z(t)) = log pi_X(x) - logdet(t)``; ``c_run``
holds the running cost and ``c_hjb`` the integrated squared residual.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np

from .cnf import straightness
from .distributions import GaussianMixture, ObstacleCost, gauss_logpdf, mixture_logpdf, mixture_score, obstacle_eval, obstacle_grad
from .dynamics import ValueNetSpec, value_eval, value_forward, value_vjp_into
from .odeint import C_HJB, C_RUN, LOGDET, Trajectory, backprop_trajectory, integrate
from .params import OptState, ParamVector, adam_step

log = logging.getLogger(__name__)

LOGRHO_FLOOR = -40.0


@dataclass(frozen=True)
class MfgScenario:
    variant: str
    alpha: float = 1.0
    beta: float = 1.0
    target: GaussianMixture | None = None
    obstacle: ObstacleCost | None = None
    entropy_weight: float = 0.1
    terminal_weight: float = 1.0

    def __post_init__(self):
        if self.variant not in ("ot", "crowd"):
            raise ValueError(f"variant must be 'ot' or 'crowd', got {self.variant!r}")
        if not self.alpha > 0:
            raise ValueError("alpha must be positive")
        if self.beta < 0 or self.entropy_weight < 0 or self.terminal_weight < 0:
            raise ValueError("beta, entropy_weight and terminal_weight must be nonnegative")
        if self.target is None:
            raise ValueError("scenario needs a target mixture")
        if self.variant == "crowd" and self.obstacle is None:
            raise ValueError("crowd variant needs an obstacle")

    @property
    def n(self) -> int:
        return self.target.dim

    @property
    def crowd(self) -> bool:
        return self.variant == "crowd"


# ---------------------------------------------------------------------------
# pointwise pieces


def obstacle_cost(scn: MfgScenario, x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if not scn.crowd:
        return np.zeros(x.shape[:-1])
    return obstacle_eval(scn.obstacle, x)


def running_cost(variant: str, alpha: float, obstacle: ObstacleCost | None, x, f) -> np.ndarray:
    """``L(x, f) = alpha/2 |f|^2`` plus ``Q(x)`` for crowd motion."""
    f = np.asarray(f, dtype=np.float64)
    L = 0.5 * alpha * np.sum(f * f, axis=-1)
    if variant == "crowd":
        L = L + obstacle_eval(obstacle, x)
    return L


def hamiltonian(variant: str, alpha: float, obstacle: ObstacleCost | None, x, p) -> np.ndarray:
    """Fenchel dual ``sup_f { -p.f - L(x, f) }`` of the running cost."""
    if not alpha > 0:
        raise ValueError("alpha must be positive")
    p = np.asarray(p, dtype=np.float64)
    H = 0.5 * np.sum(p * p, axis=-1) / alpha
    if variant == "crowd":
        H = H - obstacle_eval(obstacle, x)
    return H


def interaction(scn: MfgScenario, logrho) -> np.ndarray:
    """Running coupling ``F(x, rho) = lambda (log rho + 1)`` (crowd only)."""
    logrho = np.asarray(logrho, dtype=np.float64)
    if not scn.crowd:
        return np.zeros_like(logrho)
    return scn.entropy_weight * (np.maximum(logrho, LOGRHO_FLOOR) + 1.0)


def feedback_field(vspec: ValueNetSpec, params: ParamVector, alpha: float, t, x):
    """Optimal control ``-grad Phi / alpha`` and its divergence ``-lap Phi / alpha``."""
    _, _, g, lap = value_eval(vspec, params, t, x)
    return -np.asarray(g) / alpha, -np.asarray(lap) / alpha


def hjb_residual(vspec: ValueNetSpec, params: ParamVector, scn: MfgScenario, t, x, logrho):
    """``-dPhi/dt + H(x, grad Phi) - F(x, rho)``."""
    _, phit, g, _ = value_eval(vspec, params, t, x)
    x = np.asarray(x, dtype=np.float64)
    H = hamiltonian(scn.variant, scn.alpha, scn.obstacle, x, g)
    return -np.asarray(phit) + H - interaction(scn, logrho)


def terminal_cost(scn: MfgScenario, z1, logrho1) -> np.ndarray:
    """``G(x, rho) = log rho - log rho_Y(x) + 1``, the L2 derivative of KL(rho, rho_Y)."""
    return logrho1 - mixture_logpdf(scn.target, z1) + 1.0


# ---------------------------------------------------------------------------
# dynamics hook


class MfgHook:
    """Feedback-form dynamics with log-density, running cost and HJB penalty."""

    def __init__(self, vspec: ValueNetSpec, params: ParamVector, scn: MfgScenario, logrho0):
        self.vspec = vspec
        self.params = params
        self.scn = scn
        self.n = vspec.n
        self.logrho0 = np.asarray(logrho0, dtype=np.float64)

    def _pieces(self, t, Y):
        n = self.n
        Z = Y[:, :n]
        U = np.column_stack([np.full(Z.shape[0], t), Z])
        phi, phit, g, lap = value_forward(self.vspec, self.params, U)
        logrho = self.logrho0 - Y[:, n + LOGDET]
        return Z, U, phit, g, lap, logrho

    def rhs(self, t, tcell, Y):
        scn = self.scn
        n = self.n
        Z, _, phit, g, lap, logrho = self._pieces(t, Y)
        a = scn.alpha
        gg = np.sum(g * g, axis=1)
        Q = obstacle_cost(scn, Z)
        F = interaction(scn, logrho)
        dY = np.zeros_like(Y)
        dY[:, :n] = -g / a
        dY[:, n + LOGDET] = -lap / a
        dY[:, n + C_RUN] = 0.5 * gg / a + Q + F
        r = -phit + 0.5 * gg / a - Q - F
        dY[:, n + C_HJB] = r * r
        return dY

    def vjp(self, t, tcell, Y, dYbar, gacc):
        scn = self.scn
        n = self.n
        a = scn.alpha
        Z, U, phit, g, lap, logrho = self._pieces(t, Y)
        Q = obstacle_cost(scn, Z)
        F = interaction(scn, logrho)
        r = -phit + 0.5 * np.sum(g * g, axis=1) / a - Q - F
        zb = dYbar[:, :n]
        ldb = dYbar[:, n + LOGDET]
        runb = dYbar[:, n + C_RUN]
        rb = 2.0 * r * dYbar[:, n + C_HJB]

        gbar = -zb / a + ((runb + rb) / a)[:, None] * g
        lapbar = -ldb / a
        phitbar = -rb
        Ybar = np.zeros_like(Y)
        if scn.crowd:
            # Q enters c_run with +1 and r with -1; F likewise
            Ybar[:, :n] += (runb - rb)[:, None] * obstacle_grad(scn.obstacle, Z)
            active = (logrho > LOGRHO_FLOOR).astype(np.float64)
            # d logrho / d logdet = -1
            Ybar[:, n + LOGDET] -= scn.entropy_weight * active * (runb - rb)
        Ubar = value_vjp_into(self.vspec, self.params, U, None, phitbar, gbar, lapbar, gacc)
        Ybar[:, :n] += Ubar[:, 1:]
        return Ybar


# ---------------------------------------------------------------------------
# objective


@dataclass
class MfgBatchResult:
    z1: np.ndarray
    logrho1: np.ndarray
    running: np.ndarray  # per agent
    terminal: np.ndarray  # per agent, weighted
    penalty: np.ndarray  # per agent, unweighted (integrated r^2 + terminal mismatch^2)
    objective: float
    parts: dict = field(default_factory=dict)
    trajectory: Trajectory | None = None


def mfg_objective(vspec: ValueNetSpec, params: ParamVector, scn: MfgScenario, x, N: int = 32, scheme: str = "rk4"):
    """Objective ``E[J] + beta E[P_HJB]`` for agents starting at ``x``.

    Returns ``(objective, parameter gradient, MfgBatchResult)``.
    """
    X = np.atleast_2d(np.asarray(x, dtype=np.float64))
    if X.shape[0] == 0:
        raise ValueError("empty batch")
    B, n = X.shape
    logrho0 = gauss_logpdf(X)
    hook = MfgHook(vspec, params, scn, logrho0)
    traj = integrate(hook, X, 0.0, 1.0, N, scheme)
    end = traj.final()
    z1 = end.z
    logrho1 = logrho0 - end.logdet
    w = scn.terminal_weight
    G = terminal_cost(scn, z1, logrho1)
    U1 = np.column_stack([np.ones(B), z1])
    phi1 = value_forward(vspec, params, U1)[0]
    mis = phi1 - w * G
    penalty = end.c_hjb + mis**2
    running = end.c_run
    terminal = w * G
    parts = {
        "running": float(np.mean(running)),
        "terminal": float(np.mean(terminal)),
        "penalty": float(scn.beta * np.mean(penalty)),
    }
    obj = parts["running"] + parts["terminal"] + parts["penalty"]
    if not np.isfinite(obj):
        raise FloatingPointError("non-finite game objective")

    # cotangents of the final augmented state
    Gbar = (w - 2.0 * scn.beta * w * mis) / B
    phibar = 2.0 * scn.beta * mis / B
    Ybar = np.zeros_like(traj.states[-1])
    Ybar[:, n + C_RUN] = 1.0 / B
    Ybar[:, n + C_HJB] = scn.beta / B
    Ybar[:, n + LOGDET] = -Gbar  # G grows with log rho = logrho0 - logdet
    Ybar[:, :n] = -Gbar[:, None] * mixture_score(scn.target, z1)
    gacc = np.zeros(params.size)
    U1bar = value_vjp_into(vspec, params, U1, phibar, None, None, None, gacc)
    Ybar[:, :n] += U1bar[:, 1:]
    grad, _ = backprop_trajectory(hook, traj, Ybar)
    grad.data += gacc
    res = MfgBatchResult(z1, logrho1, running, terminal, penalty, obj, parts, traj)
    return obj, grad, res


def trajectory_residuals(vspec, params, scn: MfgScenario, traj: Trajectory, logrho0) -> np.ndarray:
    """HJB residual at every grid point of an agent trajectory, shape (N + 1, B)."""
    logrho = logrho0[None, :] - traj.accumulator(LOGDET)
    out = np.empty(logrho.shape)
    for j, t in enumerate(traj.times):
        out[j] = hjb_residual(vspec, params, scn, t, traj.z[j], logrho[j])
    return out


def simulate_agents(vspec, params, scn: MfgScenario, x, N: int = 64, scheme: str = "rk4"):
    """Forward agent paths; returns ``(trajectory, logrho (N+1, B), residual (N+1, B))``."""
    X = np.atleast_2d(np.asarray(x, dtype=np.float64))
    logrho0 = gauss_logpdf(X)
    traj = integrate(MfgHook(vspec, params, scn, logrho0), X, 0.0, 1.0, N, scheme)
    logrho = logrho0[None, :] - traj.accumulator(LOGDET)
    return traj, logrho, trajectory_residuals(vspec, params, scn, traj, logrho0)


def terminal_kl(scn: MfgScenario, z1, logrho1) -> float:
    """Monte Carlo estimate of KL(rho(1), rho_Y) from transported agents."""
    return float(np.mean(logrho1 - mixture_logpdf(scn.target, z1)))


def obstacle_exposure(scn: MfgScenario, traj: Trajectory, obstacle: ObstacleCost | None = None) -> float:
    """Mean over agents of the largest obstacle cost met along the path."""
    obs = obstacle if obstacle is not None else scn.obstacle
    return float(np.mean(obstacle_eval(obs, traj.z).max(axis=0)))


def mfg_metrics(vspec, params, scn: MfgScenario, x, N: int = 64, scheme: str = "rk4") -> dict:
    traj, logrho, resid = simulate_agents(vspec, params, scn, x, N, scheme)
    obj, _, res = mfg_objective(vspec, params, scn, x, N, scheme)
    out = {
        "objective": obj,
        **res.parts,
        "hjb_abs": float(np.mean(np.abs(resid))),
        "terminal_kl": terminal_kl(scn, traj.z[-1], logrho[-1]),
        "straightness": straightness(traj),
    }
    if scn.obstacle is not None:
        out["obstacle_exposure"] = obstacle_exposure(scn, traj)
    return out


def train_mfg(
    scn: MfgScenario,
    k: int = 16,
    steps: int = 32,
    scheme: str = "rk4",
    iterations: int = 2000,
    batch: int = 64,
    lr: float = 1e-2,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
    seed: int = 0,
    epoch_size: int = 100,
    eval_batch: int = 256,
    eval_steps: int | None = None,
    lr_final: float | None = None,
    callback=None,
):
    """Adam on fresh reference draws each iteration.

    With ``lr_final`` set, the step size follows a cosine from ``lr`` down to
    ``lr_final`` over the run; the penalty-weighted objective is noisy and a
    decaying step lets the last iterate settle.

    A record is logged before training (epoch 0) and after every
    ``epoch_size`` iterations, measured on a fixed evaluation batch.
    Returns ``(vspec, params, history)``.
    """
    rng = np.random.default_rng(seed)
    vspec = ValueNetSpec(scn.n, k)
    params = vspec.init(rng)
    x_eval = rng.standard_normal((eval_batch, scn.n))
    ev_steps = eval_steps or steps
    state = OptState.fresh(params.size, lr, beta1, beta2, eps)
    history = []

    def record(epoch, it, losses):
        rec = {"epoch": epoch, "iteration": it}
        if losses:
            rec["loss"] = float(np.mean(losses))
        rec.update(mfg_metrics(vspec, params, scn, x_eval, ev_steps, scheme))
        history.append(rec)
        if callback is not None:
            callback(rec)
        log.debug("epoch %d %s", epoch, rec)

    record(0, 0, [])
    losses = []
    for it in range(1, iterations + 1):
        if lr_final is not None:
            frac = (it - 1) / max(iterations - 1, 1)
            state = replace(state, lr=lr_final + 0.5 * (lr - lr_final) * (1.0 + np.cos(np.pi * frac)))
        xb = rng.standard_normal((batch, scn.n))
        obj, grad, _ = mfg_objective(vspec, params, scn, xb, steps, scheme)
        params, state = adam_step(params, grad, state)
        losses.append(obj)
        if it % epoch_size == 0 or it == iterations:
            record(len(history), it, losses)
            losses = []
    return vspec, params, history
