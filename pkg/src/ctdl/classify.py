"""Binary classification with a neural ODE feature map and an affine readout."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize

from .distributions import LabeledDataset
from .dynamics import FieldSpec
from .odeint import FieldHook, Trajectory, backprop_trajectory, integrate
from .params import OptState, ParamVector, adam_step

log = logging.getLogger(__name__)


@dataclass
class ClassifierModel:
    spec: FieldSpec
    params: ParamVector  # field blocks plus "W" (1, d) and "b" (1,)
    pad: int = 0

    @classmethod
    def create(cls, n_in: int, pad: int = 0, k: int = 16, n_intervals: int = 8, rng=None) -> "ClassifierModel":
        if pad < 0:
            raise ValueError("pad must be nonnegative")
        spec = FieldSpec(n_in + pad, k, n_intervals)
        layout = spec.layout() + [("W", (1, spec.n)), ("b", (1,))]
        params = ParamVector(layout)
        if rng is not None:
            field = spec.init(rng)
            params.data[: field.size] = field.data
            s = 1.0 / np.sqrt(spec.n)
            params["W"][...] = rng.uniform(-s, s, size=(1, spec.n))
        return cls(spec, params, pad)

    @property
    def dim(self) -> int:
        return self.spec.n

    def with_params(self, params: ParamVector) -> "ClassifierModel":
        return ClassifierModel(self.spec, params, self.pad)


def augment(x, pad: int) -> np.ndarray:
    """Append ``pad`` zeros to each input vector."""
    if pad < 0:
        raise ValueError("pad must be nonnegative")
    x = np.asarray(x, dtype=np.float64)
    zeros = np.zeros(x.shape[:-1] + (pad,))
    return np.concatenate([x, zeros], axis=-1)


def sigmoid(s):
    return 0.5 * (1.0 + np.tanh(0.5 * np.asarray(s)))


def classify_forward(model: ClassifierModel, x, N: int = 32, scheme: str = "rk4") -> tuple[np.ndarray, Trajectory]:
    x = np.asarray(x, dtype=np.float64)
    hook = FieldHook(model.spec, model.params, trace=False, transport=False)
    traj = integrate(hook, augment(np.atleast_2d(x), model.pad), 0.0, 1.0, N, scheme)
    logits = traj.z[-1] @ model.params["W"][0] + model.params["b"][0]
    return (logits[0] if x.ndim == 1 else logits), traj


def classify_loss(model: ClassifierModel, batch: LabeledDataset, N: int = 32, scheme: str = "rk4"):
    """Mean binary cross-entropy with logits and its exact parameter gradient."""
    if len(batch) == 0:
        raise ValueError("empty batch")
    logits, traj = classify_forward(model, batch.points, N, scheme)
    y = batch.labels.astype(np.float64)
    B = y.size
    loss = float(np.mean(np.logaddexp(0.0, logits) - y * logits))
    if not np.isfinite(loss):
        raise FloatingPointError("non-finite classification loss")
    dlogit = (sigmoid(logits) - y) / B
    W = model.params["W"][0]
    Ybar = np.zeros(traj.states.shape[1:])
    Ybar[:, : model.dim] = dlogit[:, None] * W
    grad, _ = backprop_trajectory(FieldHook(model.spec, model.params, False, False), traj, Ybar)
    grad["W"][0] += dlogit @ traj.z[-1]
    grad["b"][0] += dlogit.sum()
    return loss, grad


def predict_proba(model: ClassifierModel, x, N: int = 32, scheme: str = "rk4") -> np.ndarray:
    """Probability of class 1."""
    logits, _ = classify_forward(model, x, N, scheme)
    return sigmoid(logits)


def eval_accuracy(model: ClassifierModel, data: LabeledDataset, N: int = 32, scheme: str = "rk4") -> float:
    logits, _ = classify_forward(model, data.points, N, scheme)
    return float(np.mean((logits > 0).astype(np.int64) == data.labels))


def propagated_features(model: ClassifierModel, x, N: int = 32, scheme: str = "rk4") -> np.ndarray:
    _, traj = classify_forward(model, x, N, scheme)
    return traj.z[-1]


def predict_grid(model: ClassifierModel, lim: float = 3.0, res: int = 61, N: int = 32, scheme: str = "rk4"):
    """Class-1 probabilities on a ``res x res`` grid over ``[-lim, lim]^2``."""
    g = np.linspace(-lim, lim, res)
    X1, X2 = np.meshgrid(g, g, indexing="xy")
    pts = np.column_stack([X1.ravel(), X2.ravel()])
    return pts, predict_proba(model, pts, N, scheme)


def probe_margin(features, labels, reg: float = 1e-4) -> float:
    """Geometric margin of an L2-regularized logistic probe.

    Returns ``min_i y_i (w . z_i + b) / |w|`` with ``y`` in {-1, +1}; the value
    is negative when the probe misclassifies any point.
    """
    Z = np.asarray(features, dtype=np.float64)
    y = 2.0 * np.asarray(labels, dtype=np.float64) - 1.0
    mu, sd = Z.mean(axis=0), Z.std(axis=0) + 1e-12
    Zs = (Z - mu) / sd
    d = Z.shape[1]

    def f(theta):
        w, b = theta[:d], theta[d]
        m = y * (Zs @ w + b)
        loss = np.mean(np.logaddexp(0.0, -m)) + 0.5 * reg * w @ w
        s = -y * sigmoid(-m) / y.size
        return loss, np.concatenate([Zs.T @ s + reg * w, [s.sum()]])

    res = minimize(f, np.zeros(d + 1), jac=True, method="L-BFGS-B")
    w_s, b_s = res.x[:d], res.x[d]
    # back to the unscaled feature space
    w = w_s / sd
    b = b_s - w @ mu
    return float(np.min(y * (Z @ w + b)) / np.linalg.norm(w))


def train_classifier(
    data: LabeledDataset,
    pad: int = 1,
    k: int = 16,
    n_intervals: int = 8,
    steps: int = 32,
    scheme: str = "rk4",
    iterations: int = 2000,
    batch: int = 64,
    lr: float = 1e-2,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
    seed: int = 0,
    callback=None,
):
    """Adam on minibatches; returns ``(model, history)``.

    One history record per epoch (a pass over the shuffled data, or the
    remainder of the iteration budget).
    """
    rng = np.random.default_rng(seed)
    model = ClassifierModel.create(data.points.shape[1], pad, k, n_intervals, rng)
    state = OptState.fresh(model.params.size, lr, beta1, beta2, eps)
    history = []
    it = 0
    epoch = 0
    count = len(data)
    while it < iterations:
        perm = rng.permutation(count)
        losses = []
        for start in range(0, count, batch):
            if it >= iterations:
                break
            mb = data.subset(perm[start : start + batch])
            loss, grad = classify_loss(model, mb, steps, scheme)
            params, state = adam_step(model.params, grad, state)
            model = model.with_params(params)
            losses.append(loss)
            it += 1
        acc = eval_accuracy(model, data, steps, scheme)
        rec = {"epoch": epoch, "iteration": it, "loss": float(np.mean(losses)), "accuracy": acc}
        history.append(rec)
        if callback is not None:
            callback(rec)
        log.debug("epoch %d loss %.5f acc %.4f", epoch, rec["loss"], acc)
        epoch += 1
    return model, history
