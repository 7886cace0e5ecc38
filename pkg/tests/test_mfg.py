import numpy as np
import pytest
from scipy.optimize import minimize

from ctdl.distributions import GaussianMixture, ObstacleCost, gauss_logpdf, mixture_logpdf, obstacle_eval
from ctdl.dynamics import ValueNetSpec, value_eval
from ctdl.mfg import (
    MfgScenario, feedback_field, hamiltonian, hjb_residual, interaction, mfg_metrics, mfg_objective,
    obstacle_exposure, running_cost, simulate_agents, terminal_cost, terminal_kl, train_mfg,
)
from ctdl.params import grad_check

TARGET = GaussianMixture.make([0.5, 0.5], [[-1.0, 3.0], [1.0, 3.0]], [0.8, 0.8])
OBS = ObstacleCost((0.0, 1.5), 10.0, 0.5)


def scenario(variant, **kw):
    kw.setdefault("alpha", 0.5)
    return MfgScenario(variant, target=TARGET, obstacle=OBS, **kw)


def random_value(seed, n=2, k=8, scale=0.5):
    rng = np.random.default_rng(seed)
    vs = ValueNetSpec(n, k)
    p = vs.zeros()
    p.data[:] = rng.uniform(-scale, scale, p.size)
    return vs, p, rng


def test_scenario_validation():
    with pytest.raises(ValueError):
        MfgScenario("walk", target=TARGET)
    with pytest.raises(ValueError):
        MfgScenario("ot", alpha=0.0, target=TARGET)
    with pytest.raises(ValueError):
        MfgScenario("ot")
    with pytest.raises(ValueError):
        MfgScenario("crowd", target=TARGET)
    with pytest.raises(ValueError):
        MfgScenario("ot", beta=-1.0, target=TARGET)
    s = scenario("crowd")
    assert s.n == 2 and s.crowd and not scenario("ot").crowd


def test_hamiltonian_values():
    assert hamiltonian("ot", 2.0, None, np.zeros(2), np.array([3.0, 4.0])) == pytest.approx(6.25)
    x = np.array([0.0, 1.5])
    assert hamiltonian("crowd", 2.0, OBS, x, np.array([3.0, 4.0])) == pytest.approx(6.25 - 10.0)
    with pytest.raises(ValueError):
        hamiltonian("ot", 0.0, None, x, x)


def test_hamiltonian_is_grid_supremum():
    x = np.array([0.2, 1.0])
    p = np.array([0.7, -0.4])
    alpha = 0.8
    g = np.linspace(-3, 3, 1201)
    F = np.stack(np.meshgrid(g, g), axis=-1).reshape(-1, 2)
    vals = -F @ p - running_cost("crowd", alpha, OBS, x, F)
    assert vals.max() == pytest.approx(hamiltonian("crowd", alpha, OBS, x, p), abs=1e-4)


def test_hamiltonian_duality_random():
    rng = np.random.default_rng(0)
    for _ in range(100):
        x = rng.normal(size=2)
        p = rng.normal(size=2) * 2
        alpha = rng.uniform(0.1, 3.0)
        res = minimize(lambda f: p @ f + running_cost("crowd", alpha, OBS, x, f), np.zeros(2), method="BFGS",
                       options={"gtol": 1e-10})
        assert -res.fun == pytest.approx(hamiltonian("crowd", alpha, OBS, x, p), abs=1e-3)


def test_feedback_field_is_scaled_negative_gradient():
    vs, p, rng = random_value(1)
    x = rng.normal(size=(4, 2))
    t = 0.3
    f, div = feedback_field(vs, p, 0.5, t, x)
    h = 1e-6
    for i in range(2):
        e = np.zeros(2)
        e[i] = h
        fd = (value_eval(vs, p, t, x + e)[0] - value_eval(vs, p, t, x - e)[0]) / (2 * h)
        np.testing.assert_allclose(f[:, i], -fd / 0.5, rtol=1e-6, atol=1e-9)
    fdiv = sum(
        (feedback_field(vs, p, 0.5, t, x + h * e)[0][:, i] - feedback_field(vs, p, 0.5, t, x - h * e)[0][:, i]) / (2 * h)
        for i, e in enumerate(np.eye(2))
    )
    np.testing.assert_allclose(div, fdiv, rtol=1e-5, atol=1e-8)


def test_interaction_and_terminal_cost():
    s = scenario("crowd", entropy_weight=0.2)
    np.testing.assert_allclose(interaction(s, np.array([0.0, -1.0, -100.0])), [0.2, 0.0, 0.2 * -39.0])
    assert not interaction(scenario("ot"), np.array([3.0])).any()
    z = np.array([[0.0, 3.0]])
    np.testing.assert_allclose(terminal_cost(s, z, np.array([-2.0])), -2.0 - mixture_logpdf(TARGET, z) + 1.0)


def test_residual_with_zero_value_function():
    vs = ValueNetSpec(2, 4)
    x = np.array([[0.0, 1.5], [2.0, 2.0]])
    s = scenario("crowd", entropy_weight=1.0)
    r = hjb_residual(vs, vs.zeros(), s, 0.5, x, np.zeros(2))
    np.testing.assert_allclose(r, -obstacle_eval(OBS, x) - 1.0)
    assert not hjb_residual(vs, vs.zeros(), scenario("ot"), 0.5, x, np.zeros(2)).any()


def test_residual_vanishes_for_exact_solution():
    # Phi = a.x + c t with c = |a|^2 / 2 alpha solves the obstacle-free equation;
    # one tanh unit with tiny inner and large outer weight reproduces it to O(eps^2)
    vs = ValueNetSpec(2, 1)
    p = vs.zeros()
    eps = 1e-4
    a = np.array([0.3, -0.2])
    alpha = 0.5
    # phi = w1 tanh(W0 [t, x]) with w1 = 1/eps, W0 = eps * [c, a]
    c = (a @ a) / (2 * alpha)
    p["W0"][0] = eps * np.r_[c, a]
    p["w1"][0] = 1.0 / eps
    x = np.array([[0.1, 0.2], [-0.3, 0.05]])
    r = hjb_residual(vs, p, scenario("ot", alpha=alpha), 0.0, x, np.zeros(2))
    np.testing.assert_allclose(r, 0.0, atol=1e-6)


@pytest.mark.parametrize("variant", ["ot", "crowd"])
def test_zero_value_function_objective(variant):
    vs = ValueNetSpec(2, 4)
    s = scenario(variant, beta=0.0, entropy_weight=0.1, terminal_weight=2.0)
    x = np.random.default_rng(0).normal(size=(16, 2))
    obj, _, res = mfg_objective(vs, vs.zeros(), s, x, N=4)
    lr0 = gauss_logpdf(x)
    np.testing.assert_allclose(res.z1, x)
    run = np.zeros(16)
    if variant == "crowd":
        run = obstacle_eval(OBS, x) + 0.1 * (lr0 + 1.0)
    np.testing.assert_allclose(res.running, run, atol=1e-12)
    np.testing.assert_allclose(res.terminal, 2.0 * (lr0 - mixture_logpdf(TARGET, x) + 1.0))
    assert obj == pytest.approx(np.mean(run) + np.mean(res.terminal), rel=1e-12)


def test_penalty_with_zero_value_function():
    vs = ValueNetSpec(2, 4)
    s = scenario("crowd", beta=3.0, entropy_weight=0.1)
    x = np.random.default_rng(1).normal(size=(8, 2))
    obj, _, res = mfg_objective(vs, vs.zeros(), s, x, N=4)
    lr0 = gauss_logpdf(x)
    r2 = (obstacle_eval(OBS, x) + 0.1 * (lr0 + 1.0)) ** 2
    G = lr0 - mixture_logpdf(TARGET, x) + 1.0
    np.testing.assert_allclose(res.penalty, r2 + G**2, rtol=1e-12)
    assert obj == pytest.approx(sum(res.parts.values()), rel=1e-14)
    assert res.parts["penalty"] == pytest.approx(3.0 * np.mean(r2 + G**2), rel=1e-12)


@pytest.mark.parametrize("scheme", ["euler", "rk4"])
@pytest.mark.parametrize("variant", ["ot", "crowd"])
def test_objective_gradient(variant, scheme):
    vs, p, rng = random_value(4, k=8, scale=0.4)
    s = scenario(variant, beta=2.0, terminal_weight=1.5)
    x = rng.normal(size=(8, 2))

    def loss(q):
        return mfg_objective(vs, q, s, x, N=8, scheme=scheme)[0]

    _, g, _ = mfg_objective(vs, p, s, x, N=8, scheme=scheme)
    assert grad_check(loss, p, g) < 1e-5


def test_simulation_density_and_kl():
    vs = ValueNetSpec(2, 4)
    std = GaussianMixture.make([1.0], [[0.0, 0.0]], [1.0])
    s = MfgScenario("ot", target=std)
    x = np.random.default_rng(2).normal(size=(32, 2))
    traj, logrho, resid = simulate_agents(vs, vs.zeros(), s, x, N=8)
    assert logrho.shape == (9, 32) and resid.shape == (9, 32)
    np.testing.assert_allclose(logrho[-1], gauss_logpdf(x))
    assert terminal_kl(s, traj.z[-1], logrho[-1]) == pytest.approx(0.0, abs=1e-14)


def test_obstacle_exposure_hand_value():
    vs = ValueNetSpec(2, 4)
    s = scenario("crowd")
    traj, _, _ = simulate_agents(vs, vs.zeros(), s, np.array([[0.0, 1.5], [0.5, 1.5]]), N=4)
    assert obstacle_exposure(s, traj) == pytest.approx(0.5 * (10.0 + 10.0 * np.exp(-0.5)))


def test_metrics_keys():
    vs, p, rng = random_value(5)
    m = mfg_metrics(vs, p, scenario("crowd"), rng.normal(size=(8, 2)), N=4)
    assert set(m) == {"objective", "running", "terminal", "penalty", "hjb_abs", "terminal_kl", "straightness",
                      "obstacle_exposure"}


def test_short_training():
    s = scenario("ot", alpha=1.0, beta=1.0)
    seen = []
    vs, p, hist = train_mfg(s, k=8, steps=8, iterations=40, batch=16, epoch_size=10, eval_batch=32, seed=0,
                            lr_final=1e-3, callback=seen.append)
    assert seen == hist and [r["epoch"] for r in hist] == [0, 1, 2, 3, 4]
    assert "loss" not in hist[0] and hist[-1]["iteration"] == 40
    assert hist[-1]["objective"] < hist[0]["objective"]
    _, p2, hist2 = train_mfg(s, k=8, steps=8, iterations=40, batch=16, epoch_size=10, eval_batch=32, seed=0,
                             lr_final=1e-3)
    np.testing.assert_array_equal(p.data, p2.data)


def test_hamiltonian_examples():
    assert hamiltonian("ot", 0.7, None, np.zeros(2), np.zeros(2)) == 0.0
    assert hamiltonian("ot", 1.0, None, np.zeros(2), np.ones(2)) == pytest.approx(1.0)
    obs = ObstacleCost((0.0, 2.0), 50.0, 0.5)
    assert hamiltonian("crowd", 1.0, obs, np.array([0.0, 2.0]), np.zeros(2)) == pytest.approx(-50.0)


def fit_value_net(target, k=32, seed=0, scale=0.05):
    """Least-squares fit of the output layer on fixed small inner weights (near-linear regime)."""
    rng = np.random.default_rng(seed)
    vs = ValueNetSpec(2, k)
    p = vs.zeros()
    p["W0"][...] = rng.uniform(-scale, scale, (k, 3))
    p["b0"][...] = rng.uniform(-scale, scale, k)
    U = np.column_stack([rng.uniform(0, 1, 2000), rng.uniform(-1, 1, (2000, 2))])
    feats = np.column_stack([np.tanh(U @ p["W0"].T + p["b0"]), np.ones(len(U))])
    coef, *_ = np.linalg.lstsq(feats, target(U[:, 0], U[:, 1:]), rcond=None)
    p["w1"][...] = coef[:-1]
    p["b1"][...] = coef[-1]
    return vs, p


def test_feedback_of_prefit_linear_value():
    c = np.array([0.4, -0.3])
    vs, p = fit_value_net(lambda t, x: x @ c)
    x = np.random.default_rng(1).uniform(-0.8, 0.8, (10, 2))
    f, div = feedback_field(vs, p, 0.5, 0.4, x)
    assert np.max(np.abs(f + c / 0.5)) < 1e-4
    assert np.max(np.abs(div)) < 1e-3


def test_residual_of_prefit_exact_solution():
    c = np.array([0.4, -0.3])
    alpha = 0.5
    vs, p = fit_value_net(lambda t, x: x @ c + t * (c @ c) / (2 * alpha))
    x = np.random.default_rng(2).uniform(-0.8, 0.8, (10, 2))
    for t in (0.1, 0.5, 0.9):
        r = hjb_residual(vs, p, scenario("ot", alpha=alpha), t, x, np.zeros(10))
        assert np.max(np.abs(r)) < 1e-3


def test_constant_value_has_zero_residual():
    vs = ValueNetSpec(2, 4)
    p = vs.zeros()
    p["b1"][0] = 3.0
    f, div = feedback_field(vs, p, 0.5, 0.2, np.ones((3, 2)))
    assert not f.any() and not div.any()
    assert not hjb_residual(vs, p, scenario("ot"), 0.2, np.ones((3, 2)), np.zeros(3)).any()
