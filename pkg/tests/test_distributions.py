import numpy as np
import pytest
from scipy import integrate as spi

from ctdl.distributions import (
    GaussianMixture, LabeledDataset, ObstacleCost, gauss_logpdf, make_circles, mixture_logpdf,
    mixture_sample, mixture_score, obstacle_eval, obstacle_grad,
)


def test_gauss_logpdf_values():
    assert gauss_logpdf(np.array([0.0])) == pytest.approx(-0.9189385332046727, abs=1e-12)
    assert gauss_logpdf(np.array([2.0])) == pytest.approx(-2.9189385332046727, abs=1e-12)
    assert gauss_logpdf(np.zeros(2)) == pytest.approx(-1.8378770664093453, abs=1e-12)
    assert gauss_logpdf(np.ones(2)) == pytest.approx(-2.8378770664093453, abs=1e-12)
    np.testing.assert_allclose(gauss_logpdf(np.array([[0.0], [2.0]])), [-0.9189385332046727, -2.9189385332046727])


def test_single_component_matches_gaussian():
    mix = GaussianMixture.make([1.0], [[1.0, -1.0]], [2.0])
    x = np.array([[0.3, 0.5], [-2.0, 4.0]])
    expected = gauss_logpdf((x - [1.0, -1.0]) / 2.0) - 2 * np.log(2.0)
    np.testing.assert_allclose(mixture_logpdf(mix, x), expected, atol=1e-12)


def test_two_component_hand_value():
    mix = GaussianMixture.make([0.5, 0.5], [[-2.0], [2.0]], [0.5, 0.5])
    # at 0 both components contribute equally: density = N(0; 2, 0.25)
    dens = np.exp(-0.5 * 16) / np.sqrt(2 * np.pi * 0.25)
    assert mixture_logpdf(mix, np.array([0.0])) == pytest.approx(np.log(dens), rel=1e-12)


def test_logpdf_far_tail_is_finite():
    mix = GaussianMixture.ring()
    v = mixture_logpdf(mix, np.array([[300.0, 300.0]]))
    assert np.isfinite(v).all() and v[0] < -1e4


def test_density_integrates_to_one_1d():
    mix = GaussianMixture.make([0.3, 0.7], [[-2.0], [1.5]], [0.5, 1.2])
    val, _ = spi.quad(lambda t: np.exp(mixture_logpdf(mix, np.array([t]))), -20, 20, limit=200)
    assert val == pytest.approx(1.0, abs=1e-8)


def test_density_integrates_to_one_2d():
    mix = GaussianMixture.ring(modes=4, radius=2.0, stdev=0.5)
    g = np.linspace(-6, 6, 601)
    X, Y = np.meshgrid(g, g)
    p = np.exp(mixture_logpdf(mix, np.column_stack([X.ravel(), Y.ravel()]))).reshape(X.shape)
    total = spi.trapezoid(spi.trapezoid(p, g, axis=1), g)
    assert total == pytest.approx(1.0, abs=1e-6)


def test_score_matches_finite_differences():
    mix = GaussianMixture.ring(modes=5, radius=2.0, stdev=0.7)
    rng = np.random.default_rng(0)
    x = rng.normal(size=(6, 2)) * 2
    s = mixture_score(mix, x)
    h = 1e-6
    for i in range(2):
        e = np.zeros(2)
        e[i] = h
        fd = (mixture_logpdf(mix, x + e) - mixture_logpdf(mix, x - e)) / (2 * h)
        np.testing.assert_allclose(s[:, i], fd, rtol=1e-6, atol=1e-8)


def test_sampling_moments_and_determinism():
    mix = GaussianMixture.make([0.25, 0.75], [[-2.0, 0.0], [2.0, 1.0]], [0.5, 1.0])
    a = mixture_sample(mix, 40000, seed=3)
    np.testing.assert_array_equal(a, mixture_sample(mix, 40000, seed=3))
    np.testing.assert_allclose(a.mean(axis=0), [1.0, 0.75], atol=0.03)
    # variance along x: within 0.25*0.25 + 0.75*1 plus between 0.25*0.75*16
    assert a[:, 0].var() == pytest.approx(0.0625 + 0.75 + 3.0, rel=0.03)
    np.testing.assert_allclose(mix.mean(), [1.0, 0.75])


def test_ring_geometry():
    mix = GaussianMixture.ring()
    _, mu, s = mix.arrays()
    np.testing.assert_allclose(np.linalg.norm(mu, axis=1), 4.0)
    np.testing.assert_allclose(s, 0.4)
    assert mix.dim == 2


@pytest.mark.parametrize(
    "args",
    [
        ([0.5, 0.4], [[0.0], [1.0]], [1.0, 1.0]),
        ([1.0], [[0.0]], [0.0]),
        ([0.5, 0.5], [[0.0], [1.0, 2.0]], [1.0, 1.0]),
        ([], [], []),
    ],
)
def test_mixture_validation(args):
    with pytest.raises(ValueError):
        GaussianMixture.make(*args)


def test_obstacle_values_and_gradient():
    obs = ObstacleCost((0.0, 2.0), 50.0, 0.5)
    assert obstacle_eval(obs, np.array([0.0, 2.0])) == pytest.approx(50.0)
    assert obstacle_eval(obs, np.array([1.0, 2.0])) == pytest.approx(6.766764161830634, rel=1e-12)
    x = np.array([[0.3, 1.6], [-0.2, 2.5]])
    g = obstacle_grad(obs, x)
    h = 1e-6
    for i in range(2):
        e = np.zeros(2)
        e[i] = h
        np.testing.assert_allclose(g[:, i], (obstacle_eval(obs, x + e) - obstacle_eval(obs, x - e)) / (2 * h), rtol=1e-6)
    with pytest.raises(ValueError):
        ObstacleCost((0.0, 0.0), -1.0)


def test_circles_counts_and_radii():
    d = make_circles(7, noise=0.0, seed=1)
    assert len(d) == 7 and np.sum(d.labels == 0) == 4 and np.sum(d.labels == 1) == 3
    r = np.linalg.norm(d.points, axis=1)
    np.testing.assert_allclose(r[d.labels == 0], 1.0)
    np.testing.assert_allclose(r[d.labels == 1], 2.0)


def test_circles_noise_and_determinism():
    a = make_circles(2000, noise=0.1, seed=4)
    b = make_circles(2000, noise=0.1, seed=4)
    np.testing.assert_array_equal(a.points, b.points)
    r = np.linalg.norm(a.points, axis=1)
    assert np.std(r[a.labels == 0]) == pytest.approx(0.1, rel=0.1)
    # shuffled, not blocked by class
    assert 0 < a.labels[:1000].mean() < 1


def test_circles_edge_cases():
    assert len(make_circles(0)) == 0
    one = make_circles(1, noise=0.0)
    assert one.labels.tolist() == [0]
    with pytest.raises(ValueError):
        make_circles(10, inner=2.0, outer=1.0)


def test_labeled_dataset_validation():
    with pytest.raises(ValueError):
        LabeledDataset(np.zeros((3, 2)), [0, 1])
    with pytest.raises(ValueError):
        LabeledDataset(np.zeros((2, 2)), [0, 2])
    d = LabeledDataset(np.arange(6.0).reshape(3, 2), [0, 1, 1])
    assert d.subset([2]).points.tolist() == [[4.0, 5.0]]
