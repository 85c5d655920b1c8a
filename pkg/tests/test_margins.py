"""
Tests for margins: families, generalized inverse, distributional transform, fits
"""
import numpy as np
import pytest
from scipy import stats

from services.errors import FitError, ParameterError, RangeError
from services.margins import (
    Margin,
    distributional_transform,
    fit_margin,
    margin_cdf,
    margin_quantile,
    pseudo_observations,
)


def test_normal_cdf_and_quantile():
    m = Margin.normal(1.0, 2.0)
    assert m.cdf(1.0) == pytest.approx(0.5)
    assert m.quantile(0.975) == pytest.approx(1.0 + 2.0 * 1.959963984540054)
    assert m.pdf(1.0) == pytest.approx(1.0 / (2.0 * np.sqrt(2 * np.pi)))


def test_gamma_quantile_inverts_cdf():
    m = Margin.gamma(2.0, 1.0)
    u = np.array([0.01, 0.25, 0.5, 0.9, 0.999])
    np.testing.assert_allclose(m.cdf(m.quantile(u)), u, rtol=1e-7)
    assert m.mean() == pytest.approx(2.0)
    assert m.cdf(-1.0) == 0.0
    assert m.pdf(-1.0) == 0.0


def test_bernoulli_steps():
    m = Margin.bernoulli(0.3)
    assert m.cdf(0.0) == pytest.approx(0.7)
    assert m.cdf_left(0.0) == 0.0
    assert m.cdf(1.0) == 1.0
    assert m.cdf_left(1.0) == pytest.approx(0.7)
    assert m.quantile(0.0) == 0.0
    assert m.quantile(0.7) == 0.0
    assert m.quantile(0.71) == 1.0
    assert m.quantile(1.0) == 1.0
    assert m.pdf(1.0) == pytest.approx(0.3)


def test_empirical_margin_uses_rank_over_n_plus_one():
    m = Margin.empirical([3.0, 1.0, 2.0])
    assert m.n == 3
    assert m.cdf(2.0) == pytest.approx(0.5)
    assert m.cdf(0.0) == 0.0
    assert m.cdf(10.0) == pytest.approx(0.75)
    assert m.quantile(0.25) == 1.0
    assert m.quantile(0.5) == 2.0
    assert m.quantile(0.9) == 3.0
    assert m.support() == (1.0, 3.0)


def test_quantile_preserves_array_shape():
    m = Margin.normal(0.0, 1.0)
    u = np.full((4, 3), 0.5)
    out = m.quantile(u)
    assert out.shape == (4, 3)
    assert isinstance(m.quantile(0.5), float)


@pytest.mark.parametrize("margin,u", [
    (Margin.normal(0, 1), 0.0),
    (Margin.normal(0, 1), 1.0),
    (Margin.gamma(2, 1), 1.5),
    (Margin.bernoulli(0.5), 1.1),
    (Margin.empirical([1.0, 2.0]), -0.1),
])
def test_quantile_outside_domain_raises(margin, u):
    with pytest.raises(RangeError):
        margin_quantile(margin, u)


@pytest.mark.parametrize("build", [
    lambda: Margin.normal(0, 0),
    lambda: Margin.gamma(-1, 1),
    lambda: Margin.gamma(1, 0),
    lambda: Margin.bernoulli(1.5),
    lambda: Margin.empirical([]),
    lambda: Margin("poisson", (1.0,)),
])
def test_invalid_parameters_raise(build):
    with pytest.raises(ParameterError):
        build()


def test_margin_cdf_rejects_non_finite():
    with pytest.raises(RangeError):
        margin_cdf(Margin.normal(0, 1), np.inf)


def test_distributional_transform_fills_the_step():
    m = Margin.bernoulli(0.3)
    assert distributional_transform(m, 1.0, 0.5) == pytest.approx(0.85)
    assert distributional_transform(m, 0.0, 0.5) == pytest.approx(0.35)
    assert distributional_transform(Margin.normal(0, 1), 0.0, 0.9) == pytest.approx(0.5)
    with pytest.raises(RangeError):
        distributional_transform(m, 1.0, 1.5)


def test_distributional_transform_ranks_are_uniform():
    gen = np.random.default_rng(3)
    m = Margin.bernoulli(0.4)
    x = m.sample(5000, gen)
    u = distributional_transform(m, x, gen.random(5000))
    assert abs(u.mean() - 0.5) < 0.02
    assert stats.kstest(u, "uniform").statistic < 0.03


def test_pseudo_observations():
    np.testing.assert_allclose(pseudo_observations([3.0, 1.0, 2.0]), [0.75, 0.25, 0.5])
    matrix = pseudo_observations(np.array([[1.0, 5.0], [2.0, 4.0], [3.0, 6.0]]))
    np.testing.assert_allclose(matrix[:, 1], [0.5, 0.25, 0.75])


def test_fit_normal_and_gamma_recover_parameters():
    gen = np.random.default_rng(11)
    normal = fit_margin("normal", gen.normal(2.0, 3.0, 5000))
    assert normal.params[0] == pytest.approx(2.0, abs=0.15)
    assert normal.params[1] == pytest.approx(3.0, abs=0.15)

    gamma = fit_margin("gamma", gen.gamma(3.0, 0.5, 5000))
    shape, rate = gamma.params
    assert shape == pytest.approx(3.0, abs=0.3)
    assert rate == pytest.approx(2.0, abs=0.25)


def test_weighted_fit():
    m = fit_margin("normal", [1.0, 2.0, 3.0], weights=[1.0, 1.0, 2.0])
    assert m.params[0] == pytest.approx(2.25)
    assert fit_margin("bernoulli", [0, 1, 1], weights=[2.0, 1.0, 1.0]).params[0] == pytest.approx(0.5)


@pytest.mark.parametrize("family,samples", [
    ("gamma", [1.0, 0.0, 2.0]),
    ("normal", []),
    ("normal", [1.0, 1.0, 1.0]),
    ("bernoulli", [0.0, 0.5]),
    ("weibull", [1.0, 2.0]),
])
def test_fit_failures(family, samples):
    with pytest.raises(FitError):
        fit_margin(family, samples)


def test_empirical_fit_rejects_weights():
    with pytest.raises(FitError):
        fit_margin("empirical", [1.0, 2.0], weights=[1.0, 1.0])


def test_dict_form():
    m = Margin.from_dict({"family": "gamma", "shape": 2.0, "rate": 0.5})
    assert m.to_dict() == {"family": "gamma", "shape": 2.0, "rate": 0.5}
    assert Margin.from_dict(Margin.empirical([2.0, 1.0]).to_dict()).values.tolist() == [1.0, 2.0]
    with pytest.raises(ParameterError):
        Margin.from_dict({"family": "normal", "mean": 0.0})


def test_sampling_moments():
    gen = np.random.default_rng(5)
    draws = Margin.gamma(4.0, 2.0).sample(20000, gen)
    assert draws.mean() == pytest.approx(2.0, abs=0.03)
    assert set(np.unique(Margin.bernoulli(0.5).sample(100, gen))) <= {0.0, 1.0}
