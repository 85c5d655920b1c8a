"""
Tests for the Gaussian copula layer
"""
import logging

import numpy as np
import pytest
from scipy import stats

from services.copula import (
    conditional_copula_params,
    conditional_copula_sample,
    correlation_from_spearman,
    fit_gauss_copula,
    gauss_copula_sample,
    mvn_oracle_params,
    pearson_to_spearman,
    rank_uniformity_condition_check,
    sample_pearson,
    spearman_to_pearson,
    validate_correlation,
)
from services.errors import FitError, RangeError, ShapeError
from services.margins import Margin


def test_spearman_pearson_mapping():
    assert spearman_to_pearson(0.0) == 0.0
    assert spearman_to_pearson(1.0) == pytest.approx(1.0)
    assert spearman_to_pearson(0.5) == pytest.approx(2 * np.sin(np.pi / 12))
    assert pearson_to_spearman(spearman_to_pearson(-0.3)) == pytest.approx(-0.3)
    with pytest.raises(RangeError):
        spearman_to_pearson(1.5)


def test_valid_matrix_is_kept():
    r = validate_correlation([[1.0, 0.3], [0.3, 1.0]])
    assert not r.repaired
    np.testing.assert_allclose(r.matrix, [[1.0, 0.3], [0.3, 1.0]])


def test_non_psd_matrix_is_repaired(caplog):
    bad = [[1.0, 0.9, -0.9], [0.9, 1.0, 0.9], [-0.9, 0.9, 1.0]]
    with caplog.at_level(logging.WARNING):
        r = validate_correlation(bad)
    assert r.repaired
    assert "Repaired" in caplog.text
    assert np.linalg.eigvalsh(r.matrix).min() >= -1e-10
    np.testing.assert_allclose(np.diag(r.matrix), 1.0)
    np.testing.assert_allclose(r.matrix, r.matrix.T)


@pytest.mark.parametrize("matrix", [
    [[1.0, 0.2, 0.1], [0.2, 1.0, 0.1]],
    [[1.0, 0.2], [0.3, 1.0]],
    [[1.0, np.nan], [np.nan, 1.0]],
])
def test_malformed_matrices_raise(matrix):
    with pytest.raises(ShapeError):
        validate_correlation(matrix)


def test_copula_sample_has_uniform_margins_and_target_dependence():
    r = correlation_from_spearman([[1.0, 0.6, 0.2], [0.6, 1.0, -0.4], [0.2, -0.4, 1.0]])
    u = gauss_copula_sample(r, 20000, np.random.default_rng(1))
    assert u.shape == (20000, 3)
    assert np.all((u > 0.0) & (u < 1.0))
    np.testing.assert_allclose(u.mean(axis=0), 0.5, atol=0.01)
    np.testing.assert_allclose(sample_pearson(u), r.matrix, atol=0.03)
    rho_s = stats.spearmanr(u[:, 0], u[:, 1])[0]
    assert rho_s == pytest.approx(0.6, abs=0.03)


def test_conditional_params_two_dimensional():
    r = validate_correlation([[1.0, 0.6], [0.6, 1.0]])
    params = conditional_copula_params(r, 1)
    np.testing.assert_allclose(params.coefficients, [0.6])
    assert params.residual_var == pytest.approx(0.64)


def test_conditional_params_match_direct_solve():
    m = np.array([[1.0, 0.3, 0.5], [0.3, 1.0, 0.2], [0.5, 0.2, 1.0]])
    params = conditional_copula_params(validate_correlation(m), 2)
    beta = np.linalg.solve(m[:2, :2], m[:2, 2])
    np.testing.assert_allclose(params.coefficients, beta)
    assert params.residual_var == pytest.approx(1.0 - m[2, :2] @ beta)


def test_conditional_params_with_singular_block(caplog):
    m = [[1.0, 1.0, 0.5], [1.0, 1.0, 0.5], [0.5, 0.5, 1.0]]
    with caplog.at_level(logging.WARNING):
        params = conditional_copula_params(validate_correlation(m), 2)
    assert "jitter" in caplog.text
    np.testing.assert_allclose(params.coefficients, [0.25, 0.25], atol=1e-4)
    assert params.residual_var == pytest.approx(0.5, abs=1e-4)


def test_conditional_params_shape_errors():
    with pytest.raises(ShapeError):
        conditional_copula_params(validate_correlation([[1.0]]), 0)
    with pytest.raises(ShapeError):
        conditional_copula_params(validate_correlation(np.eye(2)), 5)


def test_conditional_sample_shapes_and_ranges():
    params = conditional_copula_params(validate_correlation([[1.0, 0.8], [0.8, 1.0]]), 1)
    gen = np.random.default_rng(2)
    assert isinstance(conditional_copula_sample(params, [0.5], gen), float)
    out = conditional_copula_sample(params, np.full((1000, 1), 0.5), gen)
    assert out.shape == (1000,)
    assert out.mean() == pytest.approx(0.5, abs=0.03)
    with pytest.raises(RangeError):
        conditional_copula_sample(params, [0.0], gen)
    with pytest.raises(ShapeError):
        conditional_copula_sample(params, [0.2, 0.3], gen)


def test_conditioning_reproduces_the_joint_copula():
    r = correlation_from_spearman([[1.0, 0.3, 0.5], [0.3, 1.0, -0.2], [0.5, -0.2, 1.0]])
    gen = np.random.default_rng(4)
    u = gauss_copula_sample(r, 20000, gen)
    u_y = conditional_copula_sample(conditional_copula_params(r, 2), u[:, :2], gen)
    np.testing.assert_allclose(sample_pearson(np.column_stack([u[:, :2], u_y])), r.matrix, atol=0.03)


def test_fit_gauss_copula_recovers_matrix():
    r = correlation_from_spearman([[1.0, 0.7], [0.7, 1.0]])
    u = gauss_copula_sample(r, 5000, np.random.default_rng(6))
    fitted = fit_gauss_copula(u)
    assert fitted.allclose(r, atol=0.05)


def test_fit_gauss_copula_rejects_degenerate_input():
    with pytest.raises(FitError):
        fit_gauss_copula(np.array([[0.1, 0.2], [0.3, 0.4]]))
    with pytest.raises(FitError):
        fit_gauss_copula(np.column_stack([np.linspace(0.1, 0.9, 10), np.full(10, 0.5)]))


def test_copula_with_normal_margins_matches_multivariate_normal():
    r = correlation_from_spearman([[1.0, 0.5], [0.5, 1.0]])
    means, sds = [1.0, -2.0], [1.0, 2.0]
    mu, cov = mvn_oracle_params(means, sds, r)
    np.testing.assert_allclose(cov, [[1.0, 2.0 * r.matrix[0, 1]], [2.0 * r.matrix[0, 1], 4.0]])

    gen = np.random.default_rng(8)
    n = 20000
    u = gauss_copula_sample(r, n, gen)
    via_copula = np.column_stack([Margin.normal(m, s).quantile(u[:, d]) for d, (m, s) in enumerate(zip(means, sds))])
    direct = gen.multivariate_normal(mu, cov, size=n)

    for d in range(2):
        assert stats.ks_2samp(via_copula[:, d], direct[:, d]).pvalue > 1e-3
    np.testing.assert_allclose(np.cov(via_copula, rowvar=False), cov, atol=0.15)


def test_mvn_oracle_params_shape_errors():
    r = validate_correlation(np.eye(2))
    with pytest.raises(ShapeError):
        mvn_oracle_params([0.0], [1.0], r)
    with pytest.raises(ShapeError):
        mvn_oracle_params([0.0, 0.0], [1.0, 0.0], r)


def test_rank_uniformity_condition_check():
    beta = [0.5, 0.3]
    assert rank_uniformity_condition_check(beta, [1.0, 1.0], [0.0, 0.0]) == (True, True)
    assert rank_uniformity_condition_check(beta, [-1.0, 1.0], [0.3, -0.5]) == (True, True)
    assert rank_uniformity_condition_check(beta, [1.0, 1.0], [1.0, 0.0]) == (False, True)
    assert rank_uniformity_condition_check(beta, [2.0, 1.0], [0.0, 0.0]) == (True, False)
    with pytest.raises(ShapeError):
        rank_uniformity_condition_check(beta, [1.0], [0.0, 0.0])
