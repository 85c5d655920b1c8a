"""
Tests for the statistical primitives and the bootstrap harnesses
"""
import math

import numpy as np
import pytest
from scipy import stats

from conftest import make_spec, plugin_command
from services.errors import CapabilityError, InputError, ParameterError, TestError
from services.frugal import PropensityModel
from services.hyptest import (
    DEPENDENCE_NOTE,
    TestConfig,
    cvm_limit_cdf,
    cvm_test_one_sample,
    dist_regression_test,
    ks_test_one_sample,
    mean_regression_test,
    pvalue_uniformity_check,
    t_test_one_sample,
)
from services.margins import Margin
from services.models import ModelSpec
from services.seeding import bootstrap_seed


def small_config(**overrides):
    values = dict(n_bootstrap=8, n_train=80, n_test=20, n_y=5)
    values.update(overrides)
    return TestConfig(**values)


# Primitives


def test_t_test_matches_scipy():
    samples = [2.1, 2.5, 1.9, 3.2, 2.8, 2.2]
    ours = t_test_one_sample(samples, 2.0)
    reference = stats.ttest_1samp(samples, 2.0)
    assert ours.statistic == pytest.approx(reference[0])
    assert ours.p_value == pytest.approx(reference[1])
    assert not ours.degenerate
    assert t_test_one_sample([1, 2, 3, 4, 5], 3.0).p_value == pytest.approx(1.0)


def test_t_test_zero_spread():
    same = t_test_one_sample([2.0, 2.0, 2.0], 2.0)
    assert same.degenerate and same.p_value == 1.0 and same.statistic == 0.0
    off = t_test_one_sample([2.0, 2.0, 2.0], 3.0)
    assert off.degenerate and off.p_value == 0.0 and off.statistic == -math.inf


def test_t_test_input_errors():
    with pytest.raises(InputError):
        t_test_one_sample([1.0], 0.0)
    with pytest.raises(InputError):
        t_test_one_sample([1.0, float("nan")], 0.0)


def test_ks_statistic_matches_scipy():
    samples = np.random.default_rng(0).normal(size=300)
    ours = ks_test_one_sample(samples, Margin.normal(0, 1))
    assert ours.statistic == pytest.approx(stats.kstest(samples, "norm")[0])
    assert ours.p_value == pytest.approx(stats.kstwobign.sf(math.sqrt(300) * ours.statistic))
    assert ks_test_one_sample(samples + 1.0, Margin.normal(0, 1)).p_value < 1e-6


def test_ks_accepts_plain_cdf_callables():
    samples = np.linspace(0.05, 0.95, 10)
    assert ks_test_one_sample(samples, lambda x: x).statistic == pytest.approx(0.05)


def test_cvm_statistic_matches_scipy():
    samples = np.random.default_rng(1).normal(size=400)
    ours = cvm_test_one_sample(samples, Margin.normal(0, 1))
    assert ours.statistic == pytest.approx(stats.cramervonmises(samples, "norm").statistic)
    assert 0.0 <= ours.p_value <= 1.0


@pytest.mark.parametrize("w2,level", [(0.34730, 0.90), (0.46136, 0.95), (0.74346, 0.99)])
def test_cvm_limit_distribution_critical_values(w2, level):
    assert cvm_limit_cdf(w2) == pytest.approx(level, abs=2e-3)


def test_cvm_limit_cdf_edges():
    assert cvm_limit_cdf(0.0) == 0.0
    assert cvm_limit_cdf(25.0) == 1.0
    assert cvm_limit_cdf(0.2) < cvm_limit_cdf(0.3) < cvm_limit_cdf(0.4)


def test_pvalue_uniformity_check():
    uniform = np.random.default_rng(2).random(500)
    assert pvalue_uniformity_check(uniform).p_value > 1e-3
    assert pvalue_uniformity_check(np.full(100, 0.01)).p_value < 1e-6
    with pytest.raises(InputError):
        pvalue_uniformity_check([0.5, 1.2])


def test_test_config_validation():
    with pytest.raises(ParameterError):
        TestConfig(n_bootstrap=1)
    with pytest.raises(ParameterError):
        TestConfig(target="median")
    with pytest.raises(ParameterError):
        TestConfig(x0=2)
    with pytest.raises(ParameterError):
        TestConfig(dist_test="ad")


# Harnesses


def test_mean_harness_is_reproducible(normal_spec):
    model = ModelSpec("s", "s_linear")
    cfg = small_config()
    first = mean_regression_test(normal_spec, normal_spec.test_domain, model, cfg, 2024)
    again = mean_regression_test(normal_spec, normal_spec.test_domain, model, cfg, 2024)
    assert first.to_dict() == again.to_dict()
    assert first.test_kind == "mean"
    assert first.reference == 3.0
    assert len(first.bootstrap_estimates) == 8
    assert first.redraws == 0
    assert first.bootstrap_seeds[0] == bootstrap_seed(2024, 1)
    assert 0.0 <= first.p_value <= 1.0


def test_worker_pool_gives_identical_reports(normal_spec):
    model = ModelSpec("g", "gaussian_linear_dist")
    cfg = small_config(target="ate")
    serial = mean_regression_test(normal_spec, normal_spec.test_domain, model, cfg, 7, workers=1)
    pooled = mean_regression_test(normal_spec, normal_spec.test_domain, model, cfg, 7, workers=2)
    assert serial.bootstrap_estimates == pooled.bootstrap_estimates
    assert serial.p_value == pooled.p_value
    assert serial.reference == 2.0

    dist_serial = dist_regression_test(normal_spec, normal_spec.test_domain, model, cfg, 7, workers=1)
    dist_pooled = dist_regression_test(normal_spec, normal_spec.test_domain, model, cfg, 7, workers=3)
    assert dist_serial.to_dict() == dist_pooled.to_dict()


def test_biased_oracle_is_rejected(normal_spec):
    model = ModelSpec("o", "oracle", {"bias": 2.0})
    report = mean_regression_test(normal_spec, normal_spec.test_domain, model, small_config(n_bootstrap=30), 1)
    assert report.p_value < 1e-6
    assert np.mean(report.bootstrap_estimates) == pytest.approx(5.0, abs=0.3)

    dist = dist_regression_test(normal_spec, normal_spec.test_domain, model, small_config(), 1)
    assert dist.p_value < 1e-6


def test_distributional_report_pools_and_caps(normal_spec):
    model = ModelSpec("g", "gaussian_linear_dist")
    report = dist_regression_test(normal_spec, normal_spec.test_domain, model, small_config(), 3)
    summary = report.pooled_summary
    assert summary["count_total"] == summary["count_used"] > 0
    assert summary["count_total"] % 5 == 0
    assert not summary["subsampled"]
    assert DEPENDENCE_NOTE in report.notes
    assert report.reference == 3.0

    capped = dist_regression_test(normal_spec, normal_spec.test_domain, model, small_config(pooled_cap=50), 3)
    assert capped.pooled_summary["count_used"] == 50
    assert capped.pooled_summary["count_total"] == summary["count_total"]
    assert capped.pooled_summary["subsampled"]
    assert any("subsampled" in note for note in capped.notes)


def test_cvm_variant(normal_spec):
    model = ModelSpec("g", "gaussian_linear_dist")
    report = dist_regression_test(normal_spec, normal_spec.test_domain, model, small_config(dist_test="cvm"), 3)
    assert report.pooled_summary["test"] == "cvm"
    assert 0.0 <= report.p_value <= 1.0


def test_capability_mismatch(normal_spec):
    with pytest.raises(CapabilityError):
        dist_regression_test(normal_spec, normal_spec.test_domain, ModelSpec("s", "s_linear"), small_config(), 0)
    with pytest.raises(CapabilityError):
        mean_regression_test(
            normal_spec, normal_spec.test_domain, ModelSpec("o", "oracle", capability="distributional"),
            small_config(), 0,
        )


def test_missing_x0_rows_trigger_redraws():
    spec = make_spec(propensity=PropensityModel.constant(0.2))
    model = ModelSpec("o", "oracle")
    report = mean_regression_test(spec, spec.test_domain, model, small_config(n_bootstrap=15, n_test=4), 5)
    assert report.redraws > 0


def test_redraws_give_up_after_ten_attempts():
    spec = make_spec(propensity=PropensityModel.constant(0.01))
    with pytest.raises(TestError, match="after 10 attempts"):
        mean_regression_test(spec, spec.test_domain, ModelSpec("o", "oracle"), small_config(n_bootstrap=5, n_test=1), 5)


def test_plugin_models_run_through_the_harness(normal_spec):
    model = ModelSpec("p", "plugin", {"command": plugin_command("standard_normal_plugin.py"), "timeout": 30})
    report = dist_regression_test(normal_spec, normal_spec.test_domain, model, small_config(n_bootstrap=3), 4)
    assert report.pooled_summary["mean"] == pytest.approx(0.0, abs=0.5)
    assert report.p_value < 1e-6


@pytest.mark.slow
def test_mean_harness_p_values_are_calibrated_without_shift(normal_spec):
    model = ModelSpec("s", "s_linear")
    cfg = small_config(n_bootstrap=40, n_train=100, n_test=30)
    p_values = [
        mean_regression_test(normal_spec, normal_spec.test_domain, model, cfg, seed).p_value
        for seed in range(40)
    ]
    assert pvalue_uniformity_check(p_values).p_value > 1e-3
