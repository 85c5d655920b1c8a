"""
End-to-end properties of the benchmark on the bundled settings: known causal
margins, invariant conditional outcomes, calibration and power of the
harnesses, exact statistics and reproducible runs
"""
import math
from dataclasses import replace

import numpy as np
import pytest
from scipy import stats

from config import CONFIGS_DIR, RESULTS_CSV
from conftest import plugin_command
from services.bench import build_synthetic, harness_config, load_config, parse_config, run_experiment, select_models
from services.frugal import (
    FitOptions,
    FrugalSpec,
    fit_frugal_from_data,
    sample_conditional_outcomes,
    sample_test_domain,
    sample_training_domain,
)
from services.hyptest import (
    TestConfig,
    cvm_test_one_sample,
    dist_regression_test,
    ks_test_one_sample,
    mean_regression_test,
    pvalue_uniformity_check,
    t_test_one_sample,
)
from services.margins import Margin
from services.models import ModelSpec
from services.seeding import iteration_seed

RUNS = 50


def bundled(name):
    cfg = load_config(CONFIGS_DIR / f"{name}.json")
    spec, train = build_synthetic(cfg.spec, cfg.shifts)
    return cfg, spec, train


# Data-generating process


def test_setting_one_arms_follow_the_known_causal_margins():
    _, spec, _ = bundled("setting1")
    data = sample_test_domain(spec, 100_000, np.random.default_rng(101))
    for arm, margin in ((0, Margin.normal(1, 1)), (1, Margin.normal(3, 1))):
        assert ks_test_one_sample(data.y[data.x == arm], margin).p_value > 0.01


@pytest.mark.parametrize("name", ["setting1", "setting2"])
@pytest.mark.parametrize("arm", [0, 1])
def test_conditional_outcomes_survive_the_shift(name, arm):
    _, spec, _ = bundled(name)
    gen = np.random.default_rng(202 + arm)
    z_star = [2.0, 3.0]
    from_test = sample_conditional_outcomes(spec, z_star, arm, 10_000, gen, domain="test")
    from_train = sample_conditional_outcomes(spec, z_star, arm, 10_000, gen, domain="train")
    assert stats.ks_2samp(from_test, from_train).pvalue > 0.01


def test_setting_two_training_outcomes_leave_the_causal_margin():
    _, spec, train = bundled("setting2")
    data = sample_training_domain(spec, train, 20_000, np.random.default_rng(303))
    assert ks_test_one_sample(data.y[data.x == 1], spec.causal_margins[1]).p_value < 1e-6


def test_fit_recovers_copula_and_gamma_parameters():
    _, spec, _ = bundled("setting1")
    truth = {0: Margin.gamma(2.0, 0.5), 1: Margin.gamma(4.0, 1.0)}
    spec = FrugalSpec.build(spec.test_domain, truth, spec.joint_copulas[0])
    data = sample_test_domain(spec, 10_000, np.random.default_rng(404))

    fitted = fit_frugal_from_data(data, FitOptions(causal_family="gamma", propensity="constant"))
    np.testing.assert_allclose(fitted.joint_copulas[0].matrix, spec.joint_copulas[0].matrix, atol=0.05)
    for arm, margin in truth.items():
        assert fitted.causal_margins[arm].family == "gamma"
        np.testing.assert_allclose(fitted.causal_margins[arm].params, margin.params, rtol=0.1)


# Statistical primitives


def test_t_test_small_sample_value():
    result = t_test_one_sample([2.1, 2.2, 2.3], 2.0)
    t = 0.2 / (0.1 / math.sqrt(3.0))
    # two-sided tail of Student t with 2 degrees of freedom
    assert result.statistic == pytest.approx(t)
    assert result.p_value == pytest.approx(1.0 - t / math.sqrt(t * t + 2.0), abs=1e-9)
    assert result.p_value == pytest.approx(0.0742, abs=5e-4)


def test_ks_and_cvm_small_sample_values():
    samples = [0.1, 0.5, 0.9]
    assert ks_test_one_sample(samples, lambda x: x).statistic == pytest.approx(7.0 / 30.0, abs=1e-12)
    expected = 1.0 / 36.0 + (0.1 - 1.0 / 6.0) ** 2 + (0.9 - 5.0 / 6.0) ** 2
    w2 = cvm_test_one_sample(samples, lambda x: x).statistic
    assert w2 == pytest.approx(expected, abs=1e-12)
    assert w2 == pytest.approx(0.03667, abs=1e-5)


# Harness calibration and power


@pytest.mark.slow
def test_linear_learners_are_calibrated_without_shift():
    cfg = select_models(load_config(CONFIGS_DIR / "no_shift_normal.json"), ["s_linear", "t_linear"])
    table = run_experiment(cfg, workers=4, write=False)
    assert (table.frame["error"] == "").all()
    for model in ("s_linear", "t_linear"):
        p_values = table.frame.loc[table.frame["model"] == model, "p_value"].to_numpy()
        assert len(p_values) == RUNS
        assert pvalue_uniformity_check(p_values).p_value > 0.01
        assert 0.85 <= np.mean(p_values > 0.05) <= 1.0


@pytest.mark.slow
def test_biased_oracle_is_rejected_in_setting_one():
    cfg, spec, train = bundled("setting1")
    tests = replace(harness_config(cfg), target="mu")
    model = ModelSpec("oracle_biased", "oracle", {"bias": 0.5})
    p_values = [
        mean_regression_test(spec, train, model, tests, iteration_seed(cfg.master_seed, t), workers=4).p_value
        for t in range(1, RUNS + 1)
    ]
    assert np.mean(np.array(p_values) < 0.05) >= 0.95


@pytest.mark.slow
def test_rejection_rate_grows_with_the_bias(normal_spec):
    cfg = TestConfig(n_bootstrap=30, n_train=80, n_test=20)
    rates = []
    for bias in (0.0, 0.1, 0.2, 0.4):
        model = ModelSpec("oracle", "oracle", {"bias": bias})
        p_values = [
            mean_regression_test(normal_spec, normal_spec.test_domain, model, cfg, seed).p_value for seed in range(20)
        ]
        rates.append(np.mean(np.array(p_values) < 0.05))
    assert rates == sorted(rates)
    assert rates[0] <= 0.25
    assert rates[-1] == 1.0


@pytest.mark.slow
def test_distributional_learner_is_not_rejected_without_shift():
    cfg, spec, train = bundled("no_shift_normal")
    tests = replace(harness_config(cfg), pooled_cap=5_000)
    model = ModelSpec("gaussian_linear_dist", "gaussian_linear_dist")
    p_values = [
        dist_regression_test(spec, train, model, tests, iteration_seed(cfg.master_seed, t), workers=4).p_value
        for t in range(1, RUNS + 1)
    ]
    assert np.median(p_values) > 0.1


@pytest.mark.slow
@pytest.mark.parametrize("seed", range(10))
def test_input_blind_plugin_is_always_rejected(normal_spec, seed):
    model = ModelSpec("p", "plugin", {"command": plugin_command("standard_normal_plugin.py"), "timeout": 30})
    cfg = TestConfig(n_bootstrap=3, n_train=60, n_test=20, n_y=5)
    assert dist_regression_test(normal_spec, normal_spec.test_domain, model, cfg, seed).p_value < 1e-6


@pytest.mark.slow
def test_larger_shift_gives_smaller_distributional_p_values():
    medians = {}
    statistics = {}
    model = ModelSpec("gaussian_linear_dist", "gaussian_linear_dist")
    for name in ("setting1", "setting2"):
        cfg, spec, train = bundled(name)
        reports = [
            dist_regression_test(spec, train, model, harness_config(cfg), iteration_seed(cfg.master_seed, t), 4)
            for t in range(1, RUNS + 1)
        ]
        medians[name] = np.median([r.p_value for r in reports])
        statistics[name] = np.median([r.statistic for r in reports])
    assert medians["setting1"] >= medians["setting2"]
    assert statistics["setting1"] <= statistics["setting2"]


# Reproducibility


@pytest.mark.parametrize("workers", [4, 8])
def test_results_file_is_byte_identical_across_worker_counts(synthetic_document, tmp_path, workers):
    cfg = parse_config(synthetic_document)
    run_experiment(cfg, workers=1, output_dir=tmp_path / "serial")
    run_experiment(cfg, workers=workers, output_dir=tmp_path / "pooled")
    assert (tmp_path / "serial" / RESULTS_CSV).read_bytes() == (tmp_path / "pooled" / RESULTS_CSV).read_bytes()
