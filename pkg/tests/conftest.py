"""
Shared fixtures. backend/ goes on sys.path and the run store points at a
throwaway sqlite file before anything imports config.
"""
import os
import sys
import tempfile
from pathlib import Path

import numpy as np
import pytest

ROOT = Path(__file__).resolve().parent.parent
BACKEND = ROOT / "backend"
FIXTURES = Path(__file__).resolve().parent / "fixtures"
PLUGINS = FIXTURES / "plugins"

sys.path.insert(0, str(BACKEND))

_scratch = Path(tempfile.mkdtemp(prefix="frugal-bench-tests-"))
os.environ["FRUGAL_BENCH_DATABASE_URL"] = f"sqlite:///{_scratch / 'runs.db'}"
os.environ["FRUGAL_BENCH_RESULTS_DIR"] = str(_scratch / "results")
os.environ.setdefault("FRUGAL_BENCH_WORKERS", "1")

from services.copula import correlation_from_spearman  # noqa: E402
from services.frugal import DomainSpec, FrugalSpec, PropensityModel  # noqa: E402
from services.margins import Margin  # noqa: E402


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def make_spec(
    covariate=None,
    outcome_spearman=0.5,
    causal=(Margin.normal(1, 1), Margin.normal(3, 1)),
    propensity=None,
):
    """One-covariate spec: z1 ~ N(1, 1) unless given, Y(0) ~ N(1, 1), Y(1) ~ N(3, 1)"""
    covariate = covariate or Margin.normal(1, 1)
    joint = correlation_from_spearman([[1.0, outcome_spearman], [outcome_spearman, 1.0]])
    domain = DomainSpec((covariate,), joint.submatrix([0]), propensity or PropensityModel.constant(0.5))
    return FrugalSpec.build(domain, {0: causal[0], 1: causal[1]}, joint)


@pytest.fixture
def normal_spec():
    return make_spec()


@pytest.fixture
def synthetic_document(tmp_path):
    """Small synthetic experiment document"""
    return {
        "name": "tiny",
        "mode": "synthetic",
        "spec": {
            "covariates": [
                {"name": "z1", "test": {"family": "normal", "mean": 1, "sd": 1},
                 "train": {"family": "normal", "mean": 1.5, "sd": 1}},
            ],
            "outcome_spearman": [0.5],
            "causal_margins": {
                "0": {"family": "normal", "mean": 1, "sd": 1},
                "1": {"family": "normal", "mean": 3, "sd": 1},
            },
            "propensity": {"kind": "constant", "p": 0.5},
        },
        "models": [
            {"name": "s_linear", "kind": "s_linear"},
            {"name": "gaussian_linear_dist", "kind": "gaussian_linear_dist"},
        ],
        "tests": {"n_bootstrap": 5, "n_train": 60, "n_test": 20, "n_y": 5, "target": "mu", "x0": 1},
        "iterations": 2,
        "master_seed": 99,
        "output_dir": str(tmp_path / "out"),
    }


@pytest.fixture
def echo_command():
    return ["python", str(BACKEND / "plugins" / "echo_plugin.py")]


def plugin_command(name):
    return ["python", str(PLUGINS / name)]
