"""
Tests for the run store
"""
import math

import pandas as pd
import pytest

from config import RESULTS_COLUMNS
from database import DatabaseManager, init_database
from services.bench import ResultsTable


@pytest.fixture(scope="module", autouse=True)
def tables():
    init_database()


def sample_table():
    rows = [
        {"iteration": 1, "model": "m", "test_kind": "mean", "target": "mu", "p_value": 0.4, "statistic": 0.8,
         "degenerate": False, "seed": 2**62, "out_of_support": 0, "error": ""},
        {"iteration": 2, "model": "m", "test_kind": "mean", "target": "mu", "p_value": 0.01, "statistic": -math.inf,
         "degenerate": True, "seed": 5, "out_of_support": 3, "error": ""},
        {"iteration": 3, "model": "m", "test_kind": "mean", "target": "mu", "p_value": float("nan"),
         "statistic": float("nan"), "degenerate": False, "seed": 6, "out_of_support": 0,
         "error": "FitError: arm 1 has 2 rows"},
    ]
    return ResultsTable.from_rows(rows)


def test_run_round_trip():
    with DatabaseManager() as db_manager:
        run = db_manager.create_run("demo", "synthetic", "a" * 64, {"master_seed": 1})
        assert run.status == "pending"
        assert db_manager.add_results(run.id, sample_table()) == 3
        db_manager.mark_running(run.id)
        db_manager.mark_finished(run.id, wall_clock_seconds=1.5, output_dir="/tmp/demo")

        stored = db_manager.get_run(run.id).to_dict()
        assert stored["status"] == "finished"
        assert stored["config"] == {"master_seed": 1}
        assert stored["output_dir"] == "/tmp/demo"
        assert stored["finished_at"] is not None

        results = [r.to_dict() for r in db_manager.get_results(run.id)]
        assert [r["iteration"] for r in results] == [1, 2, 3]
        assert results[0]["seed"] == 2**62
        assert results[1]["statistic"] == "-inf"
        assert results[2]["p_value"] is None
        assert results[2]["error"].startswith("FitError")

        summary = db_manager.pass_rate_summary(run.id)
        assert summary == [{
            "model": "m", "test_kind": "mean", "trials": 2, "errors": 1, "passed": 1, "percent": 50.0,
        }]


def test_summary_agrees_with_results_table():
    table = sample_table()
    with DatabaseManager() as db_manager:
        run = db_manager.create_run("agree", "synthetic", "b" * 64, {})
        db_manager.add_results(run.id, table)
        assert db_manager.pass_rate_summary(run.id) == table.pass_rates()


def test_failed_runs_and_filters():
    with DatabaseManager() as db_manager:
        run = db_manager.create_run("broken", "semi_synthetic", "c" * 64, {})
        db_manager.mark_failed(run.id, "IngestionError: missing value")
        assert db_manager.get_run(run.id).error.startswith("IngestionError")
        assert run.id in [r.id for r in db_manager.list_runs(status="failed")]
        assert run.id not in [r.id for r in db_manager.list_runs(status="finished")]
        assert db_manager.mark_running(10**9) is None


def test_results_frame_columns():
    assert list(sample_table().frame.columns) == RESULTS_COLUMNS
    assert isinstance(sample_table().frame, pd.DataFrame)
