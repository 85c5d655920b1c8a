"""
Tests for the frugal-bench command line
"""
import json

import pytest

from cli import main
from config import CONFIGS_DIR, RESULTS_COLUMNS, RESULTS_CSV
from conftest import FIXTURES
from database import DatabaseManager


@pytest.fixture
def config_file(tmp_path, synthetic_document):
    path = tmp_path / "tiny.json"
    path.write_text(json.dumps(synthetic_document), encoding="utf-8")
    return path


def test_validate(capsys, tmp_path):
    assert main(["validate", str(CONFIGS_DIR / "setting1.json")]) == 0
    assert "is valid" in capsys.readouterr().out

    broken = tmp_path / "broken.json"
    broken.write_text('{"mode": "synthetic", "models": []}', encoding="utf-8")
    assert main(["validate", str(broken)]) == 1
    out = capsys.readouterr().out
    assert out.startswith("❌ invalid experiment config")
    assert "/models" in out


def test_run_writes_results(capsys, config_file, tmp_path):
    out_dir = tmp_path / "cli-out"
    assert main(["run", str(config_file), "--out", str(out_dir), "--models", "s_linear", "--seed", "3"]) == 0
    header = (out_dir / RESULTS_CSV).read_text(encoding="utf-8").splitlines()
    assert header[0] == ",".join(RESULTS_COLUMNS)
    assert len(header) == 3
    out = capsys.readouterr().out
    assert "2 result rows" in out
    assert "Percentage of p > 0.05" in out


def test_run_rejects_unknown_models(capsys, config_file):
    assert main(["run", str(config_file), "--models", "forest"]) == 1
    assert "no model named 'forest'" in capsys.readouterr().out


def test_run_records_to_the_database(capsys, config_file, tmp_path):
    assert main(["run", str(config_file), "--out", str(tmp_path / "recorded"), "--record"]) == 0
    line = next(text for text in capsys.readouterr().out.splitlines() if "Recorded as run" in text)
    run_id = int(line.rsplit(" ", 1)[-1])
    with DatabaseManager() as db_manager:
        run = db_manager.get_run(run_id)
        assert run.status == "finished"
        assert len(db_manager.get_results(run_id)) == 6


def test_plugin_test_prints_the_transcript(capsys, echo_command):
    assert main(["plugin-test", "--timeout", "30", *echo_command]) == 0
    out = capsys.readouterr().out
    assert (FIXTURES / "echo_transcript.golden").read_text(encoding="utf-8") in out
    assert "completed the protocol round trip" in out


def test_plugin_test_reports_failures(capsys):
    assert main(["plugin-test", "--timeout", "30", "python", str(FIXTURES / "plugins" / "crash_plugin.py")]) == 1
    assert "PluginError" in capsys.readouterr().out
