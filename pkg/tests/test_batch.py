import json
import re

import pytest

from conftest import mock_provider
from storyworld import demo
from storyworld.batch import BatchSpec, cmd_batch, format_mean_std, summarize
from storyworld.pipeline import Mode, RunConfig

MEAN_STD = re.compile(r"^-?\d+\.\d{4} ± \d+\.\d{2}$")


def _base(script=None, rounds=1):
    return RunConfig(rounds=rounds, provider=mock_provider(script or demo.golden_script(rounds)))


def test_format_mean_std():
    assert format_mean_std([0.5, 0.5]) == "0.5000 ± 0.00"
    assert format_mean_std([0.0, 1.0]) == "0.5000 ± 0.50"
    assert MEAN_STD.match(format_mean_std([0.3421, 0.9, -0.2]))
    assert format_mean_std([]) == "n/a"


def test_spec_validation(tmp_path):
    with pytest.raises(ValueError):
        BatchSpec(_base(), tmp_path, runs=0)
    with pytest.raises(ValueError):
        BatchSpec(_base(), tmp_path, sweep=[(4, 0, 15)])


def test_summarize_counts_predicates():
    rows = [
        {"is_novel": True, "playable": True, "novel_and_playable": True, "completed": True,
         "coherence": 80, "agent_reward": 1.0},
        {"is_novel": True, "playable": False, "novel_and_playable": False, "completed": False,
         "coherence": 60, "agent_reward": None},
    ]
    s = summarize(rows, 70)
    assert s["counts"] == {"novelty": 2, "playability": 1, "novel_and_playable": 1, "completion": 1}
    assert s["coherence_count"] == 1 and s["coherence_mean"] == 70


def test_sweep_layout(tmp_path):
    spec = BatchSpec(_base(), tmp_path, runs=2, sweep=[(4, 8, 15), (3, 4, 8), (5, 6, 10)])
    report = cmd_batch(spec)
    assert len(report.rows) == 3
    assert len(list(tmp_path.glob("*/run_*"))) == 6
    for row in report.rows:
        cfg = json.loads((tmp_path / row["label"] / "run_000" / "config.json").read_text())
        p, o, i = row["sweep"]
        assert cfg["story_paragraphs"] == [p, p] and cfg["objective_count"] == o
        assert cfg["important_tile_cap"] == i


def test_failed_runs_count_as_incomplete(tmp_path):
    bad = [s for s in demo.golden_script(1) if s[0] != "Goals"]
    report = cmd_batch(BatchSpec(_base(bad), tmp_path, runs=3))
    row = report.rows[0]
    assert row["counts"]["completion"] == 0
    assert row["agent_reward"] == "n/a"


def test_mode_override(tmp_path):
    report = cmd_batch(BatchSpec(_base(rounds=3), tmp_path, runs=1, mode=Mode.ONE_ROUND))
    cfg = json.loads((tmp_path / "default" / "run_000" / "config.json").read_text())
    assert cfg["mode"] == "one-round" and cfg["rounds"] == 1
    assert report.rows[0]["counts"]["completion"] == 1


def test_seeds_differ_per_run(tmp_path):
    cmd_batch(BatchSpec(_base(), tmp_path, runs=2))
    seeds = [json.loads((tmp_path / "default" / f"run_00{k}" / "config.json").read_text())["seed"]
             for k in range(2)]
    assert seeds == [0, 1]
