import json

import pytest

from conftest import FIXTURES
from storyworld import demo
from storyworld.cli import main
from storyworld.worldmodel import WorldGrid


@pytest.fixture(scope="module")
def run_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("runs")
    assert main(["generate", "--out", str(out), "--run-id", "demo"]) == 0
    return out / "demo"


def test_generate_defaults_to_demo_script(run_dir, capsys):
    assert (run_dir / "world.png").exists()
    summary = json.loads((run_dir / "artifact.json").read_text())
    assert summary["completed"] and summary["rounds_completed"] == 3


def test_generate_with_config_and_script(tmp_path, monkeypatch, capsys):
    monkeypatch.chdir(FIXTURES.parent)
    code = main(["generate", "--config", "fixtures/demo.toml", "--provider", "mock",
                 "--script", "fixtures/golden_script.json", "--out", str(tmp_path), "--run-id", "x"])
    assert code == 0
    out = capsys.readouterr().out
    assert str(tmp_path / "x") in out and "completed" in out


def test_flags_override_config(tmp_path, monkeypatch):
    monkeypatch.chdir(FIXTURES.parent)
    main(["generate", "--config", "fixtures/demo.toml", "--rounds", "1", "--seed", "7",
          "--out", str(tmp_path), "--run-id", "x"])
    cfg = json.loads((tmp_path / "x" / "config.json").read_text())
    assert cfg["rounds"] == 1 and cfg["seed"] == 7 and cfg["objective_count"] == 8


def test_generate_missing_tileset(tmp_path, capsys):
    code = main(["generate", "--env-tiles", str(tmp_path / "nope.csv"), "--out", str(tmp_path)])
    assert code == 1
    assert "DatasetError" in capsys.readouterr().err


def test_generate_script_exhaustion_exit_2(tmp_path):
    script = tmp_path / "short.json"
    script.write_text(demo.script_to_json(demo.golden_script(1)[:5]))
    code = main(["generate", "--script", str(script), "--out", str(tmp_path), "--run-id", "s"])
    assert code == 2
    assert (tmp_path / "s" / "story.txt").exists()
    assert json.loads((tmp_path / "s" / "artifact.json").read_text())["completed"] is False


def test_generate_missing_api_key(tmp_path, monkeypatch, capsys):
    monkeypatch.delenv("NOT_SET_ANYWHERE", raising=False)
    code = main(["generate", "--provider", "openai", "--api-key-env", "NOT_SET_ANYWHERE",
                 "--out", str(tmp_path)])
    assert code == 1
    assert "AuthError" in capsys.readouterr().err


def test_evaluate(run_dir, capsys):
    code = main(["evaluate", str(run_dir / "round_0" / "world.txt"), str(run_dir / "extractions.json"),
                 "--no-llm"])
    assert code == 0
    report = json.loads(capsys.readouterr().out)
    assert report["playable"] is True and report["path_length"] == 61
    assert "coherence" not in report


def test_evaluate_bare_legend_and_prior(run_dir, tmp_path, capsys):
    legend = tmp_path / "legend.json"
    legend.write_text(json.dumps(demo.legend().to_dict()))
    code = main(["evaluate", str(run_dir / "round_1" / "world.txt"), str(legend),
                 "--prior", str(run_dir / "round_0" / "world.txt")])
    assert code == 0
    report = json.loads(capsys.readouterr().out)
    assert report["playable"] is False  # a bare legend has no goals
    assert report["is_novel"] is True and report["novelty_distance"] > 4.0


def test_evaluate_malformed_legend(run_dir, tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert main(["evaluate", str(run_dir / "round_0" / "world.txt"), str(bad)]) == 1


def test_render(run_dir, tmp_path, capsys):
    world = tmp_path / "w.txt"
    world.write_text("\n".join(["." * 10] * 7 + ["@" + "." * 9]))
    out1, out2 = tmp_path / "a.png", tmp_path / "b.png"
    assert main(["render", str(world), str(run_dir / "extractions.json"), str(out1)]) == 0
    assert main(["render", str(world), str(run_dir / "extractions.json"), str(out2)]) == 0
    assert "160x128" in capsys.readouterr().out
    assert out1.read_bytes() == out2.read_bytes()


def test_render_unknown_symbol(run_dir, tmp_path, capsys):
    world = tmp_path / "w.txt"
    world.write_text("..\n.Q")
    assert main(["render", str(world), str(run_dir / "extractions.json"), str(tmp_path / "x.png")]) == 1
    assert "MissingAssignment" in capsys.readouterr().err


def test_make_tileset(tmp_path, capsys):
    assert main(["make-tileset", str(tmp_path / "tiles")]) == 0
    assert (tmp_path / "tiles" / "environment.csv").exists()
    spec = tmp_path / "spec.csv"
    spec.write_text("description,color\nlava,#ff4400\nsnow,#eeeeff\n")
    assert main(["make-tileset", str(tmp_path / "custom"), "--spec", str(spec)]) == 0
    assert len((tmp_path / "custom" / "environment.csv").read_text().splitlines()) == 3


def test_agent_run_oracle(run_dir, tmp_path, capsys):
    out = tmp_path / "traces.json"
    assert main(["agent-run", str(run_dir / "round_2" / "world.txt"), str(run_dir / "extractions.json"),
                 "--policy", "oracle", "--episodes", "2", "--out", str(out)]) == 0
    assert json.loads(out.read_text())["episode_rewards"] == [1.0, 1.0]


def test_batch_command(tmp_path, capsys):
    assert main(["batch", "--out", str(tmp_path), "--runs", "2", "--rounds", "1"]) == 0
    report = json.loads((tmp_path / "batch_report.json").read_text())
    assert report["rows"][0]["counts"]["completion"] == 2
    assert (tmp_path / "batch_report.txt").read_text().startswith("point | Novelty")


def test_generate_is_deterministic(tmp_path):
    for name in ("a", "b"):
        main(["generate", "--rounds", "1", "--out", str(tmp_path), "--run-id", name])
    files = sorted(p.relative_to(tmp_path / "a") for p in (tmp_path / "a").rglob("*") if p.is_file())
    for f in files:
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes(), f
    assert WorldGrid.from_text((tmp_path / "a" / "round_0" / "world.txt").read_text()) == demo.repaired_world(0)
