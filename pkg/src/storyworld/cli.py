"""Command-line entry point: generate, batch, evaluate, render, make-tileset, agent-run."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from datetime import datetime, timezone
from pathlib import Path
from typing import Optional

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from . import demo
from .agent import LLMPolicy, OraclePolicy, ScriptedPolicy, run_episodes
from .batch import BatchSpec, cmd_batch
from .evaluation import DEFAULT_ASTAR_BUDGET, DEFAULT_NOVELTY_THRESHOLD, coherence_judge, evaluate_world
from .llm import AuthError, LLMError, MockScript, ParseFailure, ProviderConfig, ProviderKind
from .pipeline import Mode, RunConfig, run
from .tiles import (
    BagOfWordsEmbedder,
    DatasetError,
    MissingAssignment,
    TileCategory,
    TileDataset,
    TileSizeMismatch,
    assign_tiles,
    default_tileset_paths,
    generate_placeholder_tileset,
    make_default_tileset,
    render_world,
    save_png,
)
from .worldmodel import CharacterInfo, Goal, Role, TileLegend, WorldGrid, dumps, locate_symbol

log = logging.getLogger("storyworld")

EXIT_OK, EXIT_ERROR, EXIT_INCOMPLETE = 0, 1, 2

_PROVIDERS = {"mock": ProviderKind.MOCK, "openai": ProviderKind.OPENAI, "anthropic": ProviderKind.ANTHROPIC}


class CLIError(Exception):
    pass


# ---------------------------------------------------------------- config

def load_config_file(path: Optional[str]) -> dict:
    if not path:
        return {}
    try:
        with open(path, "rb") as f:
            return tomllib.load(f)
    except (OSError, tomllib.TOMLDecodeError) as e:
        raise CLIError(f"cannot read config {path}: {e}") from e


def _paragraphs(value) -> tuple[int, int]:
    if isinstance(value, (list, tuple)):
        lo, hi = value
    elif isinstance(value, int):
        lo = hi = value
    else:
        parts = str(value).split("-")
        lo, hi = int(parts[0]), int(parts[-1])
    return int(lo), int(hi)


def build_provider(args, file_cfg: dict) -> ProviderConfig:
    pf = dict(file_cfg.get("provider", {}))
    kind = args.provider or pf.get("kind", "mock")
    if kind not in _PROVIDERS:
        raise CLIError(f"unknown provider {kind!r}")
    cfg = ProviderConfig(
        provider_kind=_PROVIDERS[kind],
        model_name=args.model or pf.get("model_name", "mock" if kind == "mock" else ""),
        endpoint_url=args.endpoint or pf.get("endpoint_url", ""),
        api_key_env_var=args.api_key_env or pf.get("api_key_env_var", ""),
        request_timeout=float(pf.get("request_timeout", 120.0)),
        max_retries_per_call=int(pf.get("max_retries_per_call", 3)),
    )
    if cfg.is_mock:
        script = args.script or pf.get("script")
        if script:
            try:
                cfg.mock = MockScript.load(script)
            except (OSError, ValueError, KeyError) as e:
                raise CLIError(f"cannot load mock script {script}: {e}") from e
        else:
            mode = args.mode or file_cfg.get("mode", "full")
            rounds = args.rounds or file_cfg.get("rounds", 3)
            episodes = args.episodes if args.episodes is not None else file_cfg.get("agent_episodes", 2)
            cfg.mock = MockScript(demo.mode_script(mode, rounds, episodes))
    return cfg


def build_run_config(args, file_cfg: dict) -> RunConfig:
    """Flags override the config file, which overrides built-in defaults."""
    def pick(flag, key, default):
        return flag if flag is not None else file_cfg.get(key, default)

    env_default, char_default = default_tileset_paths()
    tiles = file_cfg.get("tileset_paths", [env_default, char_default])
    return RunConfig(
        story_paragraphs=_paragraphs(pick(args.paragraphs, "story_paragraphs", "4-5")),
        objective_count=int(pick(args.objectives, "objective_count", 8)),
        important_tile_cap=int(pick(args.important_cap, "important_tile_cap", 15)),
        rounds=int(pick(args.rounds, "rounds", 3)),
        completion_try_budget=int(pick(getattr(args, "try_budget", None), "completion_try_budget", 10)),
        novelty_threshold=float(pick(args.novelty_threshold, "novelty_threshold", DEFAULT_NOVELTY_THRESHOLD)),
        astar_iteration_budget=int(pick(args.astar_budget, "astar_iteration_budget", DEFAULT_ASTAR_BUDGET)),
        agent_episodes=int(pick(args.episodes, "agent_episodes", 2)),
        mode=Mode(pick(args.mode, "mode", "full")),
        seed=int(pick(args.seed, "seed", 0)),
        provider=build_provider(args, file_cfg),
        tileset_paths=(args.env_tiles or tiles[0], args.char_tiles or tiles[1]),
        goal_order="nearest" if args.any_order else file_cfg.get("goal_order", "story"),
        best_of=bool(args.best_of or file_cfg.get("best_of", False)),
    )


def _add_run_flags(p: argparse.ArgumentParser):
    p.add_argument("--config", help="TOML file with RunConfig fields and a [provider] table")
    p.add_argument("--provider", choices=sorted(_PROVIDERS))
    p.add_argument("--model")
    p.add_argument("--endpoint")
    p.add_argument("--api-key-env")
    p.add_argument("--script", help="mock provider script (JSON list of {step, text})")
    p.add_argument("--seed", type=int)
    p.add_argument("--mode", choices=[m.value for m in Mode])
    p.add_argument("--rounds", type=int)
    p.add_argument("--objectives", type=int)
    p.add_argument("--paragraphs", help="paragraph count or range, e.g. 4-5")
    p.add_argument("--important-cap", type=int)
    p.add_argument("--novelty-threshold", type=float)
    p.add_argument("--astar-budget", type=int)
    p.add_argument("--episodes", type=int)
    p.add_argument("--try-budget", type=int)
    p.add_argument("--env-tiles", help="environment tile CSV")
    p.add_argument("--char-tiles", help="character tile CSV")
    p.add_argument("--any-order", action="store_true", help="visit objectives nearest-first")
    p.add_argument("--best-of", action="store_true", help="keep the last playable round's world")


# ---------------------------------------------------------------- file inputs

def read_world(path: str) -> WorldGrid:
    try:
        return WorldGrid.from_text(Path(path).read_text(encoding="utf-8"))
    except (OSError, ValueError) as e:
        raise CLIError(f"cannot read world {path}: {e}") from e


def read_extractions(path: str) -> tuple[TileLegend, list[CharacterInfo], list[Goal], Optional[str]]:
    """Legend JSON, or a run's extractions.json (legend plus characters and goals)."""
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
        if "legend" in data:
            legend = TileLegend.from_dict(data["legend"])
            chars = [CharacterInfo.from_dict(c) for c in data.get("characters", [])]
            goals = [Goal.from_dict(g) for g in data.get("goals", [])]
        else:
            legend = TileLegend.from_dict(data)
            chars, goals = [], []
    except (OSError, ValueError, KeyError, TypeError) as e:
        raise CLIError(f"cannot read legend {path}: {e}") from e
    story = None
    sibling = Path(path).with_name("story.txt")
    if "legend" in data and sibling.exists():
        story = sibling.read_text(encoding="utf-8")
    return legend, chars, goals, story


def _place(world: WorldGrid, goals: list[Goal]) -> list[Goal]:
    # stored positions may belong to another round's world; search this one
    return [replace(g, position=locate_symbol(world, g.target_symbol)) for g in goals]


# ---------------------------------------------------------------- commands

def cmd_generate(args) -> int:
    file_cfg = load_config_file(args.config)
    cfg = build_run_config(args, file_cfg)
    run_id = args.run_id or "{}-{}-seed{}".format(
        datetime.now(timezone.utc).strftime("%Y%m%dT%H%M%S"), cfg.mode.value, cfg.seed)
    out = Path(args.out) / run_id
    art = run(cfg, out)
    rec = art.final_record
    ev = rec.evaluation if rec else None
    status = "completed" if art.completed else f"incomplete ({art.failure})"
    print(str(out))
    summary = f"{status}; tries {art.tries_used}/{cfg.completion_try_budget}; rounds {len(art.round_records)}"
    if ev is not None:
        summary += (f"; playable={ev.playable} novel={ev.is_novel} path_length={ev.path_length} "
                    f"coherence={ev.coherence} agent_reward={ev.agent_reward}")
    print(summary)
    return EXIT_OK if art.completed else EXIT_INCOMPLETE


def _sweep(values) -> Optional[list[tuple[int, int, int]]]:
    if not values:
        return None
    out = []
    for v in values:
        parts = v if isinstance(v, (list, tuple)) else str(v).split(",")
        if len(parts) != 3:
            raise CLIError(f"sweep point {v!r} must be paragraphs,objectives,important_cap")
        out.append(tuple(int(x) for x in parts))
    return out


def cmd_batch_cli(args) -> int:
    file_cfg = load_config_file(args.config)
    cfg = build_run_config(args, file_cfg)
    bf = file_cfg.get("batch", {})
    spec = BatchSpec(
        base=cfg,
        output_root=Path(args.out),
        runs=args.runs if args.runs is not None else int(bf.get("runs", 10)),
        mode=cfg.mode,
        sweep=_sweep(args.sweep or bf.get("sweep")),
        workers=args.workers or bf.get("workers"),
        coherence_threshold=args.coherence_threshold,
    )
    report = cmd_batch(spec)
    sys.stdout.write(report.table())
    print(str(spec.output_root / "batch_report.json"))
    return EXIT_OK


def cmd_evaluate(args) -> int:
    world = read_world(args.world)
    legend, chars, goals, story = read_extractions(args.legend)
    goals = _place(world, goals)
    prior = [read_world(p) for p in args.prior or []]
    report = evaluate_world(world, legend, chars, goals, prior, budget=args.astar_budget,
                            novelty_threshold=args.novelty_threshold,
                            order="nearest" if args.any_order else "story")
    use_llm = not args.no_llm and args.provider not in (None, "mock")
    if use_llm:
        if args.story:
            story = Path(args.story).read_text(encoding="utf-8")
        if not story:
            raise CLIError("--story is required for the coherence judge")
        provider = build_provider(args, {})
        report.coherence = coherence_judge(story, legend, world, provider)
    print(dumps(report.to_dict(include_coherence=use_llm)))
    return EXIT_OK


def cmd_render(args) -> int:
    world = read_world(args.world)
    legend, chars, _, _ = read_extractions(args.legend)
    env_default, char_default = default_tileset_paths()
    embedder = BagOfWordsEmbedder()
    env = TileDataset.load_csv(args.env_tiles or env_default, embedder)
    char = TileDataset.load_csv(args.char_tiles or char_default, embedder)
    assignment = assign_tiles(legend, chars, env, char, embedder)
    image = render_world(world, assignment)
    save_png(image, args.out)
    print(f"{args.out} {image.width}x{image.height}")
    return EXIT_OK


def _read_spec_csv(path: str) -> list[tuple[str, tuple[int, int, int]]]:
    import csv
    out = []
    with open(path, newline="", encoding="utf-8") as f:
        for row in csv.DictReader(f):
            color = row["color"].lstrip("#")
            out.append((row["description"], tuple(int(color[i:i + 2], 16) for i in (0, 2, 4))))
    return out


def cmd_make_tileset(args) -> int:
    if args.spec:
        spec = _read_spec_csv(args.spec)
        ds = generate_placeholder_tileset(spec, args.out, TileCategory(args.category))
        print(f"{len(ds)} {ds.category.value.lower()} tiles written to {args.out}")
    else:
        env, char = make_default_tileset(args.out)
        print(f"{len(env)} environment and {len(char)} character tiles written to {args.out}")
    return EXIT_OK


def cmd_agent_run(args) -> int:
    world = read_world(args.world)
    legend, chars, goals, _ = read_extractions(args.legend)
    goals = _place(world, goals)
    protagonist = next((c.symbol for c in chars if c.role is Role.PROTAGONIST), None)
    if not protagonist or not goals:
        raise CLIError("agent-run needs an extractions file with characters and goals")
    if any(g.position is None for g in goals):
        raise CLIError("some goal symbols are not in the world")
    if args.policy == "oracle":
        policy = OraclePolicy()
    elif args.policy == "script":
        if not args.script:
            raise CLIError("--policy script needs --script")
        policy = ScriptedPolicy([t for _, t in MockScript.load(args.script)._initial])
    else:
        provider = build_provider(args, {})
        policy = LLMPolicy(provider)
    traces = run_episodes(world, goals, legend, policy, args.episodes, protagonist=protagonist)
    out = {"episode_rewards": [t.episode_reward for t in traces], "traces": [t.to_dict() for t in traces]}
    if args.out:
        Path(args.out).write_text(dumps(out), encoding="utf-8")
    print(dumps(out["episode_rewards"]))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="storyworld", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="run the pipeline once")
    _add_run_flags(p)
    p.add_argument("--out", default="runs", help="artifact root directory")
    p.add_argument("--run-id")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("batch", help="repeated runs, ablations and parameter sweeps")
    _add_run_flags(p)
    p.add_argument("--out", default="runs/batch")
    p.add_argument("--runs", type=int)
    p.add_argument("--sweep", action="append", help="paragraphs,objectives,important_cap (repeatable)")
    p.add_argument("--workers", type=int)
    p.add_argument("--coherence-threshold", type=int, default=70)
    p.set_defaults(func=cmd_batch_cli)

    p = sub.add_parser("evaluate", help="metrics for a world file")
    p.add_argument("world")
    p.add_argument("legend", help="legend JSON or a run's extractions.json")
    p.add_argument("--prior", nargs="*", help="earlier worlds for novelty")
    p.add_argument("--story")
    p.add_argument("--no-llm", action="store_true")
    p.add_argument("--provider", choices=sorted(_PROVIDERS))
    p.add_argument("--model")
    p.add_argument("--endpoint")
    p.add_argument("--api-key-env")
    p.add_argument("--script")
    p.add_argument("--mode", default=None)
    p.add_argument("--rounds", type=int, default=None)
    p.add_argument("--episodes", type=int, default=None)
    p.add_argument("--astar-budget", type=int, default=DEFAULT_ASTAR_BUDGET)
    p.add_argument("--novelty-threshold", type=float, default=DEFAULT_NOVELTY_THRESHOLD)
    p.add_argument("--any-order", action="store_true")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("render", help="assign tiles and draw a world PNG")
    p.add_argument("world")
    p.add_argument("legend")
    p.add_argument("out")
    p.add_argument("--env-tiles")
    p.add_argument("--char-tiles")
    p.set_defaults(func=cmd_render)

    p = sub.add_parser("make-tileset", help="write placeholder tiles and CSV manifests")
    p.add_argument("out")
    p.add_argument("--spec", help="CSV with description,color (#rrggbb)")
    p.add_argument("--category", default="Environment", choices=[c.value for c in TileCategory])
    p.set_defaults(func=cmd_make_tileset)

    p = sub.add_parser("agent-run", help="agent reward episodes on a world")
    p.add_argument("world")
    p.add_argument("legend", help="a run's extractions.json")
    p.add_argument("--policy", choices=["llm", "oracle", "script"], default="llm")
    p.add_argument("--episodes", type=int, default=2)
    p.add_argument("--provider", choices=sorted(_PROVIDERS))
    p.add_argument("--model")
    p.add_argument("--endpoint")
    p.add_argument("--api-key-env")
    p.add_argument("--script")
    p.add_argument("--mode", default=None)
    p.add_argument("--rounds", type=int, default=None)
    p.add_argument("--out")
    p.set_defaults(func=cmd_agent_run)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.ERROR,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (CLIError, DatasetError, AuthError, MissingAssignment, TileSizeMismatch,
            LLMError, ParseFailure, ValueError) as e:
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
