"""End-to-end run: story, extraction steps, generation rounds with feedback, repair, evaluation, tiles."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field, replace
from datetime import datetime, timedelta, timezone
from enum import Enum
from pathlib import Path
from typing import Callable, Optional, Sequence

from .agent import EpisodeTrace, LLMPolicy, run_episodes
from .evaluation import (
    DEFAULT_ASTAR_BUDGET,
    DEFAULT_NOVELTY_THRESHOLD,
    EvaluationReport,
    coherence_judge,
    evaluate_world,
)
from .llm import (
    GENERATION_STEPS,
    LLMError,
    ParseFailure,
    ProviderConfig,
    Step,
    Transcript,
    run_step,
)
from .tiles import (
    BagOfWordsEmbedder,
    Embedder,
    TileAsset,
    TileDataset,
    assign_tiles,
    default_tileset_paths,
    render_world,
    save_png,
)
from .worldmodel import (
    CharacterInfo,
    Goal,
    Role,
    StoryPackage,
    TileLegend,
    WorldGrid,
    algorithmic_fixes,
    count_paragraphs,
    dumps,
    locate_symbol,
)

log = logging.getLogger(__name__)

RETRYABLE = (LLMError, ParseFailure)


class Mode(str, Enum):
    FULL = "full"
    DIRECT_GENERATION = "direct"
    NO_GOALS = "no-goals"
    NO_IMPORTANT_TILES = "no-important"
    ONE_STEP = "one-step"
    ONE_ROUND = "one-round"


class CompletionBudgetExhausted(RuntimeError):
    pass


class GoalUnplaceable(ValueError):
    pass


@dataclass
class RunConfig:
    story_paragraphs: tuple[int, int] = (4, 5)
    objective_count: int = 8
    important_tile_cap: int = 15
    rounds: int = 3
    completion_try_budget: int = 10
    novelty_threshold: float = DEFAULT_NOVELTY_THRESHOLD
    astar_iteration_budget: int = DEFAULT_ASTAR_BUDGET
    agent_episodes: int = 2
    mode: Mode = Mode.FULL
    seed: int = 0
    provider: ProviderConfig = field(default_factory=ProviderConfig)
    tileset_paths: tuple[str, str] = field(default_factory=default_tileset_paths)
    goal_order: str = "story"
    best_of: bool = False
    temperature: float = 1.0

    def __post_init__(self):
        self.mode = Mode(self.mode)
        self.story_paragraphs = tuple(self.story_paragraphs)
        self.tileset_paths = tuple(self.tileset_paths)
        if self.mode is Mode.ONE_ROUND:
            self.rounds = 1
        if self.rounds < 1:
            raise ValueError("rounds must be >= 1")
        if self.completion_try_budget < 1:
            raise ValueError("completion_try_budget must be >= 1")
        if self.goal_order not in ("story", "nearest"):
            raise ValueError("goal_order must be 'story' or 'nearest'")

    def to_dict(self) -> dict:
        return {
            "story_paragraphs": list(self.story_paragraphs),
            "objective_count": self.objective_count,
            "important_tile_cap": self.important_tile_cap,
            "rounds": self.rounds,
            "completion_try_budget": self.completion_try_budget,
            "novelty_threshold": self.novelty_threshold,
            "astar_iteration_budget": self.astar_iteration_budget,
            "agent_episodes": self.agent_episodes,
            "mode": self.mode.value,
            "seed": self.seed,
            "provider": self.provider.to_dict(),
            "tileset_paths": list(self.tileset_paths),
            "goal_order": self.goal_order,
            "best_of": self.best_of,
            "temperature": self.temperature,
        }


@dataclass(frozen=True)
class StepPlan:
    extraction_steps: tuple[Step, ...]
    two_step: bool
    rounds: int
    direct: bool

    def generation_steps(self) -> list[Step]:
        """Generation prompt kinds in issue order."""
        steps = list(self.extraction_steps)
        if self.two_step:
            steps.append(Step.WORLD_ENVIRONMENT)
        steps.append(Step.WORLD_FULL)
        return steps


def apply_mode(config: RunConfig) -> StepPlan:
    mode = config.mode
    if mode is Mode.DIRECT_GENERATION:
        return StepPlan((Step.STORY,), two_step=False, rounds=config.rounds, direct=True)
    steps = [Step.STORY, Step.CHARACTERS, Step.TILESET]
    if mode is not Mode.NO_GOALS:
        steps.append(Step.GOALS)
    if mode is not Mode.NO_IMPORTANT_TILES:
        steps += [Step.IMPORTANT_TILES, Step.WALKABLE_TILES, Step.OBJECT_TILES]
    rounds = 1 if mode is Mode.ONE_ROUND else config.rounds
    return StepPlan(tuple(steps), two_step=mode is not Mode.ONE_STEP, rounds=rounds, direct=False)


@dataclass
class RoundRecord:
    round_index: int
    environment_grid: Optional[WorldGrid]
    world_grid: WorldGrid
    evaluation: EvaluationReport
    raw_llm_outputs: list[str] = field(default_factory=list)
    goals: tuple[Goal, ...] = ()
    agent_traces: list[EpisodeTrace] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)


@dataclass
class RunArtifact:
    config: RunConfig
    story_package: Optional[StoryPackage]
    round_records: list[RoundRecord]
    final_world: Optional[WorldGrid]
    tile_assignment: dict[str, TileAsset]
    rendered_image_path: Optional[str]
    completed: bool
    tries_used: int
    important: frozenset[str] = frozenset()
    walkable: frozenset[str] = frozenset()
    interactive: frozenset[str] = frozenset()
    failure: Optional[str] = None
    warnings: list[str] = field(default_factory=list)
    transcript: Optional[Transcript] = None
    image: object = None

    @property
    def final_record(self) -> Optional[RoundRecord]:
        for rec in reversed(self.round_records):
            if rec.world_grid == self.final_world:
                return rec
        return None

    def summary(self) -> dict:
        rec = self.final_record
        last = rec.evaluation if rec else None
        return {
            "final_round": rec.round_index if rec else None,
            "completed": self.completed,
            "tries_used": self.tries_used,
            "rounds_completed": len(self.round_records),
            "failure": self.failure,
            "final_world": self.final_world.to_text() if self.final_world else None,
            "rendered_image_path": self.rendered_image_path,
            "final_evaluation": last.to_dict() if last else None,
            "warnings": list(self.warnings),
        }


def extract_goal_positions(world: WorldGrid, goals: Sequence[Goal], provider: ProviderConfig,
                           legend: TileLegend, *, transcript: Optional[Transcript] = None,
                           strict: bool = True, **kw) -> tuple[tuple[Goal, ...], list[str]]:
    """Ask the model for goal cells, then verify each against the grid.

    A returned cell that does not hold the goal's symbol is replaced by the
    symbol's first occurrence. With ``strict=False`` a symbol missing from the
    grid leaves the goal unplaced instead of raising GoalUnplaceable.
    """
    res = run_step(provider, Step.GOAL_POSITIONS, {"legend": legend, "goals": tuple(goals), "world": world},
                   transcript=transcript, **kw)
    claimed: dict[int, tuple[int, int]] = res.value
    out, warnings = [], list(res.warnings)
    for g in goals:
        pos = claimed.get(g.index)
        if pos is not None and world.in_bounds(pos) and world[pos] == g.target_symbol:
            out.append(replace(g, position=pos))
            continue
        found = locate_symbol(world, g.target_symbol)
        if found is None:
            if strict:
                raise GoalUnplaceable(f"goal {g.index}: symbol {g.target_symbol!r} is not in the world")
            warnings.append(f"goal {g.index}: symbol {g.target_symbol!r} is not in the world")
            out.append(replace(g, position=None))
            continue
        warnings.append(f"goal {g.index}: claimed position {pos} does not hold "
                        f"{g.target_symbol!r}; using {found}")
        out.append(replace(g, position=found))
    return tuple(out), warnings


def logical_clock() -> Callable[[], str]:
    """Deterministic timestamps (one second per exchange from the epoch) for scripted runs."""
    n = iter(range(10**9))
    epoch = datetime(1970, 1, 1, tzinfo=timezone.utc)
    return lambda: (epoch + timedelta(seconds=next(n))).isoformat()


def wall_clock() -> str:
    return datetime.now(timezone.utc).isoformat()


class _Tries:
    def __init__(self, budget: int):
        self.budget = budget
        self.failures = 0
        self.last_error: Optional[str] = None

    def fail(self, e: Exception, label: str):
        self.failures += 1
        self.last_error = f"{label}: {type(e).__name__}: {e}"
        log.warning("stage %s failed (%d/%d): %s", label, self.failures, self.budget, e)
        if self.failures >= self.budget:
            raise CompletionBudgetExhausted(self.last_error) from e

    def attempt(self, fn: Callable, label: str):
        while True:
            try:
                return fn()
            except RETRYABLE as e:
                self.fail(e, label)


class _Run:
    def __init__(self, config: RunConfig, clock, embedder: Embedder):
        self.cfg = config
        self.plan = apply_mode(config)
        self.provider = config.provider
        self.transcript = Transcript(clock)
        self.tries = _Tries(config.completion_try_budget)
        self.embedder = embedder
        self.ctx: dict = {}
        self.story: Optional[str] = None
        self.characters: tuple[CharacterInfo, ...] = ()
        self.legend: Optional[TileLegend] = None
        self.goals: tuple[Goal, ...] = ()
        self.records: list[RoundRecord] = []
        self.warnings: list[str] = []
        self.step_kw = {"transcript": self.transcript, "temperature": config.temperature, "seed": config.seed}

    def _step(self, step: Step, params: Optional[dict] = None):
        res = self.tries.attempt(lambda: run_step(self.provider, step, self.ctx, params, **self.step_kw),
                                 step.value)
        self.warnings += [f"{step.value}: {w}" for w in res.warnings]
        return res

    def extract(self):
        lo, hi = self.cfg.story_paragraphs
        paragraphs = str(lo) if lo == hi else f"{lo}-{hi}"
        story = self._step(Step.STORY, {"paragraphs": paragraphs,
                                        "objective_count": self.cfg.objective_count}).value
        self.story = story
        self.ctx["story"] = story
        if self.plan.direct:
            return
        steps = set(self.plan.extraction_steps)
        self.characters = self._step(Step.CHARACTERS).value
        self.ctx["characters"] = self.characters
        self.legend, self.characters = self._step(Step.TILESET).value
        self.ctx.update(characters=self.characters, legend=self.legend)
        if Step.GOALS in steps:
            self.goals = self._step(Step.GOALS, {"objective_count": self.cfg.objective_count}).value
        self.ctx["goals"] = self.goals
        sets = {"important": frozenset(), "walkable": frozenset(), "interactive": frozenset()}
        if Step.IMPORTANT_TILES in steps:
            sets["important"] = self._step(Step.IMPORTANT_TILES,
                                           {"important_cap": self.cfg.important_tile_cap}).value
            sets["walkable"] = self._step(Step.WALKABLE_TILES).value
            sets["interactive"] = self._step(Step.OBJECT_TILES).value
        self.legend = self.legend.with_sets(**sets)
        self.ctx.update(legend=self.legend, **sets)

    def generate_round(self, i: int):
        raw, warnings = [], []
        ctx = self.ctx
        for k in ("previous_world", "previous_evals", "environment_world"):
            ctx.pop(k, None)
        if i > 0:
            prev = self.records[-1]
            ctx["previous_world"] = prev.world_grid.to_text()
            ctx["previous_evals"] = dumps(prev.evaluation.to_dict())
        env = None
        if self.plan.two_step:
            res = self._step(Step.WORLD_ENVIRONMENT)
            env = res.value
            raw.append(res.raw)
            ctx["environment_world"] = env
        if self.plan.direct:
            mode_text = ("Create the game world for the story below. First give a fenced JSON object "
                         '{"tiles": {symbol: description}, "characters": [{"name", "description", '
                         '"role", "symbol"}], "walkable": [symbol]}, then draw the world.')
        elif self.plan.two_step:
            mode_text = ("Place the characters and the interactive object tiles on the environment map "
                         "below. Keep the environment as it is wherever nothing is placed.")
        else:
            mode_text = ("Draw the complete game world as a 2D map of tile symbols: the environment, "
                         "the characters and the interactive object tiles, in one map.")
        res = self._step(Step.WORLD_FULL, {"mode_instructions": mode_text})
        raw.append(res.raw)
        warnings += res.warnings
        grid = res.value
        if self.plan.direct:
            grid, extra = grid
            self.legend, self.characters = extra["legend"], extra["characters"]
        world = algorithmic_fixes(grid, self.legend)
        return env, world, raw, warnings

    def evaluate(self, i: int, world: WorldGrid) -> tuple[EvaluationReport, tuple[Goal, ...], list, list[str]]:
        warnings = []
        goals = self.goals
        if goals:
            goals, w = self.tries.attempt(
                lambda: extract_goal_positions(world, self.goals, self.provider, self.legend,
                                               strict=False, **self.step_kw),
                Step.GOAL_POSITIONS.value)
            warnings += w
        prior = [r.world_grid for r in self.records]
        report = evaluate_world(world, self.legend, self.characters, goals, prior,
                                budget=self.cfg.astar_iteration_budget,
                                novelty_threshold=self.cfg.novelty_threshold, order=self.cfg.goal_order)
        report.coherence = self.tries.attempt(
            lambda: coherence_judge(self.story, self.legend, world, self.provider, **self.step_kw),
            Step.COHERENCE_JUDGE.value)
        traces = []
        protagonist = next((c.symbol for c in self.characters if c.role is Role.PROTAGONIST), None)
        placed = goals and all(g.position is not None for g in goals)
        if placed and protagonist and locate_symbol(world, protagonist) and self.cfg.agent_episodes > 0:
            policy = LLMPolicy(self.provider, self.transcript, seed=self.cfg.seed)
            traces = run_episodes(world, goals, self.legend, policy, self.cfg.agent_episodes,
                                  protagonist=protagonist,
                                  on_failure=lambda e: self.tries.fail(e, Step.AGENT_ACTIONS.value),
                                  retry_on=RETRYABLE)
            report.agent_reward = traces[-1].episode_reward
        return report, goals, traces, warnings

    def rounds(self):
        for i in range(self.plan.rounds):
            env, world, raw, warnings = self.generate_round(i)
            report, goals, traces, w = self.evaluate(i, world)
            self.records.append(RoundRecord(i, env, world, report, raw, goals, traces, warnings + w))


def _final_world(records: list[RoundRecord], best_of: bool) -> Optional[WorldGrid]:
    if not records:
        return None
    if best_of:
        playable = [r for r in records if r.evaluation.playable]
        if playable:
            return playable[-1].world_grid
    return records[-1].world_grid


def run(config: RunConfig, out_dir=None, *, clock: Optional[Callable[[], str]] = None,
        embedder: Optional[Embedder] = None) -> RunArtifact:
    """Execute one full generation run; persists the artifact directory when ``out_dir`` is given."""
    embedder = embedder or BagOfWordsEmbedder()
    env_path, char_path = config.tileset_paths
    env_ds = TileDataset.load_csv(env_path, embedder)
    char_ds = TileDataset.load_csv(char_path, embedder)
    if clock is None:
        clock = logical_clock() if config.provider.is_mock else wall_clock

    r = _Run(config, clock, embedder)
    completed, failure = True, None
    try:
        r.extract()
        r.rounds()
    except CompletionBudgetExhausted as e:
        completed, failure = False, str(e)

    final = _final_world(r.records, config.best_of)
    assignment: dict[str, TileAsset] = {}
    image = None
    if final is not None and r.legend is not None:
        assignment = assign_tiles(r.legend, r.characters, env_ds, char_ds, embedder)
        image = render_world(final, assignment)

    pkg = None
    if r.story is not None:
        pkg = StoryPackage(r.story, count_paragraphs(r.story), r.characters, r.legend,
                           tuple(r.goals))
    tries_used = min(config.completion_try_budget, r.tries.failures + (1 if completed else 0))
    legend = r.legend
    art = RunArtifact(
        config=config, story_package=pkg, round_records=r.records, final_world=final,
        tile_assignment=assignment, rendered_image_path="world.png" if image is not None else None,
        completed=completed, tries_used=tries_used,
        important=legend.important if legend else frozenset(),
        walkable=legend.walkable if legend else frozenset(),
        interactive=legend.interactive if legend else frozenset(),
        failure=failure, warnings=r.warnings, transcript=r.transcript, image=image,
    )
    if out_dir is not None:
        write_artifact(art, out_dir)
    return art


def _write(path: Path, text: str):
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8")


def write_artifact(art: RunArtifact, out_dir) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    _write(out / "config.json", dumps(art.config.to_dict()))
    pkg = art.story_package
    if pkg is not None:
        _write(out / "story.txt", pkg.story_text)
        _write(out / "extractions.json", dumps({
            "characters": [c.to_dict() for c in pkg.characters],
            "legend": pkg.legend.to_dict() if pkg.legend else None,
            "goals": [g.to_dict() for g in pkg.goals],
            "important": sorted(art.important),
            "walkable": sorted(art.walkable),
            "interactive": sorted(art.interactive),
        }))
    traces = {}
    for rec in art.round_records:
        d = out / f"round_{rec.round_index}"
        if rec.environment_grid is not None:
            _write(d / "world_env.txt", rec.environment_grid.to_text())
        _write(d / "world.txt", rec.world_grid.to_text())
        _write(d / "evals.json", dumps(rec.evaluation.to_dict()))
        _write(d / "goal_positions.json", dumps([g.to_dict() for g in rec.goals]))
        if rec.agent_traces:
            traces[f"round_{rec.round_index}"] = [t.to_dict() for t in rec.agent_traces]
    _write(out / "agent_traces.json", dumps(traces))
    _write(out / "tile_assignment.json", dumps({
        s: {"id": a.id, "description": a.description, "category": a.category.value}
        for s, a in sorted(art.tile_assignment.items())
    }))
    if art.image is not None:
        save_png(art.image, out / "world.png")
    if art.transcript is not None:
        _write(out / "transcript.jsonl", art.transcript.to_jsonl())
    _write(out / "artifact.json", dumps(art.summary()))
    return out


def load_round_reports(run_dir) -> list[EvaluationReport]:
    run_dir = Path(run_dir)
    out = []
    i = 0
    while (run_dir / f"round_{i}" / "evals.json").exists():
        out.append(EvaluationReport.from_dict(json.loads((run_dir / f"round_{i}" / "evals.json").read_text())))
        i += 1
    return out


__all__ = [
    "GENERATION_STEPS", "Mode", "RunConfig", "StepPlan", "RoundRecord", "RunArtifact",
    "apply_mode", "run", "extract_goal_positions", "write_artifact", "GoalUnplaceable",
    "CompletionBudgetExhausted", "load_round_reports",
]
