"""Prompt rendering, structured-output parsing and the re-prompting step runner."""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from enum import Enum
from importlib import resources
from string import Template
from typing import Any, Callable, Optional

from ..worldmodel import (
    CharacterInfo,
    Goal,
    NoGridFound,
    ParseWarning,
    Role,
    TargetKind,
    TileLegend,
    WorldGrid,
    count_paragraphs,
    dumps,
    is_valid_symbol,
    parse_grid,
)
from .provider import (
    DEFAULT_MAX_OUTPUT_TOKENS,
    WORLD_MAX_OUTPUT_TOKENS,
    ChatRequest,
    ProviderConfig,
    complete,
)

REPROMPT_BUDGET = 3


class ParseFailure(ValueError):
    pass


class MissingContext(ValueError):
    pass


class Step(str, Enum):
    STORY = "Story"
    CHARACTERS = "Characters"
    TILESET = "Tileset"
    GOALS = "Goals"
    IMPORTANT_TILES = "ImportantTiles"
    WALKABLE_TILES = "WalkableTiles"
    OBJECT_TILES = "ObjectTiles"
    WORLD_ENVIRONMENT = "WorldEnvironment"
    WORLD_FULL = "WorldFull"
    COHERENCE_JUDGE = "CoherenceJudge"
    AGENT_ACTIONS = "AgentActions"
    GOAL_POSITIONS = "GoalPositions"


GENERATION_STEPS = (
    Step.STORY, Step.CHARACTERS, Step.TILESET, Step.GOALS, Step.IMPORTANT_TILES,
    Step.WALKABLE_TILES, Step.OBJECT_TILES, Step.WORLD_ENVIRONMENT, Step.WORLD_FULL,
)

# Section order and headings used when rendering accumulated context.
_SECTIONS = [
    ("story", "STORY"),
    ("characters", "CHARACTER INFORMATION"),
    ("tiles", "TILE MAPPING"),
    ("goals", "OBJECTIVES"),
    ("important", "IMPORTANT TILES"),
    ("walkable", "WALKABLE TILES"),
    ("interactive", "INTERACTIVE OBJECT TILES"),
    ("environment_world", "ENVIRONMENT MAP"),
    ("world", "WORLD"),
    ("previous_world", "PREVIOUS WORLD"),
    ("previous_evals", "EVALUATION OF THE PREVIOUS WORLD"),
    ("previous_actions", "PREVIOUS ACTION SEQUENCE"),
    ("previous_reward", "REWARD FOR THE PREVIOUS OBJECTIVE"),
    ("prior_episodes", "PREVIOUS EPISODES"),
]


@dataclass
class StepResult:
    value: Any
    warnings: list[str] = field(default_factory=list)
    raw: str = ""
    attempts: int = 1


@dataclass(frozen=True)
class ExtractionSchema:
    step: Step
    template: str
    requires: tuple[str, ...]
    optional: tuple[str, ...]
    expected_shape: str
    parser: Callable[[str, dict, dict], tuple[Any, list[str]]]
    max_output_tokens: int = DEFAULT_MAX_OUTPUT_TOKENS


# ---------------------------------------------------------------- serializers

def serialize_characters(chars) -> str:
    return dumps([c.to_dict() for c in chars])


def serialize_tiles(legend: TileLegend) -> str:
    return dumps(dict(sorted(legend.entries.items())))


def serialize_goals(goals) -> str:
    return dumps([{k: v for k, v in g.to_dict().items() if k != "position"} for g in goals])


def serialize_symbols(symbols) -> str:
    return dumps(sorted(symbols))


def context_sections(ctx: dict) -> dict[str, str]:
    """Text form of every context piece, as it appears inside prompts."""
    out = {}
    for key, value in ctx.items():
        if value is None:
            continue
        if key == "characters":
            out[key] = serialize_characters(value)
        elif key == "legend":
            out["tiles"] = serialize_tiles(value)
        elif key == "goals":
            out[key] = serialize_goals(value)
        elif key in ("important", "walkable", "interactive"):
            out[key] = serialize_symbols(value)
        elif isinstance(value, WorldGrid):
            out[key] = value.to_text()
        elif isinstance(value, str):
            out[key] = value
        else:
            out[key] = dumps(value)
    return out


# ---------------------------------------------------------------- parsing helpers

_FENCE_RE = re.compile(r"```[^\n`]*\n(.*?)```", re.DOTALL)


def fenced_blocks(text: str) -> list[str]:
    return _FENCE_RE.findall(text)


def parse_json_object(text: str) -> dict:
    candidates = fenced_blocks(text)
    candidates += [text]
    for cand in candidates:
        cand = cand.strip()
        try:
            obj = json.loads(cand)
        except json.JSONDecodeError:
            start, end = cand.find("{"), cand.rfind("}")
            if start < 0 or end <= start:
                continue
            try:
                obj = json.loads(cand[start:end + 1])
            except json.JSONDecodeError:
                continue
        if isinstance(obj, dict):
            return obj
    raise ParseFailure("no JSON object found; reply with one fenced JSON object")


def _need(obj: dict, key: str, kind: type):
    if key not in obj or not isinstance(obj[key], kind):
        raise ParseFailure(f"JSON object must have key {key!r} of type {kind.__name__}")
    return obj[key]


_ROLE_ALIASES = {
    "protagonist": Role.PROTAGONIST, "hero": Role.PROTAGONIST, "player": Role.PROTAGONIST,
    "antagonist": Role.ANTAGONIST, "villain": Role.ANTAGONIST, "enemy": Role.ANTAGONIST,
    "nonplayer": Role.NON_PLAYER, "npc": Role.NON_PLAYER, "non-player": Role.NON_PLAYER,
    "non player": Role.NON_PLAYER, "nonplayercharacter": Role.NON_PLAYER,
}


def _role(value) -> Role:
    key = str(value).strip().lower().replace("_", "")
    if key in _ROLE_ALIASES:
        return _ROLE_ALIASES[key]
    raise ParseFailure(f"unknown role {value!r}; use Protagonist, Antagonist or NonPlayer")


_KIND_ALIASES = {k.value.lower(): k for k in TargetKind}
_KIND_ALIASES.update({"reach": TargetKind.REACH_TILE, "pick": TargetKind.PICK_OBJECT,
                      "hit": TargetKind.HIT_ENEMY})


def _kind(value) -> TargetKind:
    key = re.sub(r"[\s_-]", "", str(value)).lower()
    if key in _KIND_ALIASES:
        return _KIND_ALIASES[key]
    raise ParseFailure(f"unknown target_kind {value!r}")


def _symbol_list(obj: dict, key: str, legend: TileLegend) -> tuple[list[str], list[str]]:
    items = _need(obj, key, list)
    out, warnings = [], []
    for s in items:
        if not is_valid_symbol(s):
            raise ParseFailure(f"{s!r} is not a single-character symbol")
        if s not in legend.entries:
            warnings.append(f"{key}: symbol {s!r} not in tile mapping, dropped")
            continue
        if s not in out:
            out.append(s)
    return out, warnings


# ---------------------------------------------------------------- step parsers

def _parse_story(text: str, ctx: dict, params: dict):
    blocks = fenced_blocks(text)
    story = (blocks[0] if blocks and not text.strip().split("```")[0].strip() else text).strip()
    if len(re.findall(r"[A-Za-z]+", story)) < 5:
        raise ParseFailure("the story is empty; reply with prose paragraphs")
    return story, []


def _parse_characters(text: str, ctx: dict, params: dict):
    obj = parse_json_object(text)
    items = _need(obj, "characters", list)
    chars = []
    for it in items:
        if not isinstance(it, dict) or not str(it.get("name", "")).strip():
            raise ParseFailure("every character needs a name")
        desc = str(it.get("description", "")).strip()
        if not desc:
            raise ParseFailure(f"character {it['name']!r} needs a description")
        chars.append(CharacterInfo(str(it["name"]).strip(), desc, _role(it.get("role"))))
    if sum(c.role is Role.PROTAGONIST for c in chars) != 1:
        raise ParseFailure("exactly one character must have role Protagonist")
    if len({c.name for c in chars}) != len(chars):
        raise ParseFailure("character names must be unique")
    return tuple(chars), []


def _tiles_dict(obj: dict) -> dict[str, str]:
    tiles = _need(obj, "tiles", dict)
    entries = {}
    for s, desc in tiles.items():
        if not is_valid_symbol(s):
            raise ParseFailure(f"tile symbol {s!r} must be a single visible ASCII character")
        if not str(desc).strip():
            raise ParseFailure(f"tile {s!r} needs a description")
        entries[s] = str(desc).strip()
    if not entries:
        raise ParseFailure("tile mapping is empty")
    return entries


def _parse_tileset(text: str, ctx: dict, params: dict):
    obj = parse_json_object(text)
    entries = _tiles_dict(obj)
    mapping = _need(obj, "character_symbols", dict)
    chars = list(ctx["characters"])
    assigned = []
    for c in chars:
        s = mapping.get(c.name)
        if s is None:
            raise ParseFailure(f"character {c.name!r} has no symbol in character_symbols")
        if not is_valid_symbol(s) or s not in entries:
            raise ParseFailure(f"symbol {s!r} of {c.name!r} must be a tile in tiles")
        assigned.append(CharacterInfo(c.name, c.description, c.role, s))
    symbols = [c.symbol for c in assigned]
    if len(set(symbols)) != len(symbols):
        raise ParseFailure("character symbols must be unique")
    legend = TileLegend(entries, character_symbols=frozenset(symbols))
    return (legend, tuple(assigned)), []


def _parse_goals(text: str, ctx: dict, params: dict):
    obj = parse_json_object(text)
    items = _need(obj, "goals", list)
    legend: TileLegend = ctx["legend"]
    goals = []
    for i, it in enumerate(items):
        if not isinstance(it, dict):
            raise ParseFailure("each goal must be an object")
        s = it.get("target_symbol")
        if s not in legend.entries:
            raise ParseFailure(f"goal {i}: target_symbol {s!r} is not in the tile mapping")
        goals.append(Goal(i, str(it.get("description", "")).strip(), s, _kind(it.get("target_kind"))))
    if not goals:
        raise ParseFailure("no goals extracted")
    warnings = []
    n = params.get("objective_count")
    if n is not None and len(goals) != n:
        warnings.append(f"asked for {n} objectives, got {len(goals)}")
    return tuple(goals), warnings


def _parse_important(text: str, ctx: dict, params: dict):
    symbols, warnings = _symbol_list(parse_json_object(text), "important", ctx["legend"])
    cap = params.get("important_cap")
    if cap is not None and len(symbols) > cap:
        warnings.append(f"{len(symbols)} important tiles truncated to the first {cap}")
        symbols = symbols[:cap]
    return frozenset(symbols), warnings


def _parse_walkable(text: str, ctx: dict, params: dict):
    legend: TileLegend = ctx["legend"]
    symbols, warnings = _symbol_list(parse_json_object(text), "walkable", legend)
    chars = [s for s in symbols if s in legend.character_symbols]
    if chars:
        warnings.append(f"character symbols {chars} cannot be walkable, dropped")
    return frozenset(s for s in symbols if s not in legend.character_symbols), warnings


def _parse_interactive(text: str, ctx: dict, params: dict):
    symbols, warnings = _symbol_list(parse_json_object(text), "interactive", ctx["legend"])
    return frozenset(symbols), warnings


def _parse_world(text: str, ctx: dict, params: dict):
    legend = ctx.get("legend")
    extra: dict = {}
    if legend is None:
        # direct generation: the mapping comes with the map
        obj = parse_json_object(text)
        entries = _tiles_dict(obj)
        chars = []
        for it in _need(obj, "characters", list):
            try:
                c = CharacterInfo(str(it["name"]), str(it["description"]), _role(it.get("role")),
                                  str(it["symbol"]))
            except (KeyError, TypeError, ValueError) as e:
                raise ParseFailure(f"bad character entry {it!r}: {e}") from e
            if c.symbol not in entries:
                raise ParseFailure(f"character symbol {c.symbol!r} is not in tiles")
            chars.append(c)
        if sum(c.role is Role.PROTAGONIST for c in chars) != 1:
            raise ParseFailure("exactly one character must have role Protagonist")
        walk = obj.get("walkable", [])
        csyms = frozenset(c.symbol for c in chars)
        legend = TileLegend(entries, walkable=frozenset(s for s in walk if s in entries) - csyms,
                            character_symbols=csyms)
        extra = {"legend": legend, "characters": tuple(chars)}
    try:
        grid, warns = parse_grid(text, legend)
    except NoGridFound as e:
        raise ParseFailure(f"{e}; reply with the map inside one fenced block") from e
    value = (grid, extra) if extra else grid
    return value, [str(w) for w in warns]


def _parse_positions(text: str, ctx: dict, params: dict):
    obj = parse_json_object(text)
    out = {}
    for it in _need(obj, "positions", list):
        try:
            out[int(it["index"])] = (int(it["row"]), int(it["col"]))
        except (KeyError, TypeError, ValueError) as e:
            raise ParseFailure(f"bad position entry {it!r}") from e
    return out, []


def parse_score(text: str) -> int:
    blocks = fenced_blocks(text)
    for cand in blocks + [text]:
        m = re.search(r"-?\d+", cand)
        if m:
            return max(0, min(100, int(m.group())))
    raise ParseFailure("no integer score found; reply with one integer from 0 to 100")


def _parse_score(text: str, ctx: dict, params: dict):
    return parse_score(text), []


def _parse_actions(text: str, ctx: dict, params: dict):
    from ..agent import parse_actions
    return parse_actions(text)


SCHEMAS: dict[Step, ExtractionSchema] = {
    s.step: s for s in [
        ExtractionSchema(Step.STORY, "story.txt", (), (), "plain prose paragraphs", _parse_story),
        ExtractionSchema(Step.CHARACTERS, "characters.txt", ("story",), (),
                         '{"characters": [{"name", "description", "role"}]}', _parse_characters),
        ExtractionSchema(Step.TILESET, "tileset.txt", ("story", "characters"), (),
                         '{"tiles": {symbol: description}, "character_symbols": {name: symbol}}',
                         _parse_tileset),
        ExtractionSchema(Step.GOALS, "goals.txt", ("story", "characters", "legend"), (),
                         '{"goals": [{"description", "target_symbol", "target_kind"}]}', _parse_goals),
        ExtractionSchema(Step.IMPORTANT_TILES, "important_tiles.txt",
                         ("story", "characters", "legend", "goals"), (),
                         '{"important": [symbol]}', _parse_important),
        ExtractionSchema(Step.WALKABLE_TILES, "walkable_tiles.txt",
                         ("story", "characters", "legend", "goals"), (),
                         '{"walkable": [symbol]}', _parse_walkable),
        ExtractionSchema(Step.OBJECT_TILES, "object_tiles.txt",
                         ("story", "characters", "legend", "goals"), (),
                         '{"interactive": [symbol]}', _parse_interactive),
        ExtractionSchema(Step.WORLD_ENVIRONMENT, "world_environment.txt",
                         ("story", "characters", "legend", "important", "walkable", "interactive"),
                         ("goals", "previous_world", "previous_evals"),
                         "fenced character grid", _parse_world, WORLD_MAX_OUTPUT_TOKENS),
        ExtractionSchema(Step.WORLD_FULL, "world_full.txt", ("story",),
                         ("characters", "legend", "goals", "important", "walkable", "interactive",
                          "environment_world", "previous_world", "previous_evals"),
                         "fenced character grid (direct mode: fenced JSON mapping first)",
                         _parse_world, WORLD_MAX_OUTPUT_TOKENS),
        ExtractionSchema(Step.GOAL_POSITIONS, "goal_positions.txt", ("legend", "goals", "world"), (),
                         '{"positions": [{"index", "row", "col"}]}', _parse_positions),
        ExtractionSchema(Step.COHERENCE_JUDGE, "coherence_judge.txt", ("story", "legend", "world"), (),
                         "fenced integer 0-100", _parse_score),
        ExtractionSchema(Step.AGENT_ACTIONS, "agent_actions.txt", ("world",),
                         ("legend", "previous_actions", "previous_reward", "prior_episodes"),
                         "fenced list of action names", _parse_actions),
    ]
}


def load_template(name: str) -> str:
    return resources.files("storyworld.llm").joinpath("templates", name).read_text(encoding="utf-8")


def render_prompt(schema: ExtractionSchema, ctx: dict, params: dict) -> tuple[str, str]:
    missing = [k for k in schema.requires if ctx.get(k) is None]
    if missing:
        raise MissingContext(f"step {schema.step.value} needs {missing}")
    system = load_template("system.txt").strip()
    head = Template(load_template(schema.template)).safe_substitute(
        {k: str(v) for k, v in params.items()}).strip()
    keys = set(schema.requires) | set(schema.optional)
    sections = context_sections({k: v for k, v in ctx.items() if k in keys})
    body = [head]
    for key, title in _SECTIONS:
        if key in sections:
            body.append(f"### {title}\n{sections[key]}")
    return system, "\n\n".join(body)


class Transcript:
    """Ordered record of every prompt/response exchange."""

    def __init__(self, clock: Callable[[], str]):
        self.clock = clock
        self.entries: list[dict] = []

    def record(self, step: Step, req: ChatRequest, response: Optional[str], error: Optional[str] = None):
        entry = {
            "seq": len(self.entries),
            "step": step.value,
            "timestamp": self.clock(),
            "system": req.system_prompt,
            "messages": [{"role": r, "content": c} for r, c in req.messages],
            "response": response,
        }
        if error:
            entry["error"] = error
        self.entries.append(entry)

    def to_jsonl(self) -> str:
        return "".join(json.dumps(e, sort_keys=True, ensure_ascii=False) + "\n" for e in self.entries)


def run_step(cfg: ProviderConfig, step: Step, ctx: dict, params: Optional[dict] = None, *,
             reprompt_budget: int = REPROMPT_BUDGET, transcript: Optional[Transcript] = None,
             temperature: float = 1.0, seed: Optional[int] = None) -> StepResult:
    """Render, call and parse one pipeline step, re-prompting on parse failures."""
    schema = SCHEMAS[Step(step)]
    params = dict(params or {})
    system, user = render_prompt(schema, ctx, params)
    messages = [("user", user)]
    last_error = None
    for attempt in range(reprompt_budget + 1):
        req = ChatRequest(system, list(messages), temperature=temperature,
                          max_output_tokens=schema.max_output_tokens, step=schema.step.value, seed=seed)
        try:
            text = complete(cfg, req)
        except Exception as e:
            if transcript is not None:
                transcript.record(schema.step, req, None, error=f"{type(e).__name__}: {e}")
            raise
        if transcript is not None:
            transcript.record(schema.step, req, text)
        try:
            value, warnings = schema.parser(text, ctx, params)
        except ParseFailure as e:
            last_error = e
            messages += [("assistant", text),
                         ("user", f"Your answer could not be used: {e}. "
                                  f"Reply again in the required format: {schema.expected_shape}.")]
            continue
        return StepResult(value, warnings, text, attempt + 1)
    raise ParseFailure(f"{schema.step.value}: no parseable answer after "
                       f"{reprompt_budget + 1} attempts ({last_error})")
