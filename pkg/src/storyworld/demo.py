"""Scripted demo run: a fixed story, extractions and three rounds of worlds for the mock provider.

Round 0 deliberately contains a stray symbol, a ragged row and a duplicated
protagonist so that parsing and repair are exercised; its goal-position reply
misplaces one objective. Agent replies are computed from the repaired worlds:
the first episode walks half of each shortest path, later episodes walk all of
it and interact.
"""

from __future__ import annotations

import json
from dataclasses import replace
from typing import Optional

from .agent import AgentRequest, OraclePolicy, run_episode
from .llm import Step
from .worldmodel import Goal, TargetKind, TileLegend, WorldGrid, algorithmic_fixes, locate_symbol, parse_grid

STORY = """\
On the misty banks of the Sallow River stood the fishing hamlet of Wend, where reeds whispered \
and lanterns swayed on every porch. Mara, a young ferrywoman with a hooded cloak, carried travellers \
across the water each morning, and old Oren the fisherman mended his nets by the stone shrine at \
the edge of the village.

One grey dawn the ferry was found cut loose and the shrine dark. Grell, a hulking bog troll from the \
marsh beyond the river, had stolen the shrine's light and barred the only gate to the northern \
fields. Without the light the mist would swallow the hamlet within three nights.

Oren told Mara what she had to do. She must find the rusty key Grell dropped near the reeds and pass \
through the gate, take up the old lantern, recover the carved oar and a coil of rope to mend the \
ferry, reach the shrine to rekindle its flame, and carry the parchment map that shows the troll's \
lair.

So Mara crossed the wooden bridges and followed the dirt paths through the pines. At the end of her \
journey she faced Grell on the far bank, struck the troll down, and the shrine's light rolled back \
the mist over Wend once more."""

CHARACTERS = [
    {"name": "Mara", "description": "young ferrywoman hero with a hooded cloak", "role": "Protagonist"},
    {"name": "Grell", "description": "hulking bog troll monster from the marsh", "role": "Antagonist"},
    {"name": "Oren", "description": "old fisherman villager with a net", "role": "NonPlayer"},
]

TILES = {
    ".": "green grass ground",
    ",": "brown dirt path",
    "#": "grey stone wall",
    "~": "blue river water",
    "=": "wooden plank bridge",
    "^": "tall pine tree",
    "k": "rusty iron key",
    "D": "heavy wooden gate door",
    "L": "old oil lantern",
    "o": "carved boat oar",
    "r": "coil of hemp rope",
    "S": "ancient stone shrine",
    "m": "parchment map scroll",
    "C": "treasure chest",
    "@": "Mara the ferrywoman",
    "G": "Grell the bog troll",
    "F": "Oren the fisherman",
}
CHARACTER_SYMBOLS = {"Mara": "@", "Grell": "G", "Oren": "F"}

GOALS = [
    {"description": "Find the rusty key dropped near the reeds", "target_symbol": "k", "target_kind": "PickObject"},
    {"description": "Pass through the gate to the northern fields", "target_symbol": "D", "target_kind": "ReachTile"},
    {"description": "Take up the old lantern", "target_symbol": "L", "target_kind": "PickObject"},
    {"description": "Recover the carved oar", "target_symbol": "o", "target_kind": "PickObject"},
    {"description": "Pick up a coil of rope to mend the ferry", "target_symbol": "r", "target_kind": "PickObject"},
    {"description": "Reach the shrine and rekindle its flame", "target_symbol": "S", "target_kind": "ReachTile"},
    {"description": "Carry the parchment map of the lair", "target_symbol": "m", "target_kind": "PickObject"},
    {"description": "Defeat Grell the bog troll", "target_symbol": "G", "target_kind": "HitEnemy"},
]

IMPORTANT = ["k", "D", "L", "o", "r", "S", "m", "G", "~", "=", ","]
WALKABLE = [".", ",", "=", "@"]  # '@' is dropped by the parser: characters never walk-through
INTERACTIVE = ["k", "D", "L", "o", "r", "S", "m", "C"]

HEIGHT, WIDTH = 12, 22

# per round: river column, bridge rows, tree cells, object cells
_LAYOUTS = [
    {
        "river": 11, "bridges": (3, 8),
        "trees": [(2, 3), (2, 4), (6, 6), (7, 6), (9, 15), (9, 16), (4, 18)],
        "place": {"@": (1, 1), "F": (10, 2), "k": (5, 4), "D": (1, 8), "L": (9, 7),
                  "o": (6, 14), "r": (2, 17), "S": (10, 19), "m": (5, 20), "G": (1, 20), "C": (10, 10)},
    },
    {
        "river": 9, "bridges": (2, 9),
        "trees": [(4, 2), (5, 2), (3, 13), (3, 14), (8, 17), (8, 18), (6, 5)],
        "place": {"@": (10, 1), "F": (1, 2), "k": (7, 3), "D": (2, 6), "L": (5, 7),
                  "o": (10, 12), "r": (6, 16), "S": (1, 19), "m": (9, 20), "G": (5, 20), "C": (1, 12)},
    },
    {
        "river": 13, "bridges": (5, 10),
        "trees": [(3, 8), (4, 8), (8, 3), (8, 4), (2, 17), (7, 18), (9, 10)],
        "place": {"@": (6, 1), "F": (1, 5), "k": (2, 2), "D": (10, 6), "L": (1, 11),
                  "o": (4, 16), "r": (10, 18), "S": (1, 20), "m": (7, 20), "G": (10, 20), "C": (6, 9)},
    },
]


def _environment(layout: dict) -> list[list[str]]:
    g = [["." for _ in range(WIDTH)] for _ in range(HEIGHT)]
    for r in range(HEIGHT):
        g[r][0] = g[r][WIDTH - 1] = "#"
    for c in range(WIDTH):
        g[0][c] = g[HEIGHT - 1][c] = "#"
    mid = HEIGHT // 2
    for c in range(1, WIDTH - 1):
        g[mid][c] = ","
    for r in range(1, HEIGHT - 1):
        g[r][layout["river"]] = "="if r in layout["bridges"] else "~"
    for r, c in layout["trees"]:
        g[r][c] = "^"
    return g


def environment_grid(round_index: int) -> WorldGrid:
    return WorldGrid(tuple("".join(row) for row in _environment(_LAYOUTS[round_index % 3])))


def full_grid(round_index: int) -> WorldGrid:
    layout = _LAYOUTS[round_index % 3]
    g = _environment(layout)
    for s, (r, c) in layout["place"].items():
        g[r][c] = s
    return WorldGrid(tuple("".join(row) for row in g))


def _fence(text: str, lang: str = "") -> str:
    return f"```{lang}\n{text}\n```"


def _json(obj) -> str:
    return _fence(json.dumps(obj, indent=2), "json")


def world_full_reply(round_index: int) -> str:
    grid = full_grid(round_index)
    rows = list(grid.rows)
    if round_index == 0:
        # defects for the parser and the repair pass
        rows[3] = rows[3][:-3] + "Z"        # stray symbol, ragged row
        rows[7] = rows[7][:-1]              # ragged row
        rows[9] = rows[9][:4] + "@" + rows[9][5:]  # duplicate protagonist
        return "Here is the world with the characters placed:\n\n" + _fence("\n".join(rows))
    return _fence("\n".join(rows))


def legend() -> TileLegend:
    chars = frozenset(CHARACTER_SYMBOLS.values())
    return TileLegend(dict(TILES), walkable=frozenset(WALKABLE) - chars,
                      interactive=frozenset(INTERACTIVE), important=frozenset(IMPORTANT),
                      character_symbols=chars)


def goals() -> tuple[Goal, ...]:
    return tuple(Goal(i, g["description"], g["target_symbol"], TargetKind(g["target_kind"]))
                 for i, g in enumerate(GOALS))


def repaired_world(round_index: int) -> WorldGrid:
    grid, _ = parse_grid(world_full_reply(round_index), legend())
    return algorithmic_fixes(grid, legend())


def placed_goals(world: WorldGrid) -> tuple[Goal, ...]:
    return tuple(replace(g, position=locate_symbol(world, g.target_symbol)) for g in goals())


def _positions_reply(world: WorldGrid, round_index: int) -> str:
    items = []
    for g in placed_goals(world):
        r, c = g.position
        if round_index == 0 and g.index == 3:
            r, c = 0, 0  # wrong on purpose; the pipeline falls back to a grid search
        items.append({"index": g.index, "row": r, "col": c})
    return _json({"positions": items})


class HalfPathPolicy:
    """First half of each shortest path, no interaction."""

    def __init__(self):
        self.oracle = OraclePolicy()

    def __call__(self, request: AgentRequest):
        acts = [a for a in self.oracle(request) if a.value.startswith("move")]
        return acts[: len(acts) // 2]


def agent_replies(world: WorldGrid, episodes: int) -> list[str]:
    """Action replies, in request order, for ``episodes`` episodes on ``world``."""
    replies: list[str] = []
    leg = legend()
    gs = placed_goals(world)
    for ep in range(episodes):
        inner = HalfPathPolicy() if ep == 0 else OraclePolicy()

        def recording(request, inner=inner):
            acts = inner(request)
            replies.append(_fence("\n".join(a.value for a in acts)))
            return acts

        run_episode(world, gs, leg, recording, protagonist="@")
    return replies


def golden_script(rounds: int = 3, episodes: int = 2, *, direct: bool = False) -> list[tuple[str, str]]:
    """(step, reply) pairs for a Full-mode run with ``rounds`` rounds."""
    script: list[tuple[str, str]] = [
        (Step.STORY.value, STORY),
        (Step.CHARACTERS.value, _json({"characters": CHARACTERS})),
        (Step.TILESET.value, _json({"tiles": TILES, "character_symbols": CHARACTER_SYMBOLS})),
        (Step.GOALS.value, _json({"goals": GOALS})),
        (Step.IMPORTANT_TILES.value, _json({"important": IMPORTANT})),
        (Step.WALKABLE_TILES.value, _json({"walkable": WALKABLE})),
        (Step.OBJECT_TILES.value, _json({"interactive": INTERACTIVE})),
    ]
    scores = [72, 81, 88]
    for i in range(rounds):
        world = repaired_world(i)
        script.append((Step.WORLD_ENVIRONMENT.value, _fence(environment_grid(i).to_text())))
        script.append((Step.WORLD_FULL.value, world_full_reply(i)))
        script.append((Step.GOAL_POSITIONS.value, _positions_reply(world, i)))
        script.append((Step.COHERENCE_JUDGE.value, f"Score: {scores[i % 3]}"))
        script += [(Step.AGENT_ACTIONS.value, t) for t in agent_replies(world, episodes)]
    return script


def direct_script(rounds: int = 1) -> list[tuple[str, str]]:
    """Replies for direct generation: story, then mapping plus map in one answer."""
    chars = [dict(c, symbol=CHARACTER_SYMBOLS[c["name"]]) for c in CHARACTERS]
    script = [(Step.STORY.value, STORY)]
    for i in range(rounds):
        mapping = _json({"tiles": TILES, "characters": chars, "walkable": [".", ",", "="]})
        script.append((Step.WORLD_FULL.value, mapping + "\n\n" + _fence(full_grid(i).to_text())))
        script.append((Step.COHERENCE_JUDGE.value, "```\n40\n```"))
    return script


def script_to_json(script: list[tuple[str, str]]) -> str:
    return json.dumps([{"step": s, "text": t} for s, t in script], indent=2, ensure_ascii=False) + "\n"


def mode_script(mode: str, rounds: int = 3, episodes: int = 2) -> Optional[list[tuple[str, str]]]:
    """Replies covering any ablation mode; unused replies are simply left in the queue."""
    if mode == "direct":
        return direct_script(rounds)
    return golden_script(rounds, episodes)
