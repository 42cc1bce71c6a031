"""Domain types for stories, tile legends and grids, plus grid extraction and repair."""

from __future__ import annotations

import json
import re
from collections import Counter
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Iterable, Optional

Cell = tuple[int, int]

# Fraction of a line's characters that must be legend symbols for the line to
# count as part of a map when no fenced block is present.
GRID_LINE_THRESHOLD = 0.6

_FENCE_RE = re.compile(r"```[^\n`]*\n(.*?)```", re.DOTALL)


class NoGridFound(ValueError):
    pass


class Role(str, Enum):
    PROTAGONIST = "Protagonist"
    ANTAGONIST = "Antagonist"
    NON_PLAYER = "NonPlayer"


class TargetKind(str, Enum):
    REACH_TILE = "ReachTile"
    PICK_OBJECT = "PickObject"
    HIT_ENEMY = "HitEnemy"


def is_valid_symbol(s: object) -> bool:
    """Single visible ASCII character."""
    return isinstance(s, str) and len(s) == 1 and 33 <= ord(s) <= 126


@dataclass(frozen=True)
class CharacterInfo:
    name: str
    description: str
    role: Role
    symbol: str = ""

    def __post_init__(self):
        if not self.description.strip():
            raise ValueError(f"character {self.name!r} has an empty description")

    def to_dict(self) -> dict:
        return {"name": self.name, "description": self.description,
                "role": self.role.value, "symbol": self.symbol}

    @classmethod
    def from_dict(cls, d: dict) -> "CharacterInfo":
        return cls(d["name"], d["description"], Role(d["role"]), d.get("symbol", ""))


@dataclass(frozen=True)
class TileLegend:
    entries: dict[str, str]
    walkable: frozenset[str] = frozenset()
    interactive: frozenset[str] = frozenset()
    important: frozenset[str] = frozenset()
    character_symbols: frozenset[str] = frozenset()

    def __post_init__(self):
        for name in ("walkable", "interactive", "important", "character_symbols"):
            object.__setattr__(self, name, frozenset(getattr(self, name)))
        keys = set(self.entries)
        for name in ("walkable", "interactive", "important", "character_symbols"):
            extra = getattr(self, name) - keys
            if extra:
                raise ValueError(f"{name} symbols not in legend: {sorted(extra)}")
        if self.character_symbols & self.walkable:
            raise ValueError("character symbols cannot be walkable")

    def with_sets(self, **kw) -> "TileLegend":
        return replace(self, **kw)

    def to_dict(self) -> dict:
        return {
            "entries": dict(sorted(self.entries.items())),
            "walkable": sorted(self.walkable),
            "interactive": sorted(self.interactive),
            "important": sorted(self.important),
            "character_symbols": sorted(self.character_symbols),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TileLegend":
        return cls(
            entries=dict(d["entries"]),
            walkable=frozenset(d.get("walkable", ())),
            interactive=frozenset(d.get("interactive", ())),
            important=frozenset(d.get("important", ())),
            character_symbols=frozenset(d.get("character_symbols", ())),
        )


@dataclass(frozen=True)
class Goal:
    index: int
    description: str
    target_symbol: str
    target_kind: TargetKind
    position: Optional[Cell] = None

    def to_dict(self) -> dict:
        return {
            "index": self.index,
            "description": self.description,
            "target_symbol": self.target_symbol,
            "target_kind": self.target_kind.value,
            "position": list(self.position) if self.position is not None else None,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Goal":
        pos = d.get("position")
        return cls(int(d["index"]), d["description"], d["target_symbol"],
                   TargetKind(d["target_kind"]),
                   tuple(pos) if pos is not None else None)


@dataclass(frozen=True)
class StoryPackage:
    story_text: str
    paragraph_count: int
    characters: tuple[CharacterInfo, ...] = ()
    legend: Optional[TileLegend] = None
    goals: tuple[Goal, ...] = ()

    @property
    def protagonist(self) -> Optional[CharacterInfo]:
        for c in self.characters:
            if c.role is Role.PROTAGONIST:
                return c
        return None

    def to_dict(self) -> dict:
        return {
            "story_text": self.story_text,
            "paragraph_count": self.paragraph_count,
            "characters": [c.to_dict() for c in self.characters],
            "legend": self.legend.to_dict() if self.legend else None,
            "goals": [g.to_dict() for g in self.goals],
        }


def count_paragraphs(text: str) -> int:
    parts = [p for p in re.split(r"\n\s*\n", text.strip()) if p.strip()]
    return max(1, len(parts))


@dataclass(frozen=True)
class WorldGrid:
    rows: tuple[str, ...]

    def __post_init__(self):
        object.__setattr__(self, "rows", tuple(self.rows))
        if not self.rows:
            raise ValueError("grid must have at least one row")

    @classmethod
    def from_text(cls, text: str) -> "WorldGrid":
        return cls(tuple(line.strip() for line in text.splitlines() if line.strip()))

    @property
    def height(self) -> int:
        return len(self.rows)

    @property
    def width(self) -> int:
        return max(len(r) for r in self.rows)

    @property
    def is_rectangular(self) -> bool:
        return len({len(r) for r in self.rows}) == 1

    def __getitem__(self, cell: Cell) -> str:
        r, c = cell
        return self.rows[r][c]

    def in_bounds(self, cell: Cell) -> bool:
        r, c = cell
        return 0 <= r < self.height and 0 <= c < len(self.rows[r])

    def cells(self) -> Iterable[tuple[Cell, str]]:
        for r, row in enumerate(self.rows):
            for c, s in enumerate(row):
                yield (r, c), s

    def symbols(self) -> set[str]:
        return set("".join(self.rows))

    def counts(self) -> Counter:
        return Counter("".join(self.rows))

    def with_cell(self, cell: Cell, symbol: str) -> "WorldGrid":
        r, c = cell
        rows = list(self.rows)
        rows[r] = rows[r][:c] + symbol + rows[r][c + 1:]
        return WorldGrid(tuple(rows))

    def to_text(self) -> str:
        return "\n".join(self.rows)

    def __str__(self) -> str:
        return self.to_text()


@dataclass(frozen=True)
class ParseWarning:
    message: str
    cell: Optional[Cell] = None

    def __str__(self) -> str:
        return self.message if self.cell is None else f"{self.message} at {self.cell}"


def _most_frequent(counts: Counter, allowed: Iterable[str], order: str) -> Optional[str]:
    """Most frequent symbol from ``allowed``; ties go to the first occurrence in ``order``."""
    allowed = set(allowed)
    best, best_n = None, 0
    for s in dict.fromkeys(order):
        if s in allowed and counts[s] > best_n:
            best, best_n = s, counts[s]
    return best


def fill_symbol(w: WorldGrid, legend: TileLegend) -> str:
    """Symbol used to fill removed or padded cells.

    Most frequent walkable symbol in the grid, else the most frequent
    non-character symbol in the grid, else a legend fallback.
    """
    flat = "".join(w.rows)
    counts = Counter(flat)
    chars = legend.character_symbols
    s = _most_frequent(counts, legend.walkable - chars, flat)
    if s is None:
        s = _most_frequent(counts, set(counts) - chars, flat)
    if s is None:
        pool = sorted(legend.walkable - chars) or sorted(set(legend.entries) - chars)
        s = pool[0] if pool else "."
    return s


def locate_symbol(w: WorldGrid, s: str) -> Optional[Cell]:
    for r, row in enumerate(w.rows):
        c = row.find(s)
        if c >= 0:
            return (r, c)
    return None


def _candidate_runs(lines: list[str], symbols: set[str], threshold: float) -> list[list[str]]:
    runs, cur = [], []
    for line in lines:
        s = line.strip()
        if s and sum(ch in symbols for ch in s) / len(s) >= threshold:
            cur.append(s)
        else:
            if cur:
                runs.append(cur)
            cur = []
    if cur:
        runs.append(cur)
    return runs


def extract_grid_block(raw: str, symbols: set[str], threshold: float = GRID_LINE_THRESHOLD) -> list[str]:
    blocks = _FENCE_RE.findall(raw)
    if blocks:
        rows = [line.strip() for line in blocks[-1].splitlines() if line.strip()]
        if rows:
            return rows
    runs = [r for r in _candidate_runs(raw.splitlines(), symbols, threshold) if len(r) >= 2]
    if not runs:
        raise NoGridFound("no map block found in model output")
    # tallest run wins, later runs win ties
    return max(reversed(runs), key=len)


def parse_grid(raw_llm_text: str, legend: TileLegend,
               threshold: float = GRID_LINE_THRESHOLD) -> tuple[WorldGrid, list[ParseWarning]]:
    if not raw_llm_text.strip():
        raise NoGridFound("empty model output")
    rows = extract_grid_block(raw_llm_text, set(legend.entries), threshold)
    flat = "".join(rows)
    counts = Counter(flat)
    chars = legend.character_symbols
    sub = _most_frequent(counts, legend.walkable - chars, flat)
    if sub is None:
        sub = _most_frequent(counts, set(legend.entries) - chars, flat)
    if sub is None:
        pool = sorted(legend.walkable - chars) or sorted(set(legend.entries) - chars)
        sub = pool[0] if pool else "."
    warnings = []
    fixed = []
    for r, row in enumerate(rows):
        out = []
        for c, ch in enumerate(row):
            if ch not in legend.entries:
                warnings.append(ParseWarning(f"unknown symbol {ch!r} replaced by {sub!r}", (r, c)))
                ch = sub
            out.append(ch)
        fixed.append("".join(out))
    return WorldGrid(tuple(fixed)), warnings


def algorithmic_fixes(w: WorldGrid, legend: TileLegend) -> WorldGrid:
    """Remove duplicate characters (keep the top-left one) and pad ragged rows."""
    chars = legend.character_symbols
    fill = fill_symbol(w, legend)
    seen: set[str] = set()
    rows = []
    for row in w.rows:
        out = []
        for ch in row:
            if ch in chars:
                if ch in seen:
                    ch = fill
                else:
                    seen.add(ch)
            out.append(ch)
        rows.append("".join(out))

    width = max(len(r) for r in rows)
    padded = []
    for row in rows:
        if len(row) < width:
            pad = next((ch for ch in reversed(row) if ch not in chars), fill)
            row = row + pad * (width - len(row))
        padded.append(row)
    return WorldGrid(tuple(padded))


def dumps(obj) -> str:
    """Canonical JSON used for artifacts and prompt context."""
    return json.dumps(obj, indent=2, sort_keys=True, ensure_ascii=False)
