"""World metrics: A* playability and path length, novelty, tile accuracies and the LLM coherence judge."""

from __future__ import annotations

import heapq
import math
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np

from .llm import ProviderConfig, Step, Transcript, run_step
from .worldmodel import Cell, CharacterInfo, Goal, TileLegend, WorldGrid, fill_symbol, locate_symbol

DEFAULT_ASTAR_BUDGET = 1000
# eight differing cells under one-hot encoding
DEFAULT_NOVELTY_THRESHOLD = math.sqrt(2 * 8)


class MissingProtagonist(ValueError):
    pass


class EmptyImportantSet(ValueError):
    pass


@dataclass
class EvaluationReport:
    playable: bool = False
    path_length: Optional[int] = None
    novelty_distance: Optional[float] = None
    is_novel: bool = True
    novel_and_playable: bool = False
    char_tile_accuracy: float = 0.0
    important_tile_accuracy: float = 0.0
    coherence: Optional[int] = None
    agent_reward: Optional[float] = None
    astar_iterations_used: int = 0

    def __post_init__(self):
        assert not self.novel_and_playable or (self.is_novel and self.playable)

    def to_dict(self, include_coherence: bool = True) -> dict:
        d = asdict(self)
        if d["novelty_distance"] is not None:
            d["novelty_distance"] = round(d["novelty_distance"], 10)
        if not include_coherence:
            d.pop("coherence")
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "EvaluationReport":
        return cls(**{k: d[k] for k in cls.__dataclass_fields__ if k in d})


@dataclass(frozen=True)
class SearchProblem:
    grid: WorldGrid
    passable: frozenset[str]
    start: Cell
    goal: Cell

    def __post_init__(self):
        if not self.grid.in_bounds(self.start) or not self.grid.in_bounds(self.goal):
            raise ValueError("start and goal must lie inside the grid")


def manhattan(a: Cell, b: Cell) -> int:
    return abs(a[0] - b[0]) + abs(a[1] - b[1])


def astar_search(problem: SearchProblem, iteration_budget: int) -> tuple[Optional[list[Cell]], int]:
    """4-connected A* with a Manhattan heuristic.

    Returns ``(path, expansions)``; path is None when the goal is unreachable or
    more than ``iteration_budget`` nodes would need expanding. Frontier ties are
    broken by lower f, then lower row, then lower column.
    """
    if iteration_budget < 1:
        raise ValueError("iteration budget must be >= 1")
    grid, goal = problem.grid, problem.goal
    start = problem.start
    g = {start: 0}
    parent: dict[Cell, Optional[Cell]] = {start: None}
    heap = [(manhattan(start, goal), start[0], start[1])]
    closed: set[Cell] = set()
    expansions = 0
    while heap:
        _, r, c = heapq.heappop(heap)
        cur = (r, c)
        if cur in closed:
            continue
        if expansions >= iteration_budget:
            return None, expansions
        expansions += 1
        closed.add(cur)
        if cur == goal:
            path = []
            node: Optional[Cell] = cur
            while node is not None:
                path.append(node)
                node = parent[node]
            return path[::-1], expansions
        for nxt in ((r - 1, c), (r + 1, c), (r, c - 1), (r, c + 1)):
            if nxt in closed or not grid.in_bounds(nxt):
                continue
            if nxt != goal and grid[nxt] not in problem.passable:
                continue
            ng = g[cur] + 1
            if ng < g.get(nxt, math.inf):
                g[nxt] = ng
                parent[nxt] = cur
                heapq.heappush(heap, (ng + manhattan(nxt, goal), nxt[0], nxt[1]))
    return None, expansions


def astar(problem: SearchProblem, iteration_budget: int) -> Optional[list[Cell]]:
    return astar_search(problem, iteration_budget)[0]


def passable_symbols(legend: TileLegend, goals: Sequence[Goal]) -> frozenset[str]:
    return frozenset(legend.walkable) | {g.target_symbol for g in goals}


@dataclass
class ChainResult:
    playable: bool
    path_length: Optional[int]
    expansions: int
    legs: list[list[Cell]] = field(default_factory=list)
    order: list[int] = field(default_factory=list)


def chain_paths(world: WorldGrid, goals: Sequence[Goal], legend: TileLegend, budget: int,
                protagonist: str, order: str = "story") -> ChainResult:
    """A* legs from the protagonist through every goal, sharing one expansion budget.

    ``order="story"`` visits goals by index; ``"nearest"`` greedily picks the
    closest remaining goal by path length.
    """
    start = locate_symbol(world, protagonist) if protagonist else None
    if start is None:
        raise MissingProtagonist(f"protagonist symbol {protagonist!r} not in world")
    # the protagonist leaves its start cell, which then behaves as ground
    world = world.with_cell(start, fill_symbol(world, legend))
    goals = sorted(goals, key=lambda g: g.index)
    if not goals or any(g.position is None or not world.in_bounds(g.position) for g in goals):
        return ChainResult(False, None, 0)
    passable = passable_symbols(legend, goals)
    remaining = budget
    used = 0
    legs, visited = [], []
    pos = start
    todo = list(goals)
    while todo:
        if order == "nearest":
            best = None
            for goal in todo:
                if remaining <= 0:
                    break
                path, n = astar_search(SearchProblem(world, passable, pos, goal.position), remaining)
                remaining -= n
                used += n
                if path is not None and (best is None or len(path) < len(best[1])):
                    best = (goal, path)
            if best is None:
                return ChainResult(False, None, used, legs, visited)
            goal, path = best
        else:
            goal = todo[0]
            if remaining <= 0:
                return ChainResult(False, None, used, legs, visited)
            path, n = astar_search(SearchProblem(world, passable, pos, goal.position), remaining)
            remaining -= n
            used += n
            if path is None:
                return ChainResult(False, None, used, legs, visited)
        todo.remove(goal)
        legs.append(path)
        visited.append(goal.index)
        pos = goal.position
    return ChainResult(True, sum(len(p) - 1 for p in legs), used, legs, visited)


def playability(world: WorldGrid, goals: Sequence[Goal], legend: TileLegend, budget: int,
                protagonist: str, order: str = "story") -> tuple[bool, Optional[int]]:
    res = chain_paths(world, goals, legend, budget, protagonist, order)
    return res.playable, res.path_length


_PAD = "\x00"


def _one_hot(rows: list[str], alphabet: dict[str, int]) -> np.ndarray:
    idx = np.array([[alphabet[ch] for ch in row] for row in rows], dtype=np.int64)
    out = np.zeros(idx.shape + (len(alphabet),), dtype=np.float64)
    np.put_along_axis(out, idx[..., None], 1.0, axis=-1)
    return out


def novelty_distance(a: WorldGrid, b: WorldGrid) -> float:
    """Euclidean distance between one-hot cell encodings of two grids.

    Both grids are padded to the common bounding box with a padding category of
    its own, so each cell that differs (including present-vs-padding) adds 2 to
    the squared distance.
    """
    h = max(a.height, b.height)
    w = max(a.width, b.width)

    def pad(g: WorldGrid) -> list[str]:
        rows = [r.ljust(w, _PAD) for r in g.rows]
        return rows + [_PAD * w] * (h - len(rows))

    pa, pb = pad(a), pad(b)
    alphabet = {s: i for i, s in enumerate(sorted(set("".join(pa)) | set("".join(pb))))}
    return float(np.linalg.norm(_one_hot(pa, alphabet) - _one_hot(pb, alphabet)))


def min_novelty_distance(w: WorldGrid, prior: Sequence[WorldGrid]) -> Optional[float]:
    return min((novelty_distance(w, p) for p in prior), default=None)


def is_novel(w: WorldGrid, prior: Sequence[WorldGrid], threshold: float = DEFAULT_NOVELTY_THRESHOLD) -> bool:
    if threshold <= 0:
        raise ValueError("novelty threshold must be positive")
    return all(novelty_distance(w, p) >= threshold for p in prior)


def char_tile_accuracy(world: WorldGrid, characters: Sequence[CharacterInfo]) -> float:
    if not characters:
        raise ValueError("no characters to place")
    present = world.symbols()
    return sum(1 for c in characters if c.symbol in present) / len(characters)


def important_tile_accuracy(world: WorldGrid, legend: TileLegend) -> float:
    if not legend.important:
        raise EmptyImportantSet("legend has no important tiles")
    return len(legend.important & world.symbols()) / len(legend.important)


def coherence_judge(story: str, legend: TileLegend, world: WorldGrid, provider: ProviderConfig,
                    transcript: Optional[Transcript] = None, **kw) -> int:
    ctx = {"story": story, "legend": legend, "world": world}
    return run_step(provider, Step.COHERENCE_JUDGE, ctx, transcript=transcript, **kw).value


def evaluate_world(world: WorldGrid, legend: TileLegend, characters: Sequence[CharacterInfo],
                   goals: Sequence[Goal], prior: Sequence[WorldGrid] = (), *,
                   budget: int = DEFAULT_ASTAR_BUDGET,
                   novelty_threshold: float = DEFAULT_NOVELTY_THRESHOLD,
                   order: str = "story") -> EvaluationReport:
    """All metrics that need no LLM."""
    protagonist = next((c.symbol for c in characters if c.role.value == "Protagonist"), "")
    try:
        res = chain_paths(world, goals, legend, budget, protagonist, order)
    except MissingProtagonist:
        res = ChainResult(False, None, 0)
    dist = min_novelty_distance(world, prior)
    novel = is_novel(world, prior, novelty_threshold)
    return EvaluationReport(
        playable=res.playable,
        path_length=res.path_length,
        novelty_distance=dist,
        is_novel=novel,
        novel_and_playable=novel and res.playable,
        char_tile_accuracy=char_tile_accuracy(world, characters) if characters else 0.0,
        important_tile_accuracy=important_tile_accuracy(world, legend) if legend.important else 0.0,
        astar_iterations_used=res.expansions,
    )
