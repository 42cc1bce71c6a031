from collections import deque
from pathlib import Path

import pytest
from hypothesis import strategies as st

from storyworld import demo
from storyworld.llm import MockScript, ProviderConfig, ProviderKind
from storyworld.worldmodel import CharacterInfo, Goal, Role, TargetKind, TileLegend, WorldGrid

FIXTURES = Path(__file__).resolve().parent.parent / "fixtures"


def bfs_distance(rows, passable, start, goal):
    """Plain BFS move count (goal cell always enterable); None if unreachable."""
    h, w = len(rows), len(rows[0])
    seen = {start: 0}
    q = deque([start])
    while q:
        cur = q.popleft()
        if cur == goal:
            return seen[cur]
        r, c = cur
        for nr, nc in ((r + 1, c), (r - 1, c), (r, c + 1), (r, c - 1)):
            nxt = (nr, nc)
            if 0 <= nr < h and 0 <= nc < w and nxt not in seen and (nxt == goal or rows[nr][nc] in passable):
                seen[nxt] = seen[cur] + 1
                q.append(nxt)
    return None


def differing_cells(a, b):
    """Cells that differ once both grids are laid over their bounding box (None = missing)."""
    h = max(len(a), len(b))
    w = max(max(map(len, a)), max(map(len, b)))

    def at(g, r, c):
        return g[r][c] if r < len(g) and c < len(g[r]) else None

    return sum(at(a, r, c) != at(b, r, c) for r in range(h) for c in range(w))


def simple_legend(walkable=".", chars="@", others="#", important=""):
    entries = {s: f"tile {s}" for s in walkable + chars + others}
    return TileLegend(entries, walkable=frozenset(walkable), character_symbols=frozenset(chars),
                      important=frozenset(important))


def open_world(h, w, fill="."):
    return WorldGrid(tuple(fill * w for _ in range(h)))


def hero(symbol="@"):
    return CharacterInfo("Hero", "brave hero", Role.PROTAGONIST, symbol)


def goal(i, symbol, kind=TargetKind.REACH_TILE, pos=None):
    return Goal(i, f"goal {i}", symbol, kind, pos)


def mock_provider(script) -> ProviderConfig:
    return ProviderConfig(ProviderKind.MOCK, mock=MockScript(script))


@st.composite
def grids(draw, alphabet="ab.#", min_h=1, max_h=8, min_w=1, max_w=8):
    h = draw(st.integers(min_h, max_h))
    w = draw(st.integers(min_w, max_w))
    return [draw(st.text(alphabet, min_size=w, max_size=w)) for _ in range(h)]


@pytest.fixture
def demo_legend():
    return demo.legend()


@pytest.fixture
def golden_script():
    return demo.golden_script(3, 2)


def pytest_terminal_summary(terminalreporter):
    import sys
    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(results):
        title, ok, elapsed = results[n]
        terminalreporter.write_line(f"[{'PASS' if ok else 'FAIL'}] criterion {n:2d} ({elapsed}): {title}")
