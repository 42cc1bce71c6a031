import math
import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import bfs_distance, differing_cells, goal, grids, hero, mock_provider, open_world, simple_legend
from storyworld.evaluation import (
    DEFAULT_NOVELTY_THRESHOLD,
    EmptyImportantSet,
    EvaluationReport,
    MissingProtagonist,
    SearchProblem,
    astar,
    astar_search,
    char_tile_accuracy,
    chain_paths,
    coherence_judge,
    evaluate_world,
    important_tile_accuracy,
    is_novel,
    novelty_distance,
    playability,
)
from storyworld.llm import ParseFailure
from storyworld.worldmodel import CharacterInfo, Role, TileLegend, WorldGrid

DOT = frozenset(".")


# ---- A*

def test_open_grid_path():
    path = astar(SearchProblem(open_world(3, 3), DOT, (0, 0), (2, 2)), 100)
    assert len(path) == 5 and path[0] == (0, 0) and path[-1] == (2, 2)


def test_wall_with_gap_matches_bfs():
    rows = (".....", "..#..", "..#..", "..#..", "..#..")
    w = WorldGrid(rows)
    path = astar(SearchProblem(w, DOT, (4, 0), (4, 4)), 100)
    assert len(path) - 1 == bfs_distance(rows, DOT, (4, 0), (4, 4)) == 12


def test_enclosed_goal_absent():
    w = WorldGrid((".....", ".###.", ".#X#.", ".###.", "....."))
    assert astar(SearchProblem(w, DOT, (0, 0), (2, 2)), 1000) is None


def test_goal_cell_passable_even_if_not_walkable():
    w = WorldGrid(("..D",))
    assert astar(SearchProblem(w, DOT, (0, 0), (0, 2)), 10) == [(0, 0), (0, 1), (0, 2)]


def test_budget_exhaustion():
    w = open_world(10, 10)
    path, n = astar_search(SearchProblem(w, DOT, (0, 0), (9, 9)), 5)
    assert path is None and n == 5
    with pytest.raises(ValueError):
        astar_search(SearchProblem(w, DOT, (0, 0), (9, 9)), 0)


def test_out_of_bounds_problem_rejected():
    with pytest.raises(ValueError):
        SearchProblem(open_world(2, 2), DOT, (0, 0), (5, 5))


@st.composite
def maze(draw):
    rows = draw(grids(".#", 1, 10, 1, 10))
    h, w = len(rows), len(rows[0])
    start = (draw(st.integers(0, h - 1)), draw(st.integers(0, w - 1)))
    goal_ = (draw(st.integers(0, h - 1)), draw(st.integers(0, w - 1)))
    return rows, start, goal_


@given(maze())
@settings(max_examples=300)
def test_astar_matches_bfs(case):
    rows, start, goal_ = case
    path = astar(SearchProblem(WorldGrid(tuple(rows)), DOT, start, goal_), 10_000)
    d = bfs_distance(rows, DOT, start, goal_)
    if d is None:
        assert path is None
        return
    assert len(path) - 1 == d
    assert path[0] == start and path[-1] == goal_
    for a, b in zip(path, path[1:]):
        assert abs(a[0] - b[0]) + abs(a[1] - b[1]) == 1
    assert all(rows[r][c] == "." for r, c in path[1:-1])


@given(maze(), st.integers(1, 40), st.integers(0, 40))
def test_astar_budget_monotone(case, b1, extra):
    rows, start, goal_ = case
    p = SearchProblem(WorldGrid(tuple(rows)), DOT, start, goal_)
    path1, used = astar_search(p, b1)
    if path1 is not None:
        assert astar(p, b1 + extra) == path1
    assert used <= b1


# ---- playability

LEG = simple_legend(".", "@", "#abc")


def test_corridor_sum_of_gaps():
    w = WorldGrid(("@..a...b.c",))
    goals = [goal(0, "a", pos=(0, 3)), goal(1, "b", pos=(0, 7)), goal(2, "c", pos=(0, 9))]
    assert playability(w, goals, LEG, 1000, "@") == (True, 3 + 4 + 2)


def test_corridor_out_of_order_goals_pass_through_targets():
    # the second goal sits behind the first target; story order still walks there
    w = WorldGrid(("@.b.a",))
    goals = [goal(0, "a", pos=(0, 4)), goal(1, "b", pos=(0, 2))]
    assert playability(w, goals, LEG, 1000, "@") == (True, 4 + 2)


def test_walled_goal_unplayable():
    w = WorldGrid(("@..#a",))
    assert playability(w, [goal(0, "a", pos=(0, 4))], LEG, 1000, "@") == (False, None)


def test_zero_length_leg():
    w = WorldGrid(("@a.",))
    goals = [goal(0, "a", pos=(0, 1)), goal(1, "a", pos=(0, 1))]
    assert playability(w, goals, LEG, 1000, "@") == (True, 1)


def test_missing_protagonist():
    with pytest.raises(MissingProtagonist):
        playability(WorldGrid(("..a",)), [goal(0, "a", pos=(0, 2))], LEG, 1000, "@")


def test_shared_budget_across_legs():
    w = WorldGrid(("@" + "." * 8 + "a" + "." * 8 + "b",))
    goals = [goal(0, "a", pos=(0, 9)), goal(1, "b", pos=(0, 18))]
    full = chain_paths(w, goals, LEG, 1000, "@")
    assert full.playable and full.expansions == 10 + 10
    assert not chain_paths(w, goals, LEG, 15, "@").playable


def test_nearest_order_is_shorter_or_equal():
    w = WorldGrid(("b...@...a",))
    goals = [goal(0, "a", pos=(0, 8)), goal(1, "b", pos=(0, 0))]
    story = chain_paths(w, goals, LEG, 1000, "@")
    nearest = chain_paths(w, goals, LEG, 1000, "@", order="nearest")
    assert story.path_length == 4 + 8
    assert nearest.path_length == 4 + 8 and nearest.order == [0, 1]


def test_no_goals_is_unplayable():
    assert playability(WorldGrid(("@..",)), [], LEG, 1000, "@") == (False, None)


@given(st.integers(0, 2**31), st.integers(1, 300), st.integers(0, 300))
@settings(max_examples=60)
def test_playability_budget_monotone(seed, b1, extra):
    rng = random.Random(seed)
    rows = ["".join("#" if rng.random() < 0.3 else "." for _ in range(12)) for _ in range(12)]
    cells = rng.sample([(r, c) for r in range(12) for c in range(12)], 4)
    rows = [list(r) for r in rows]
    rows[cells[0][0]][cells[0][1]] = "@"
    for (r, c), s in zip(cells[1:], "abc"):
        rows[r][c] = s
    w = WorldGrid(tuple("".join(r) for r in rows))
    goals = [goal(i, s, pos=p) for i, (s, p) in enumerate(zip("abc", cells[1:]))]
    if playability(w, goals, LEG, b1, "@")[0]:
        assert playability(w, goals, LEG, b1 + extra, "@")[0]


# ---- novelty

def test_novelty_examples():
    a = WorldGrid(("ab", "ba"))
    assert novelty_distance(a, a) == 0.0
    b = WorldGrid(("ab", "ba", "aa"))
    assert novelty_distance(a, b) == pytest.approx(2.0)
    c = WorldGrid(("aaaaaaaa", "bbbbbbbb"))
    d = WorldGrid(("bbbbbbbb", "bbbbbbbb"))
    assert novelty_distance(c, d) == pytest.approx(4.0)


@given(grids("abc#.", 1, 6, 1, 6), grids("abc#.", 1, 6, 1, 6))
def test_novelty_matches_cell_count_oracle(a, b):
    d = novelty_distance(WorldGrid(tuple(a)), WorldGrid(tuple(b)))
    assert d == pytest.approx(math.sqrt(2 * differing_cells(a, b)))
    assert d == pytest.approx(novelty_distance(WorldGrid(tuple(b)), WorldGrid(tuple(a))))


@given(grids("abc", 2, 5, 2, 5), st.permutations("abc"))
def test_novelty_relabel_invariant(a, perm):
    table = str.maketrans("abc", "".join(perm))
    b = [r[::-1] for r in a]
    d1 = novelty_distance(WorldGrid(tuple(a)), WorldGrid(tuple(b)))
    d2 = novelty_distance(WorldGrid(tuple(r.translate(table) for r in a)),
                          WorldGrid(tuple(r.translate(table) for r in b)))
    assert d1 == pytest.approx(d2)


def test_is_novel_rules():
    w = WorldGrid(("aaaaaaaa", "bbbbbbbb"))
    assert is_novel(w, [])
    assert not is_novel(w, [w])
    other = WorldGrid(("bbbbbbbb", "bbbbbbbb"))
    assert is_novel(w, [other], 4.0)
    assert not is_novel(w, [other], 4.0001)
    assert DEFAULT_NOVELTY_THRESHOLD == 4.0
    with pytest.raises(ValueError):
        is_novel(w, [], 0)


# ---- accuracy

def _chars(symbols):
    return [CharacterInfo(f"c{i}", "someone", Role.PROTAGONIST if i == 0 else Role.NON_PLAYER, s)
            for i, s in enumerate(symbols)]


def test_char_accuracy():
    w = WorldGrid(("ABC.",))
    assert char_tile_accuracy(w, _chars("ABCD")) == 0.75
    assert char_tile_accuracy(WorldGrid(("..",)), _chars("AB")) == 0.0
    assert char_tile_accuracy(w, _chars("AB")) == 1.0


def test_important_accuracy():
    syms = "ABCDEFGHIJKLMNO"
    leg = TileLegend({s: s for s in syms + "."}, important=frozenset(syms))
    w = WorldGrid((syms[:12] + "...",))
    assert important_tile_accuracy(w, leg) == pytest.approx(0.8)
    assert important_tile_accuracy(WorldGrid(("...",)), leg) == 0.0
    with pytest.raises(EmptyImportantSet):
        important_tile_accuracy(w, TileLegend({".": "g"}))


@given(st.text("ABCDEFxyz.", min_size=1, max_size=30), st.text("xyz", max_size=10))
def test_accuracies_bounded_and_monotone(row, extra):
    leg = TileLegend({s: s for s in "ABCDEF."}, important=frozenset("ABCD"))
    chars = _chars("ABEF")
    w1, w2 = WorldGrid((row,)), WorldGrid((row + extra + "A",))
    for f, arg in ((char_tile_accuracy, chars), (important_tile_accuracy, leg)):
        a, b = f(w1, arg), f(w2, arg)
        assert 0.0 <= a <= b <= 1.0


# ---- judge and report

def test_coherence_judge_parses_and_clamps():
    leg = TileLegend({".": "grass"})
    w = WorldGrid(("..",))
    assert coherence_judge("story", leg, w, mock_provider([("CoherenceJudge", "Score: 85")])) == 85
    assert coherence_judge("story", leg, w, mock_provider([("CoherenceJudge", "120")])) == 100
    with pytest.raises(ParseFailure):
        coherence_judge("story", leg, w, mock_provider([("CoherenceJudge", "lovely")] * 4))


def test_evaluate_world_report():
    leg = simple_legend(".", "@", "#k", important="k#")
    w = WorldGrid(("@..k", "...."))
    prior = [WorldGrid(("....", "...."))]
    r = evaluate_world(w, leg, [hero()], [goal(0, "k", pos=(0, 3))], prior, budget=1000)
    assert r.playable and r.path_length == 3
    assert r.novelty_distance == pytest.approx(2.0) and not r.is_novel
    assert not r.novel_and_playable
    assert r.char_tile_accuracy == 1.0 and r.important_tile_accuracy == 0.5
    assert r.astar_iterations_used <= 1000
    assert EvaluationReport.from_dict(r.to_dict()) == r
    assert "coherence" not in r.to_dict(include_coherence=False)
