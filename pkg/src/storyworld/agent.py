"""Action-sequence agent: environment stepping, objective rewards and the episode feedback loop."""

from __future__ import annotations

import logging
import re
import statistics
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Callable, Optional, Protocol, Sequence, Union

from .evaluation import SearchProblem, astar_search, passable_symbols
from .llm import ParseFailure, ProviderConfig, Step, Transcript, run_step
from .worldmodel import Cell, Goal, TargetKind, TileLegend, WorldGrid, dumps, fill_symbol, locate_symbol

log = logging.getLogger(__name__)

MAX_ACTIONS = 256
ACTION_REPROMPT_BUDGET = 3


class ActionParseFailure(ParseFailure):
    pass


class Action(str, Enum):
    MOVE_UP = "move up"
    MOVE_DOWN = "move down"
    MOVE_LEFT = "move left"
    MOVE_RIGHT = "move right"
    PICK_OBJECT = "pick object"
    HIT_ENEMY = "hit enemy"

    @classmethod
    def parse(cls, token: str) -> "Action":
        norm = re.sub(r"[\s_\-]+", " ", token.strip().lower()).strip()
        return cls(norm)


_DELTAS = {
    Action.MOVE_UP: (-1, 0),
    Action.MOVE_DOWN: (1, 0),
    Action.MOVE_LEFT: (0, -1),
    Action.MOVE_RIGHT: (0, 1),
}
_INTERACTIONS = {Action.PICK_OBJECT: TargetKind.PICK_OBJECT, Action.HIT_ENEMY: TargetKind.HIT_ENEMY}
_FENCE_RE = re.compile(r"```[^\n`]*\n(.*?)```", re.DOTALL)
_BULLET_RE = re.compile(r"^\s*(?:[-*]|\d+[.)])\s*")


def parse_actions(text: str) -> tuple[list[Action], list[str]]:
    """Parse newline- or comma-separated action names; unknown tokens are skipped."""
    blocks = _FENCE_RE.findall(text)
    body = blocks[-1] if blocks else text
    actions, warnings = [], []
    for token in re.split(r"[\n,]", body):
        token = _BULLET_RE.sub("", token).strip().strip("\"'")
        if not token:
            continue
        try:
            actions.append(Action.parse(token))
        except ValueError:
            warnings.append(f"skipped unknown action {token!r}")
    if not blocks and not actions and text.strip():
        raise ActionParseFailure("no actions found; reply with action names inside one fenced block")
    if len(actions) > MAX_ACTIONS:
        warnings.append(f"{len(actions)} actions truncated to {MAX_ACTIONS}")
        actions = actions[:MAX_ACTIONS]
    return actions, warnings


def path_to_actions(path: Sequence[Cell]) -> list[Action]:
    inverse = {d: a for a, d in _DELTAS.items()}
    return [inverse[(b[0] - a[0], b[1] - a[1])] for a, b in zip(path, path[1:])]


def interaction_for(goal: Goal) -> list[Action]:
    if goal.target_kind is TargetKind.PICK_OBJECT:
        return [Action.PICK_OBJECT]
    if goal.target_kind is TargetKind.HIT_ENEMY:
        return [Action.HIT_ENEMY]
    return []


@dataclass(frozen=True)
class AgentState:
    position: Cell
    world: WorldGrid
    completed_goals: frozenset[int] = frozenset()
    current_goal: int = 0


def _goal(goals: Sequence[Goal], index: int) -> Optional[Goal]:
    return next((g for g in goals if g.index == index), None)


def step(state: AgentState, action: Action, legend: TileLegend, goals: Sequence[Goal],
         passable: Optional[frozenset[str]] = None) -> AgentState:
    """Apply one action. Blocked moves and failed interactions are no-ops."""
    if passable is None:
        passable = passable_symbols(legend, goals)
    goal = _goal(goals, state.current_goal)
    done = goal is not None and goal.index in state.completed_goals

    if action in _DELTAS:
        dr, dc = _DELTAS[action]
        nxt = (state.position[0] + dr, state.position[1] + dc)
        if not state.world.in_bounds(nxt) or state.world[nxt] not in passable:
            return state
        state = replace(state, position=nxt)
        if (goal is not None and not done and goal.target_kind is TargetKind.REACH_TILE
                and nxt == goal.position):
            state = replace(state, completed_goals=state.completed_goals | {goal.index})
        return state

    if goal is None or done or goal.position is None or goal.target_kind is not _INTERACTIONS[action]:
        return state
    pr, pc = state.position
    if abs(pr - goal.position[0]) + abs(pc - goal.position[1]) > 1:
        return state
    world = state.world.with_cell(goal.position, fill_symbol(state.world, legend))
    return replace(state, world=world, completed_goals=state.completed_goals | {goal.index})


def objective_reward(d_start: int, d_end: int, completed: bool) -> float:
    """1.0 on completion; otherwise normalized progress, or a bounded regret in (-1, 0) when farther away."""
    if d_start < 0 or d_end < 0:
        raise ValueError("distances must be non-negative")
    if completed:
        return 1.0
    scale = max(d_start, 1)
    if d_end <= d_start:
        # standing on an uncompleted objective counts as half a move away,
        # which keeps 1.0 reserved for completion
        end = 0.5 if d_end == 0 and d_start > 0 else d_end
        return (d_start - end) / scale
    # regret: linear while close, then bending towards -1 without reaching it,
    # so moving further away always costs something
    x = (d_end - d_start) / scale
    return -x if x <= 0.5 else -(1.0 - 0.25 / x)


def path_distance(world: WorldGrid, passable: frozenset[str], a: Cell, b: Cell) -> int:
    """A* move count; unreachable counts as 2 * (height + width)."""
    budget = world.height * world.width + 1
    path, _ = astar_search(SearchProblem(world, passable, a, b), budget)
    if path is None:
        return 2 * (world.height + world.width)
    return len(path) - 1


@dataclass
class ObjectiveTrace:
    goal_index: int
    actions: list[Action]
    reward: float
    completed: bool
    d_start: int
    d_end: int

    def to_dict(self) -> dict:
        return {"goal_index": self.goal_index, "actions": [a.value for a in self.actions],
                "reward": self.reward, "completed": self.completed,
                "d_start": self.d_start, "d_end": self.d_end}


@dataclass
class EpisodeTrace:
    per_objective: list[ObjectiveTrace] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)

    @property
    def episode_reward(self) -> float:
        if not self.per_objective:
            return 0.0
        return statistics.fmean(o.reward for o in self.per_objective)

    def to_dict(self) -> dict:
        return {"episode_reward": self.episode_reward,
                "per_objective": [o.to_dict() for o in self.per_objective],
                "warnings": list(self.warnings)}


@dataclass
class AgentRequest:
    world: WorldGrid
    legend: TileLegend
    position: Cell
    goal: Goal
    previous_actions: Optional[list[Action]] = None
    previous_reward: Optional[float] = None
    prior_traces: Sequence[EpisodeTrace] = ()
    episode: int = 0
    error: Optional[str] = None
    passable: frozenset[str] = frozenset()


PolicyOutput = Union[str, Sequence[Action]]


class Policy(Protocol):
    def __call__(self, request: AgentRequest) -> PolicyOutput: ...


def _prior_summary(traces: Sequence[EpisodeTrace]) -> list[dict]:
    return [{"episode": i, **t.to_dict()} for i, t in enumerate(traces)]


class LLMPolicy:
    """Policy backed by a chat provider through the AgentActions step."""

    def __init__(self, provider: ProviderConfig, transcript: Optional[Transcript] = None, seed=None):
        self.provider = provider
        self.transcript = transcript
        self.seed = seed

    def __call__(self, request: AgentRequest) -> list[Action]:
        ctx = {"world": request.world, "legend": request.legend}
        if request.previous_actions is not None:
            ctx["previous_actions"] = "\n".join(a.value for a in request.previous_actions)
            ctx["previous_reward"] = f"{request.previous_reward:.4f}"
        if request.prior_traces:
            ctx["prior_episodes"] = dumps(_prior_summary(request.prior_traces))
        g = request.goal
        params = {"position": f"({request.position[0]}, {request.position[1]})",
                  "objective_position": f"({g.position[0]}, {g.position[1]})",
                  "objective": f"{g.description} [{g.target_kind.value} '{g.target_symbol}']"}
        try:
            res = run_step(self.provider, Step.AGENT_ACTIONS, ctx, params,
                           reprompt_budget=ACTION_REPROMPT_BUDGET, transcript=self.transcript,
                           seed=self.seed)
        except ParseFailure as e:
            raise ActionParseFailure(str(e)) from e
        actions = res.value
        for w in res.warnings:
            log.warning(w)
        return actions


class ScriptedPolicy:
    """Replays fixed replies in order (text or action lists), cycling when it runs out."""

    def __init__(self, replies: Sequence[PolicyOutput]):
        self.replies = list(replies)
        self.calls = 0

    def __call__(self, request: AgentRequest) -> PolicyOutput:
        out = self.replies[self.calls % len(self.replies)]
        self.calls += 1
        return out


class OraclePolicy:
    """Shortest-path policy: A* moves to the objective followed by its interaction."""

    def __call__(self, request: AgentRequest) -> list[Action]:
        passable = request.passable or passable_symbols(request.legend, [request.goal])
        budget = request.world.height * request.world.width + 1
        path, _ = astar_search(SearchProblem(request.world, passable, request.position,
                                             request.goal.position), budget)
        if path is None:
            return []
        return path_to_actions(path) + interaction_for(request.goal)


def _show_agent(world: WorldGrid, pos: Cell, symbol: str) -> WorldGrid:
    return world.with_cell(pos, symbol) if symbol else world


def _policy_actions(policy: Policy, request: AgentRequest, budget: int) -> tuple[list[Action], list[str]]:
    for _ in range(budget + 1):
        out = policy(request)
        if not isinstance(out, str):
            return list(out)[:MAX_ACTIONS], []
        try:
            return parse_actions(out)
        except ActionParseFailure as e:
            request = replace(request, error=str(e))
    raise ActionParseFailure(f"policy gave no parseable actions after {budget + 1} attempts")


def start_state(world: WorldGrid, legend: TileLegend, protagonist: str) -> AgentState:
    pos = locate_symbol(world, protagonist)
    if pos is None:
        raise ValueError(f"protagonist symbol {protagonist!r} not in world")
    # the agent position is tracked separately; its start cell becomes ground
    return AgentState(pos, world.with_cell(pos, fill_symbol(world, legend)))


def run_episode(world: WorldGrid, goals: Sequence[Goal], legend: TileLegend, policy: Policy,
                prior_traces: Sequence[EpisodeTrace] = (), *, protagonist: str,
                reprompt_budget: int = ACTION_REPROMPT_BUDGET) -> EpisodeTrace:
    goals = sorted(goals, key=lambda g: g.index)
    if any(g.position is None for g in goals):
        raise ValueError("every goal needs a position")
    passable = passable_symbols(legend, goals)
    state = start_state(world, legend, protagonist)
    trace = EpisodeTrace()
    prev_actions, prev_reward = None, None
    for goal in goals:
        state = replace(state, current_goal=goal.index)
        if goal.target_kind is TargetKind.REACH_TILE and state.position == goal.position:
            state = replace(state, completed_goals=state.completed_goals | {goal.index})
        d_start = path_distance(state.world, passable, state.position, goal.position)
        request = AgentRequest(_show_agent(state.world, state.position, protagonist), legend,
                               state.position, goal, prev_actions, prev_reward,
                               tuple(prior_traces), len(prior_traces), passable=passable)
        actions, warnings = _policy_actions(policy, request, reprompt_budget)
        trace.warnings += warnings
        for a in actions:
            state = step(state, a, legend, goals, passable)
        completed = goal.index in state.completed_goals
        d_end = path_distance(state.world, passable, state.position, goal.position)
        reward = objective_reward(d_start, d_end, completed)
        trace.per_objective.append(ObjectiveTrace(goal.index, actions, reward, completed, d_start, d_end))
        prev_actions, prev_reward = actions, reward
    return trace


def run_episodes(world: WorldGrid, goals: Sequence[Goal], legend: TileLegend, policy: Policy,
                 episodes: int, *, protagonist: str,
                 on_failure: Optional[Callable[[Exception], None]] = None,
                 retry_on: tuple[type[Exception], ...] = (ActionParseFailure,)) -> list[EpisodeTrace]:
    """Sequential episodes, each fed every earlier trace.

    When ``on_failure`` is given, an episode raising one of ``retry_on`` is
    reported to it and then retried; ``on_failure`` raises to give up.
    """
    if episodes < 1:
        raise ValueError("episodes must be >= 1")
    traces: list[EpisodeTrace] = []
    while len(traces) < episodes:
        try:
            traces.append(run_episode(world, goals, legend, policy, traces, protagonist=protagonist))
        except retry_on as e:
            if on_failure is None:
                raise
            on_failure(e)
    return traces


def reward_experiment(world: WorldGrid, goals: Sequence[Goal], legend: TileLegend, policy: Policy,
                      episodes: int, *, protagonist: str) -> list[float]:
    return [t.episode_reward for t in
            run_episodes(world, goals, legend, policy, episodes, protagonist=protagonist)]
