"""Per-episode agent rewards on one generated world.

Runs the agent for several episodes, each fed all earlier traces, and prints
the reward per episode. Without a provider the scripted demo world is used
with two reference policies: one that walks half of every path, and the
shortest-path oracle.
"""

import argparse
import json
from pathlib import Path

from storyworld import demo
from storyworld.agent import LLMPolicy, OraclePolicy, reward_experiment
from storyworld.llm import ProviderConfig, ProviderKind
from storyworld.worldmodel import CharacterInfo, Goal, Role, TileLegend, WorldGrid, locate_symbol


def load_run(run_dir: Path, round_index: int):
    ext = json.loads((run_dir / "extractions.json").read_text())
    legend = TileLegend.from_dict(ext["legend"])
    chars = [CharacterInfo.from_dict(c) for c in ext["characters"]]
    world = WorldGrid.from_text((run_dir / f"round_{round_index}" / "world.txt").read_text())
    goals = [Goal.from_dict(g) for g in
             json.loads((run_dir / f"round_{round_index}" / "goal_positions.json").read_text())]
    goals = [g if g.position else Goal(g.index, g.description, g.target_symbol, g.target_kind,
                                        locate_symbol(world, g.target_symbol)) for g in goals]
    hero = next(c.symbol for c in chars if c.role is Role.PROTAGONIST)
    return world, goals, legend, hero


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--run-dir", help="artifact directory of a finished run")
    p.add_argument("--round", type=int, default=-1)
    p.add_argument("--episodes", type=int, default=5)
    p.add_argument("--provider", choices=["openai", "anthropic"])
    p.add_argument("--model", default="")
    p.add_argument("--endpoint", default="")
    args = p.parse_args()

    if args.run_dir:
        run_dir = Path(args.run_dir)
        rounds = sorted(run_dir.glob("round_*"))
        idx = args.round if args.round >= 0 else len(rounds) - 1
        world, goals, legend, hero = load_run(run_dir, idx)
    else:
        world = demo.repaired_world(0)
        goals, legend, hero = demo.placed_goals(world), demo.legend(), "@"

    policies = {"half-path": demo.HalfPathPolicy(), "oracle": OraclePolicy()}
    if args.provider:
        kind = ProviderKind.OPENAI if args.provider == "openai" else ProviderKind.ANTHROPIC
        policies = {"llm": LLMPolicy(ProviderConfig(kind, args.model, args.endpoint))}
    for name, policy in policies.items():
        rewards = reward_experiment(world, goals, legend, policy, args.episodes, protagonist=hero)
        print(name, " ".join(f"{r:.4f}" for r in rewards))


if __name__ == "__main__":
    main()
