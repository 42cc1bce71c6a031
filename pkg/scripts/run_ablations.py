"""Repeated runs for every generation mode, one report row per mode.

Uses the scripted mock provider unless --provider is given; with the mock the
numbers only exercise the protocol.
"""

import argparse
from pathlib import Path

from storyworld import demo
from storyworld.batch import BatchSpec, cmd_batch
from storyworld.llm import MockScript, ProviderConfig, ProviderKind
from storyworld.pipeline import Mode, RunConfig


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--out", default="runs/ablations")
    p.add_argument("--runs", type=int, default=10)
    p.add_argument("--rounds", type=int, default=3)
    p.add_argument("--provider", choices=["openai", "anthropic"])
    p.add_argument("--model", default="")
    p.add_argument("--endpoint", default="")
    p.add_argument("--modes", nargs="*", default=[m.value for m in Mode])
    args = p.parse_args()

    lines = []
    for mode in map(Mode, args.modes):
        if args.provider:
            kind = ProviderKind.OPENAI if args.provider == "openai" else ProviderKind.ANTHROPIC
            provider = ProviderConfig(kind, args.model, args.endpoint)
        else:
            provider = ProviderConfig(ProviderKind.MOCK,
                                      mock=MockScript(demo.mode_script(mode.value, args.rounds)))
        base = RunConfig(rounds=args.rounds, mode=mode, provider=provider)
        report = cmd_batch(BatchSpec(base, Path(args.out) / mode.value, runs=args.runs, mode=mode))
        row = report.table().splitlines()[1].split(" | ", 1)[1]
        lines.append(f"{mode.value} | {row}")
    print("mode | Novelty | Playability | Novel and Playable | Coherence | LLM Agent Rewards | Completion")
    print("\n".join(lines))


if __name__ == "__main__":
    main()
