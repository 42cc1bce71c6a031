"""Sweep story paragraphs, objective count and important-tile cap.

Each point is a (paragraphs, objectives, important_cap) triple; every point
gets its own row in the batch report.
"""

import argparse
from pathlib import Path

from storyworld import demo
from storyworld.batch import BatchSpec, cmd_batch
from storyworld.llm import MockScript, ProviderConfig, ProviderKind
from storyworld.pipeline import RunConfig

DEFAULT_POINTS = [(3, 4, 8), (4, 8, 15), (6, 12, 20)]


def point(text: str) -> tuple[int, int, int]:
    p, o, i = (int(x) for x in text.split(","))
    return p, o, i


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default="runs/sweep")
    ap.add_argument("--runs", type=int, default=10)
    ap.add_argument("--point", type=point, action="append", help="paragraphs,objectives,important_cap")
    ap.add_argument("--provider", choices=["openai", "anthropic"])
    ap.add_argument("--model", default="")
    args = ap.parse_args()

    if args.provider:
        kind = ProviderKind.OPENAI if args.provider == "openai" else ProviderKind.ANTHROPIC
        provider = ProviderConfig(kind, args.model)
    else:
        provider = ProviderConfig(ProviderKind.MOCK, mock=MockScript(demo.golden_script()))
    spec = BatchSpec(RunConfig(provider=provider), Path(args.out), runs=args.runs,
                     sweep=args.point or DEFAULT_POINTS)
    print(cmd_batch(spec).table(), end="")


if __name__ == "__main__":
    main()
