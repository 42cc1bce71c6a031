"""Write the scripted mock replies used by the demo config and the tests."""

import argparse
from pathlib import Path

from storyworld import demo


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--out", default=str(Path(__file__).resolve().parent.parent / "fixtures"))
    p.add_argument("--rounds", type=int, default=3)
    p.add_argument("--episodes", type=int, default=2)
    args = p.parse_args()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "golden_script.json").write_text(
        demo.script_to_json(demo.golden_script(args.rounds, args.episodes)), encoding="utf-8")
    (out / "direct_script.json").write_text(demo.script_to_json(demo.direct_script(args.rounds)), encoding="utf-8")
    print(f"wrote golden_script.json and direct_script.json to {out}")


if __name__ == "__main__":
    main()
