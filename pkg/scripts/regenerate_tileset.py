"""Rebuild the shipped placeholder tiles (PNG files plus CSV manifests)."""

import argparse

from storyworld.tiles import default_tileset_dir, make_default_tileset


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--out", default=str(default_tileset_dir()))
    args = p.parse_args()
    env, char = make_default_tileset(args.out)
    print(f"{len(env)} environment and {len(char)} character tiles in {args.out}")


if __name__ == "__main__":
    main()
