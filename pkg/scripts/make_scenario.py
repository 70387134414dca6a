"""Write a bundled stand-in scenario (schema, raw files, config, truth model).

    python scripts/make_scenario.py toy scenarios/toy
    python scripts/make_scenario.py barcelona scenarios/bcn --seed 2024
"""
import argparse

from popsynth.scenario import SCENARIOS, write_scenario


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("name", choices=SCENARIOS)
    ap.add_argument("dest")
    ap.add_argument("--seed", type=int, default=None)
    args = ap.parse_args()
    kw = {} if args.seed is None else {"seed": args.seed}
    print(write_scenario(args.name, args.dest, **kw))


if __name__ == "__main__":
    main()
