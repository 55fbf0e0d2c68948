"""Channeling: one method, three returns (native, 200x200 RGB image, 44.1 kHz audio),
each on its own transport. Pass --disable N to drop a transport on the listener."""

import argparse

from wrapify.schemes import run_channel_scenario


def main() -> None:
    p = argparse.ArgumentParser()
    p.add_argument("--disable", type=int, action="append", choices=(0, 1, 2))
    p.add_argument("--seed", type=int, default=0)
    args = p.parse_args()
    report = run_channel_scenario(args.disable, seed=args.seed)
    for slot in report.details["slots"]:
        state = "received" if slot["present"] else "None"
        print(f"slot {slot['slot']} via {slot['middleware']:<9} -> {state}")
    print("passed" if report.passed else "FAILED")
    raise SystemExit(0 if report.passed else 1)


if __name__ == "__main__":
    main()
