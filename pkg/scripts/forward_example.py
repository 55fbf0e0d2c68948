"""Forwarding: a tcp publisher, an intermediary that republishes on inproc and
back onto tcp, and a final listener. Every role lives in its own process."""

import argparse
import json

from wrapify.schemes import run_forward_scenario


def main() -> None:
    p = argparse.ArgumentParser()
    p.add_argument("--carriers", default="tcp,inproc,tcp", help="comma-separated carrier per hop")
    p.add_argument("--msg", default="forwarded")
    args = p.parse_args()
    carriers = args.carriers.split(",")
    hops = [(f"/example/native_hop{i}", c) for i, c in enumerate(carriers)]
    report = run_forward_scenario(hops, {"msg": args.msg})
    print(report.to_json(indent=2))
    raise SystemExit(0 if report.passed else 1)


if __name__ == "__main__":
    main()
