"""Echo round-trip latency across payload kinds, sizes and carriers; writes one CSV."""

import argparse
import sys

from wrapify.bench import run_bench, to_csv

SWEEP = [
    ("native", [64, 1024, 16384, 262144]),
    ("image", [64 * 48, 200 * 200 * 3, 640 * 480 * 3]),
    ("audio", [4 * 1024, 4 * 8820, 4 * 44100]),
]


def main() -> None:
    p = argparse.ArgumentParser()
    p.add_argument("--count", type=int, default=100)
    p.add_argument("--carriers", default="inproc,tcp")
    p.add_argument("--out", default="-")
    args = p.parse_args()
    records = []
    for carrier in args.carriers.split(","):
        for kind, sizes in SWEEP:
            for size in sizes:
                rec = run_bench(kind, size, args.count, carrier)
                records.append(rec)
                print(f"{carrier:6} {kind:6} {size:>8} B  p50={rec.stats['p50']:>9.1f} us", file=sys.stderr)
    text = to_csv(records)
    if args.out == "-":
        sys.stdout.write(text)
    else:
        with open(args.out, "w") as fh:
            fh.write(text)


if __name__ == "__main__":
    main()
