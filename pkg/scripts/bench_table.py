"""Timing comparison of the compositional certificate against monolithic and spectral baselines.

    python3 scripts/bench_table.py --repetitions 3 --full-cap 300 --out runs/bench.csv
"""

import argparse
import sys

from qsrnet.baselines import bench_table
from qsrnet.network import CertifyOptions, build_uav_network
from qsrnet.riccati import QuadrotorParams, randomize_fleet


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repetitions", type=int, default=3)
    ap.add_argument("--fleet-seed", type=int, default=0)
    ap.add_argument("--full-cap", type=float, default=300.0, help="wall-clock cap (s) for the full-variable solve")
    ap.add_argument("--out", default="bench.csv")
    args = ap.parse_args()

    fleet = build_uav_network(randomize_fleet(QuadrotorParams(), 9, args.fleet_seed))
    res = bench_table(
        fleet.network,
        args.repetitions,
        full_options=CertifyOptions(time_limit=args.full_cap),
        log=lambda m: print(m, file=sys.stderr, flush=True),
    )
    res.write(args.out)
    for r in res.records:
        print(f"{r.method:28s} {r.time_s:10.3f} s  {r.verdict:10s} params={r.n_params}")
    for f in res.flags:
        print("warning:", f)


if __name__ == "__main__":
    main()
