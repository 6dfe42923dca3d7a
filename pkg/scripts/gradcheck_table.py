"""Per-operation table of the finite-difference sweep: worst relative error and Taylor-order range.

    python3 scripts/gradcheck_table.py --seeds 20 --gap-floor 1e-2
"""
import argparse
import math
import time

from matbackprop.gradcheck import DEFAULT_GAP_FLOOR, run_sweep


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--seeds", type=int, default=20)
    parser.add_argument("--gap-floor", type=float, default=DEFAULT_GAP_FLOOR)
    parser.add_argument("--filter", default=None)
    args = parser.parse_args()

    start = time.perf_counter()
    reports = run_sweep(args.filter, seeds=range(args.seeds), gap_floor=args.gap_floor)
    elapsed = time.perf_counter() - start

    print(f"{'operation':28s} {'n':>4s} {'pass':>5s} {'max rel err':>12s} {'order min':>10s} {'order max':>10s}")
    for op in dict.fromkeys(r.op for r in reports):
        rs = [r for r in reports if r.op == op]
        orders = [r.order for r in rs if math.isfinite(r.order)]
        lo = f"{min(orders):10.3f}" if orders else f"{'inf':>10s}"
        hi = f"{max(orders):10.3f}" if orders else f"{'inf':>10s}"
        print(f"{op:28s} {len(rs):4d} {sum(r.passed for r in rs):5d} {max(r.rel_error for r in rs):12.3e} {lo} {hi}")
    print(f"{sum(r.passed for r in reports)}/{len(reports)} passed in {elapsed:.1f}s")


if __name__ == "__main__":
    main()
