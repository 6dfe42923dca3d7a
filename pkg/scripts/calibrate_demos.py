"""Brute-force grid over demo settings, used to pick the frozen demo defaults.

Prints one line per (setting, seed) with the quantities the demo thresholds
look at. Example:

    python3 scripts/calibrate_demos.py ncuts --seeds 0 1 2 --lr 3e-3 1e-2 --noise 0.1 0.2
    python3 scripts/calibrate_demos.py o2p --seeds 0 1 2 --lr 1e-4 1e-2 --nuisance 1.5 2.0
"""
from __future__ import annotations

import argparse
import dataclasses
import itertools
import time

import matbackprop.demos as dm
from matbackprop.data import CovarianceTaskConfig


def calibrate_o2p(args):
    original = dm.CovarianceTaskConfig
    try:
        for nuisance, lr, seed in itertools.product(args.nuisance, args.lr, args.seeds):
            dm.CovarianceTaskConfig = lambda **kw: CovarianceTaskConfig(nuisance_std=nuisance, **kw)
            start = time.perf_counter()
            r = dm.run_o2p_demo(dm.DemoConfig.defaults("o2p", learning_rate=lr, seed=seed, path=args.path))
            print(f"nuisance={nuisance:g} lr={lr:g} seed={seed} train={r.train_accuracy:.4f} "
                  f"test={r.test_accuracy:.4f} baseline={r.baseline_test_accuracy:.4f} "
                  f"margin={r.test_accuracy - r.baseline_test_accuracy:+.4f} "
                  f"loss={r.final_loss:.4f} time={time.perf_counter() - start:.0f}s", flush=True)
    finally:
        dm.CovarianceTaskConfig = original


def calibrate_ncuts(args):
    original = dm.segmentation_task
    try:
        for noise, lr, seed in itertools.product(args.noise, args.lr, args.seeds):
            dm.segmentation_task = lambda cfg: dataclasses.replace(original(cfg), noise_std=noise)
            start = time.perf_counter()
            r = dm.run_ncuts_demo(dm.DemoConfig.defaults("ncuts", learning_rate=lr, seed=seed))
            losses = [rec["loss"] for rec in r.log]
            decreasing = all(b < a for a, b in zip(losses[:10], losses[1:11]))
            print(f"noise={noise:g} lr={lr:g} seed={seed} max_j2={max(r.final_j2):.3f} "
                  f"ranks={sorted(set(r.final_rank))} ari={r.mean_ari:.3f} min_ari={min(r.ari):.3f} "
                  f"baseline={r.mean_baseline_ari:.3f} decreasing={decreasing} "
                  f"time={time.perf_counter() - start:.0f}s", flush=True)
    finally:
        dm.segmentation_task = original


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("task", choices=("o2p", "ncuts"))
    parser.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    parser.add_argument("--lr", type=float, nargs="+", default=None)
    parser.add_argument("--nuisance", type=float, nargs="+", default=[CovarianceTaskConfig().nuisance_std],
                        help="o2p: std of the uninformative channels")
    parser.add_argument("--noise", type=float, nargs="+", default=[dm.SegmentationTaskConfig().noise_std],
                        help="ncuts: per-pixel colour noise")
    parser.add_argument("--path", choices=("svd", "eig"), default="svd")
    args = parser.parse_args()
    if args.task == "o2p":
        args.lr = args.lr or [dm.O2P_LR]
        calibrate_o2p(args)
    else:
        args.lr = args.lr or [dm.NCUTS_LR]
        calibrate_ncuts(args)


if __name__ == "__main__":
    main()
