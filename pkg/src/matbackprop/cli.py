"""Command-line entry point: ``gradcheck``, ``demo-o2p``, ``demo-ncuts`` and ``eval``.

Exit codes: 0 success, 1 failed check or training failure, 2 input/output
error, 3 rank-lemma violation.
"""
from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import gradcheck as gc
from .demos import DemoConfig, run_ncuts_demo, run_o2p_demo, write_outputs
from .errors import ContractError, CsvFormatError, MatBackpropError, RankLemmaViolation, TrainingFailure
from .io import dump_json, load_instance, read_key_values, read_matrix_csv
from .ncuts import AffinityModel, affinity_forward, evaluate

# acceptance thresholds for the toy demos, frozen after calibration
O2P_MIN_ACCURACY = 0.9
O2P_MIN_MARGIN = 0.10
NCUTS_MAX_J2 = 0.5
NCUTS_MIN_ARI = 0.9
NCUTS_MIN_ARI_MARGIN = 0.2


def _warn(msg):
    print(f"warning: {msg}", file=sys.stderr)


def _error(msg):
    print(f"error: {msg}", file=sys.stderr)


def cmd_gradcheck(args) -> int:
    reports = gc.run_sweep(args.filter, seeds=range(args.seeds), seed_offset=args.seed)
    if not reports:
        _warn(f"filter {args.filter!r} matched no registered operation")
    failed = [r for r in reports if not r.passed]
    ops = sorted({r.op for r in reports})
    for op in ops:
        rs = [r for r in reports if r.op == op]
        worst = max(r.rel_error for r in rs)
        status = "PASS" if all(r.passed for r in rs) else "FAIL"
        print(f"{status} {op:28s} seeds={len(rs):3d} max_rel_error={worst:.3e} "
              f"min_order={min(r.order for r in rs):.3f}")
    try:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        dump_json([r.to_dict() for r in reports], out / "gradcheck_report.json")
    except OSError as exc:
        _error(f"cannot write report: {exc}")
        return 2
    print(f"{len(reports) - len(failed)}/{len(reports)} reports passed")
    return 1 if failed else 0


def _demo_config(task, args) -> DemoConfig:
    values = read_key_values(args.config) if args.config else {}
    if args.seed is not None:
        values["seed"] = str(args.seed)
    if args.out is not None:
        values["output_dir"] = args.out
    for key in ("epochs", "path"):
        if getattr(args, key, None) is not None:
            values[key] = str(getattr(args, key))
    return DemoConfig.from_mapping(task, values)


def cmd_demo_o2p(args) -> int:
    try:
        cfg = _demo_config("o2p", args)
    except (OSError, MatBackpropError, ValueError) as exc:
        _error(str(exc))
        return 2
    try:
        result = run_o2p_demo(cfg)
    except TrainingFailure as exc:
        _error(f"training failed: {exc}")
        return 1
    summary = result.summary()
    summary["targets_met"] = bool(
        result.test_accuracy >= O2P_MIN_ACCURACY
        and result.test_accuracy - result.baseline_test_accuracy >= O2P_MIN_MARGIN
    )
    try:
        write_outputs(result, cfg.output_dir, "o2p")
    except OSError as exc:
        _error(f"cannot write outputs: {exc}")
        return 2
    print(dump_json(summary))
    return 0


def cmd_demo_ncuts(args) -> int:
    try:
        cfg = _demo_config("ncuts", args)
    except (OSError, MatBackpropError, ValueError) as exc:
        _error(str(exc))
        return 2
    try:
        result = run_ncuts_demo(cfg)
    except RankLemmaViolation as exc:
        _error(f"rank lemma violated: {exc}")
        return 3
    except TrainingFailure as exc:
        _error(f"training failed: {exc}")
        return 1
    summary = result.summary()
    summary["targets_met"] = bool(
        max(result.final_j2) < NCUTS_MAX_J2
        and all(r == cfg.k for r in result.final_rank)
        and result.mean_ari >= NCUTS_MIN_ARI
        and result.mean_ari - result.mean_baseline_ari >= NCUTS_MIN_ARI_MARGIN
    )
    try:
        write_outputs(result, cfg.output_dir, "ncuts")
    except OSError as exc:
        _error(f"cannot write outputs: {exc}")
        return 2
    print(dump_json(summary))
    return 0


def cmd_eval(args) -> int:
    try:
        if args.instance:
            inst = load_instance(args.instance)
            F, E = inst.F, inst.E
            W = None
        else:
            if not args.E or not (args.W or args.F):
                _error("eval needs --E with --W or --F (or --instance)")
                return 2
            E = read_matrix_csv(args.E)
            W = read_matrix_csv(args.W) if args.W else None
            F = read_matrix_csv(args.F) if args.F else None
        if W is None:
            Lam = read_matrix_csv(args.Lambda) if args.Lambda else np.eye(F.shape[1])
            W = affinity_forward(F, AffinityModel(Lam, nonneg_guard=False))
        summary = evaluate(W, E)
    except CsvFormatError as exc:
        _error(str(exc))
        return 2
    except (ContractError, MatBackpropError, OSError, KeyError) as exc:
        _error(f"invalid input: {exc}")
        return 2
    print(dump_json(summary.__dict__))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="matbackprop", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gradcheck", help="finite-difference sweep over every registered backward pass")
    g.add_argument("--filter", default=None, help="regular expression on operation names")
    g.add_argument("--seed", type=int, default=0, help="first seed")
    g.add_argument("--seeds", type=int, default=20, help="number of seeds per operation")
    g.add_argument("--out", default="out")
    g.set_defaults(func=cmd_gradcheck)

    for name, func, help_ in (
        ("demo-o2p", cmd_demo_o2p, "covariance-pooling classification demo"),
        ("demo-ncuts", cmd_demo_ncuts, "J2 segmentation training demo"),
    ):
        d = sub.add_parser(name, help=help_)
        d.add_argument("--config", default=None, help="flat key=value file overriding DemoConfig fields")
        d.add_argument("--seed", type=int, default=None)
        d.add_argument("--out", default=None)
        d.add_argument("--epochs", type=int, default=None)
        if name == "demo-o2p":
            d.add_argument("--path", choices=("svd", "eig"), default=None)
        d.set_defaults(func=func)

    e = sub.add_parser("eval", help="ncuts criterion, J1, J2 and ranks for CSV inputs")
    e.add_argument("--E", help="binary indicator matrix (m x k)")
    e.add_argument("--W", help="affinity matrix (m x m)")
    e.add_argument("--F", help="features (m x d); W = F Lambda F^T")
    e.add_argument("--Lambda", help="d x d affinity parameters (default identity)")
    e.add_argument("--instance", help="segmentation-instance directory")
    e.set_defaults(func=cmd_eval)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
