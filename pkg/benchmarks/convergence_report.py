"""Desk-scale VL vs FL comparison over several seeds, pinned to one core.

Writes per-seed metrics and comparison CSVs plus ``summary.json`` and
``report.md`` into the output directory. Wall time covers dataset
generation, training, evaluation and the summary.

    python benchmarks/convergence_report.py --out reports/convergence
"""

import os

for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS", "NUMBA_NUM_THREADS"):
    os.environ.setdefault(_var, "1")

import argparse
import json
import platform
import tempfile
import time
from pathlib import Path

import numpy as np

from fedseq import BACKEND, cli, compare
from fedseq.config import ExperimentConfig

BUDGET_S = 15 * 60


def arm_configs(seed, args, data_dir):
    common = dict(
        seed=seed, rounds=args.rounds, examples_per_client=args.examples, test_size=args.test_size,
        hidden=64, batch_size=32, lr=0.01, local_epochs=1, n_clients=5, out_dir=data_dir,
    )
    return (
        ExperimentConfig(run_id="convvl", construction="vl", strategy="vl", **common),
        ExperimentConfig(run_id="convfl", construction="fl", strategy="aligned", **common),
    )


def run_seed(seed, args, data_dir, out):
    histories = []
    for arm, cfg in zip(("vl", "fl"), arm_configs(seed, args, data_dir)):
        t0 = time.perf_counter()
        history = cli.run_experiment(cfg, data=cli.build_dataset(cfg))
        (out / f"seed{seed}.{arm}.csv").write_text(
            compare.metrics_csv(history, cfg.run_id, cfg.strategy, cfg.n_clients)
        )
        print(f"seed {seed} {arm}: final acc {history[-1].test_accuracy:.3f} "
              f"({time.perf_counter() - t0:.0f} s)", flush=True)
        histories.append(history)
    (out / f"seed{seed}.compare.csv").write_text(compare.compare_csv(*histories))
    rounds = [m.round for m in histories[0]]
    row = {"seed": seed}
    for arm, h in zip(("vl", "fl"), histories):
        acc = [m.test_accuracy for m in h]
        row[arm] = {
            "final_acc": acc[-1],
            "auc": compare.auc(acc),
            "reach_0.8": compare.rounds_to_fraction(rounds, acc, 0.8),
            "final_train_loss": h[-1].avg_train_loss,
        }
    row["fl_reaches_first"] = row["fl"]["reach_0.8"] < row["vl"]["reach_0.8"]
    return row


def write_report(out, rows, wall, args):
    wins = sum(r["fl_reaches_first"] for r in rows)
    summary = {
        "seeds": [r["seed"] for r in rows],
        "rounds": args.rounds,
        "examples_per_client": args.examples,
        "test_size": args.test_size,
        "backend": BACKEND,
        "cpu": platform.processor() or platform.machine(),
        "wall_seconds": wall,
        "budget_seconds": BUDGET_S,
        "within_budget": wall < BUDGET_S,
        "fl_first_seeds": wins,
        "fl_first_majority": wins > len(rows) / 2,
        "per_seed": rows,
    }
    (out / "summary.json").write_text(json.dumps(summary, indent=2) + "\n")
    lines = [
        "# VL vs FL convergence report",
        "",
        f"5 clients x {args.examples} examples, H=64, batch 32, Adam lr 0.01, 1 local epoch, "
        f"{args.rounds} rounds, test set {args.test_size}. Backend `{BACKEND}`, one core.",
        "",
        "| seed | VL final acc | FL final acc | VL AUC | FL AUC | VL round to 80% | FL round to 80% |",
        "|---|---|---|---|---|---|---|",
    ]
    for r in rows:
        vl, fl = r["vl"], r["fl"]
        lines.append(
            f"| {r['seed']} | {vl['final_acc']:.3f} | {fl['final_acc']:.3f} | {vl['auc']:.2f} | "
            f"{fl['auc']:.2f} | {vl['reach_0.8']} | {fl['reach_0.8']} |"
        )
    lines += [
        "",
        f"FL reaches 80% of its final accuracy strictly earlier than VL in {wins} of {len(rows)} seeds "
        f"({'majority' if summary['fl_first_majority'] else 'not a majority'}).",
        "",
        f"Wall time: {wall:.0f} s against a budget of {BUDGET_S} s "
        f"({'within' if summary['within_budget'] else 'over'} budget).",
        "",
    ]
    (out / "report.md").write_text("\n".join(lines))
    return summary


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default="reports/convergence")
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2, 3, 4])
    ap.add_argument("--rounds", type=int, default=30)
    ap.add_argument("--examples", type=int, default=1000)
    ap.add_argument("--test-size", type=int, default=1000)
    ap.add_argument("--core", type=int, default=None, help="pin to this CPU (default: first allowed)")
    args = ap.parse_args(argv)

    if hasattr(os, "sched_setaffinity"):
        core = args.core if args.core is not None else min(os.sched_getaffinity(0))
        os.sched_setaffinity(0, {core})
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    np.seterr(all="ignore")

    start = time.perf_counter()
    with tempfile.TemporaryDirectory() as data_dir:
        rows = [run_seed(s, args, data_dir, out) for s in args.seeds]
        summary = write_report(out, rows, time.perf_counter() - start, args)
    print(f"wall {summary['wall_seconds']:.0f} s; FL first in {summary['fl_first_seeds']}/{len(rows)} seeds")


if __name__ == "__main__":
    main()
