"""Shared driver for the experiment scripts: load a config, run, tabulate."""
import argparse
import sys
import time
from pathlib import Path

from irsswipt.harness import emit_results, load_config, run_sweep, summarize

CONFIGS = Path(__file__).resolve().parent.parent / "configs"


def run(default_config: str, metrics, description: str):
    p = argparse.ArgumentParser(description=description)
    p.add_argument("--config", default=str(CONFIGS / default_config))
    p.add_argument("--trials", type=int)
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--out", help="write the raw rows as CSV")
    args = p.parse_args()

    cfg, spec = load_config(args.config)
    if args.trials:
        spec.trials = args.trials
    t0 = time.perf_counter()
    rows = run_sweep(cfg, spec, threads=args.threads)
    if args.out:
        emit_results(rows, args.out)
    means = summarize(rows)
    print(f"{spec.mode} sweep over {spec.sweep_name}, {spec.trials} trials per point "
          f"({time.perf_counter() - t0:.0f}s)")
    print(f"{spec.sweep_name:>10}" + "".join(f"{m:>20}" for m in metrics))
    for v in spec.sweep_values:
        print(f"{v:>10}" + "".join(f"{means.get((float(v), m), float('nan')):>20.6g}"
                                   for m in metrics))
    bad = [r for r in rows if r.status != "ok"]
    if bad:
        print(f"{len(bad)} rows from failed trials", file=sys.stderr)
    return means
