"""Command-line interface: run, batch, report, serve, bench."""

import argparse
import json
import multiprocessing
import os
import sys

import numpy as np


def _cmd_run(args):
    from .metrics import report_text, write_run_log
    from .scenario import Scenario, run_scenario

    scenario = Scenario.from_file(args.scenario)
    result = run_scenario(scenario)
    print(f"scenario: {result.name}")
    print(f"success: {result.success}  distance: {result.distance:.3f} m  "
          f"termination: {result.termination}")
    print(f"tracking_rms: {result.tracking_rms:.4f}  "
          f"qp_failures: {result.qp_failures}")
    print(f"violations: {result.violation_counters}")
    print(report_text([result]))
    if args.out:
        paths = write_run_log(result, args.out)
        print(f"logs: {paths[0]}, {paths[1]}")
    return 0 if result.success else 1


def _batch_worker(payload):
    from .scenario import Scenario, run_scenario

    raw, seed = payload
    sc = Scenario.from_dict({**raw, "seed": seed,
                             "name": f"{raw.get('name', 'batch')}_{seed}"})
    return run_scenario(sc)


def _cmd_batch(args):
    from .metrics import batch_table, report_text, write_run_log
    from .scenario import Scenario

    import yaml
    with open(args.scenario) as fh:
        raw = yaml.safe_load(fh) or {}
    seeds = list(range(args.seed_start, args.seed_start + args.seeds))
    payloads = [(raw, s) for s in seeds]
    if args.workers > 1:
        with multiprocessing.Pool(args.workers) as pool:
            results = pool.map(_batch_worker, payloads)
    else:
        results = [_batch_worker(p) for p in payloads]
    for line in batch_table(results):
        print(line)
    print(report_text(results))
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        for r in results:
            write_run_log(r, args.out)
        with open(os.path.join(args.out, "batch_table.csv"), "w") as fh:
            fh.write("\n".join(batch_table(results)) + "\n")
    rate = float(np.mean([r.success for r in results]))
    return 0 if rate >= args.min_success_rate else 1


def _cmd_report(args):
    from .metrics import read_summary

    rows = []
    for name in sorted(os.listdir(args.logdir)):
        if name.endswith("_summary.csv"):
            rows.append((name, read_summary(os.path.join(args.logdir, name))))
    if not rows:
        print("no summaries found")
        return 1
    succ = [int(s["success"]) for _, s in rows]
    print(f"runs: {len(rows)}  success_rate: {np.mean(succ):.1%}")
    for name, s in rows:
        print(f"  {name}: success={s['success']} distance={s['distance_m']} "
              f"termination={s['termination']}")
    return 0


def _cmd_serve(args):
    from .teleop import serve

    serve(host=args.host, port=args.port, scenario_path=args.scenario)
    return 0


def _cmd_bench(args):
    from benchmarks.bench_kernels import main as bench_main  # pragma: no cover
    bench_main()
    return 0


def main(argv=None):
    parser = argparse.ArgumentParser(
        prog="locoman",
        description="Loco-manipulation NMPC: scenarios, batches, teleop.")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run one scenario file")
    p_run.add_argument("scenario")
    p_run.add_argument("--out", default=None, help="log directory")
    p_run.set_defaults(func=_cmd_run)

    p_batch = sub.add_parser("batch", help="run a scenario over a seed range")
    p_batch.add_argument("scenario")
    p_batch.add_argument("--seeds", type=int, default=50)
    p_batch.add_argument("--seed-start", type=int, default=0)
    p_batch.add_argument("--workers", type=int, default=1)
    p_batch.add_argument("--out", default=None)
    p_batch.add_argument("--min-success-rate", type=float, default=0.0)
    p_batch.set_defaults(func=_cmd_batch)

    p_rep = sub.add_parser("report", help="aggregate logged summaries")
    p_rep.add_argument("logdir")
    p_rep.set_defaults(func=_cmd_report)

    p_srv = sub.add_parser("serve", help="live sim with the teleop endpoint")
    p_srv.add_argument("--host", default="127.0.0.1")
    p_srv.add_argument("--port", type=int, default=8733)
    p_srv.add_argument("--scenario", default=None)
    p_srv.set_defaults(func=_cmd_serve)

    p_bench = sub.add_parser("bench", help="numba vs pure-numpy kernel bench")
    p_bench.set_defaults(func=_cmd_bench)

    args = parser.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
