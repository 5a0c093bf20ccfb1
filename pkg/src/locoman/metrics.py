"""Run metrics: solve-time histogram, success-vs-distance curve, reports.

Logs are delimited text (CSV); the solve-time histogram uses the published
interval bins (12-13, 13-14, 14-15, 15-16, >=16 ms) plus an underflow bin so
the counts always partition the total.
"""

import csv
import io
import os

import numpy as np

HIST_EDGES_MS = (12.0, 13.0, 14.0, 15.0, 16.0)
HIST_LABELS = ("<12", "12-13", "13-14", "14-15", "15-16", ">=16")


def solve_time_histogram(times_s):
    """Counts per bin for solve times given in seconds."""
    counts = [0] * (len(HIST_EDGES_MS) + 1)
    for t in times_s:
        ms = 1e3 * float(t)
        idx = 0
        for e in HIST_EDGES_MS:
            if ms >= e:
                idx += 1
            else:
                break
        counts[idx] += 1
    return dict(zip(HIST_LABELS, counts))


def histogram_lines(times_s):
    counts = solve_time_histogram(times_s)
    total = max(sum(counts.values()), 1)
    lines = ["bin_ms,count,share"]
    for label in HIST_LABELS:
        lines.append(f"{label},{counts[label]},{counts[label] / total:.4f}")
    return lines


def success_distance_curve(results, grid=None):
    """Fraction of runs whose distance reached each grid point.

    Non-increasing in distance by construction."""
    distances = np.array([r.distance for r in results], dtype=float)
    if grid is None:
        grid = np.linspace(0.0, 12.0, 25)
    curve = [(float(d), float(np.mean(distances >= d))) for d in grid]
    return curve


def batch_table(results):
    lines = ["name,seed_or_case,success,distance_m,termination,"
             "tracking_rms,qp_failures"]
    for r in results:
        lines.append(
            f"{r.name},{r.name.split('_')[-1]},{int(r.success)},"
            f"{r.distance:.3f},{r.termination},{r.tracking_rms:.4f},"
            f"{r.qp_failures}"
        )
    rate = np.mean([r.success for r in results]) if results else 0.0
    lines.append(f"# success_rate,{rate:.4f}")
    return lines


def summarize(results):
    rate = float(np.mean([r.success for r in results])) if results else 0.0
    all_times = [t for r in results for t in r.solve_times]
    return {
        "runs": len(results),
        "success_rate": rate,
        "mean_distance": float(np.mean([r.distance for r in results]))
        if results else 0.0,
        "histogram": solve_time_histogram(all_times),
    }


def write_run_log(result, directory):
    """Per-run delimited logs: cycle stats + summary row."""
    os.makedirs(directory, exist_ok=True)
    path = os.path.join(directory, f"{result.name}_nmpc.csv")
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["cycle", "iterations", "kkt_residual", "solve_time_s"])
        for i, (it, kkt, st) in enumerate(
            zip(result.nmpc_iterations, result.nmpc_kkt, result.solve_times)
        ):
            wr.writerow([i, it, f"{kkt:.6e}", f"{st:.6e}"])
    spath = os.path.join(directory, f"{result.name}_summary.csv")
    with open(spath, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["field", "value"])
        wr.writerow(["success", int(result.success)])
        wr.writerow(["distance_m", f"{result.distance:.4f}"])
        wr.writerow(["duration_s", f"{result.duration:.3f}"])
        wr.writerow(["termination", result.termination])
        wr.writerow(["tracking_rms", f"{result.tracking_rms:.4f}"])
        wr.writerow(["qp_failures", result.qp_failures])
        for key, val in result.violation_counters.items():
            wr.writerow([f"violations_{key}", val])
        wr.writerow(["digest", result.digest])
    return path, spath


def read_summary(path):
    with open(path) as fh:
        rd = csv.reader(fh)
        next(rd)
        return {row[0]: row[1] for row in rd if row}


def report_text(results):
    buf = io.StringIO()
    s = summarize(results)
    buf.write(f"runs: {s['runs']}  success_rate: {s['success_rate']:.1%}  "
              f"mean_distance: {s['mean_distance']:.2f} m\n")
    buf.write("solve-time histogram (ms bins):\n")
    for line in histogram_lines([t for r in results for t in r.solve_times]):
        buf.write("  " + line + "\n")
    buf.write("success vs distance:\n")
    for d, frac in success_distance_curve(results):
        buf.write(f"  {d:5.2f} m : {frac:.2f}\n")
    return buf.getvalue()
