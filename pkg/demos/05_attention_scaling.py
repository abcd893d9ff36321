"""Similarity-buffer scaling of epipolar versus full attention.

Runs both attention modes over square feature grids of growing side L
and fits log-log slopes to the exact buffer-element counts: full
attention allocates L^4 similarity entries, epipolar attention L^3.
Wall times are printed too, though at these sizes constants dominate.

Run:  python demos/05_attention_scaling.py
"""

from pathlib import Path

from epiview.bench import bench_csv_rows, fit_loglog_slope, run_scaling_bench

out = Path("demo_out")
out.mkdir(parents=True, exist_ok=True)

sizes = (8, 16, 32, 64)
rows = run_scaling_bench(sizes=sizes, reps=3, seed=0)

print(f"{'L':>4} {'mode':>9} {'buffer elems':>14} {'median wall time':>17}")
for r in rows:
    print(f"{r.size:>4} {r.mode:>9} {r.buffer_elems:>14,} {r.wall_ns_median / 1e6:>14.2f} ms")

for mode in ("full", "epipolar"):
    pts = [(r.size, r.buffer_elems) for r in rows if r.mode == mode]
    ts = [(r.size, r.wall_ns_median) for r in rows if r.mode == mode]
    print(f"\n{mode}: buffer-count slope {fit_loglog_slope(*zip(*pts)):.3f}, "
          f"wall-time slope {fit_loglog_slope(*zip(*ts)):.2f}")

csv_path = out / "attention_scaling.csv"
with open(csv_path, "w") as fh:
    for row in bench_csv_rows(rows):
        fh.write(",".join(str(x) for x in row) + "\n")
print(f"\nwrote {csv_path}")
