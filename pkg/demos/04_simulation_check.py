"""Monte Carlo trips against the analytic expectations.

Replays every demand unit ten times through the equilibrium transition
probabilities and compares simulated trip statistics to the closed-form
absorbing-chain expectations.  The two agree within sampling error, which
is the point: the simulator gives trajectory-level detail, the linear
systems give the exact means.
"""

import math

import numpy as np

from mteq import (
    SchemeSpec,
    SolverOptions,
    expand_scheme,
    gen_single_od,
    primary_flow_share,
    simulate_trips,
    solve_equilibrium,
)
from mteq.metrics import all_trip_stats

instance = gen_single_od()
options = SolverOptions(inner_tol=1e-9, outer_tol=1e-6,
                        inner_max_iters=10000, outer_max_iters=3000)
prices = expand_scheme(SchemeSpec(family="uniform", rate=0.5), instance)
solution = solve_equilibrium(instance, prices, options)
stats = all_trip_stats(instance, solution)

report = simulate_trips(instance, solution, runs_per_unit=10, seed=42)
print(f"simulated {len(report.trips)} trips "
      f"({report.truncated_count} truncated)\n")

print(f"{'stratum':>8} | {'metric':>14} | {'analytic':>10} | {'simulated':>10} | {'gap/se':>7}")
print("-" * 64)
for s in instance.stratum_names:
    row = stats[(s, "0", "3")]
    done = report.completed(s)
    times = np.array([t.time for t in done])
    dist = np.array([t.distance for t in done])
    prim = np.array([t.primary_distance for t in done])

    mean_t = times.mean()
    se_t = times.std(ddof=1) / math.sqrt(len(times))
    share_sim = prim.sum() / dist.sum()
    share_ana = primary_flow_share(solution, s, instance)
    se_share = math.sqrt(np.sum((prim - share_sim * dist) ** 2)) / dist.sum()

    print(f"{s:>8} | {'mean time (h)':>14} | {row.time:10.5f} | {mean_t:10.5f} | "
          f"{abs(mean_t - row.time) / se_t:7.2f}")
    print(f"{s:>8} | {'primary share':>14} | {share_ana:10.5f} | {share_sim:10.5f} | "
          f"{(abs(share_sim - share_ana) / se_share if se_share else 0.0):7.2f}")

print("""
Gaps sit within a few standard errors of the replication noise.  Analytic
values come from one sparse linear solve per (stratum, destination); the
simulator exists for trajectory output and as an independent cross-check.
""")
