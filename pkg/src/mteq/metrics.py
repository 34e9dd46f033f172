"""Welfare, revenue, and traffic metrics of an equilibrium solution.

Expected per-trip quantities (time, money, distance) come from the
absorbing-chain linear systems of each (stratum, destination) routing; the
Monte Carlo simulator replays individual trips against the same transition
probabilities and serves as an independent cross-check and the source of
trajectory-level output.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import spsolve

from .equilibrium import EquilibriumSolution, StratumDestinationSolution
from .instance import Instance
from .network import Network


@dataclass(frozen=True)
class TripStats:
    stratum: str
    origin: str
    destination: str
    time: float          # expected drive time (hours)
    money: float         # expected toll paid
    distance: float      # expected distance (km)
    start_prob: float    # probability the trip starts (1 - P_outside)


@dataclass
class MetricsReport:
    scheme_id: str
    stratum_names: list[str]
    welfare: dict            # stratum -> W (literal definition)
    welfare_delta: dict      # stratum -> W(p) - W(0)
    total_welfare: float
    total_welfare_delta: float
    revenue: dict            # stratum -> R
    total_revenue: float
    trips_started: dict      # stratum -> proportion of demand that drives
    trips_started_overall: float
    primary_share_distance: dict   # stratum -> share, NaN when stratum has no flow
    primary_share_flow: dict
    avg_speed_trip: dict     # km/h, trip-weighted (headline)
    avg_speed_flow: dict     # km/h, arc-flow weighted
    per_od: list             # TripStats rows
    provenance: str = "analytic"
    seed: int | None = None
    runs: int | None = None

    def to_dict(self) -> dict:
        def clean(d):
            return {k: (None if isinstance(v, float) and math.isnan(v) else v)
                    for k, v in d.items()}
        return {
            "scheme_id": self.scheme_id,
            "strata": self.stratum_names,
            "welfare": self.welfare,
            "welfare_delta": self.welfare_delta,
            "total_welfare": self.total_welfare,
            "total_welfare_delta": self.total_welfare_delta,
            "revenue": self.revenue,
            "total_revenue": self.total_revenue,
            "trips_started": self.trips_started,
            "trips_started_overall": self.trips_started_overall,
            "primary_share_distance": clean(self.primary_share_distance),
            "primary_share_flow": clean(self.primary_share_flow),
            "avg_speed_trip": clean(self.avg_speed_trip),
            "avg_speed_flow": clean(self.avg_speed_flow),
            "per_od": [vars(t) for t in self.per_od],
            "provenance": self.provenance,
            "seed": self.seed,
            "runs": self.runs,
        }


# ---------------------------------------------------------------------------
# Analytic expectations

def _absorbing_expectations(net: Network, sd: StratumDestinationSolution,
                            weights: np.ndarray, destination: int) -> np.ndarray:
    """Solve T_i = sum_a P_ia (w_a + T_head(a)) with T_dest = 0 for several
    weight columns at once; returns (n_nodes, n_weights)."""
    n = net.n_nodes
    probs = sd.arc_probs
    mask_row = net.tail != destination
    rhs = np.zeros((n, weights.shape[1]))
    np.add.at(rhs, net.tail[mask_row], probs[mask_row, None] * weights[mask_row])
    rhs[destination] = 0.0
    mask = mask_row & (net.head != destination)
    trans = sp.csr_matrix((probs[mask], (net.tail[mask], net.head[mask])), shape=(n, n))
    A = sp.identity(n, format="csr") - trans
    out = spsolve(A, rhs)
    return np.asarray(out).reshape(n, weights.shape[1])


def expected_trip_stats(instance: Instance, solution: EquilibriumSolution,
                        stratum: str, destination: str) -> list[TripStats]:
    """Expected time, money and distance from every demand origin of one
    (stratum, destination) pair, plus its start probabilities."""
    net = instance.network
    sd = solution.subsolution(stratum, destination)
    s_idx = instance.stratum_names.index(stratum)
    kappa = solution.price_rates[s_idx] * net.length * net.is_primary
    d = net.node_index[destination]
    W = np.column_stack([solution.arc_time, kappa, net.length])
    exp = _absorbing_expectations(net, sd, W, d)
    rows = []
    for pos, origin_idx in enumerate(sd.origins):
        rows.append(TripStats(
            stratum=stratum,
            origin=net.node_id(int(origin_idx)),
            destination=destination,
            time=float(exp[origin_idx, 0]),
            money=float(exp[origin_idx, 1]),
            distance=float(exp[origin_idx, 2]),
            start_prob=float(sd.start_prob[pos]),
        ))
    return rows


def all_trip_stats(instance: Instance, solution: EquilibriumSolution) -> dict:
    """TripStats for every demanded (stratum, origin, destination)."""
    out = {}
    for (s_name, d_id) in sorted(solution.sub.keys()):
        for row in expected_trip_stats(instance, solution, s_name, d_id):
            out[(row.stratum, row.origin, row.destination)] = row
    return out


def welfare(instance: Instance, solution_p: EquilibriumSolution,
            solution_0: EquilibriumSolution, stratum: str) -> tuple[float, float]:
    """Per-stratum welfare of a priced equilibrium against the toll-free one.

    Averaged over the stratum's positive-demand OD pairs: drivers weigh the
    toll-free expected time against their current time plus money (converted
    at the stratum's price/time sensitivity ratio); agents on the outside
    option weigh it against the outside time plus fare.  Returns
    ``(literal, delta)`` where delta subtracts the same expression evaluated
    at the toll-free equilibrium itself, making the no-toll scheme worth
    exactly zero.
    """
    stats_p = {k: v for k, v in all_trip_stats(instance, solution_p).items() if k[0] == stratum}
    stats_0 = {k: v for k, v in all_trip_stats(instance, solution_0).items() if k[0] == stratum}
    w_p = _welfare_value(instance, stratum, stats_p, stats_0)
    w_0 = _welfare_value(instance, stratum, stats_0, stats_0)
    return w_p, w_p - w_0


def _welfare_value(instance: Instance, stratum: str, stats_p: dict, stats_0: dict) -> float:
    s = instance.stratum(stratum)
    ratio = s.beta_p / s.beta_t
    ratio_out = s.beta_p_out / s.beta_t_out
    pairs = instance.od_pairs(stratum)
    if not pairs:
        return 0.0
    total = 0.0
    for (o, d) in pairs:
        key = (stratum, o, d)
        if key not in stats_p or key not in stats_0:
            raise ValueError(f"missing trip stats for {key}; mismatched instances?")
        cur, base = stats_p[key], stats_0[key]
        t_out = instance.outside_time[(o, d)]
        fare = instance.outside.ticket_for(o, d)
        p_start = cur.start_prob
        drive = (base.time - cur.time - ratio * cur.money) * p_start
        outside = (base.time - t_out - ratio_out * fare) * (1.0 - p_start)
        total += drive + outside
    return total / len(pairs)


def total_welfare(per_stratum) -> float:
    """Total welfare: plain sum over strata."""
    vals = per_stratum.values() if isinstance(per_stratum, dict) else per_stratum
    return float(sum(vals))


def revenue(solution: EquilibriumSolution, prices, stratum: str,
            instance: Instance) -> float:
    """Expected toll revenue collected from one stratum:
    sum over arcs of stratum flow times the arc's toll."""
    net = instance.network
    rates = np.asarray(getattr(prices, "rates", prices), dtype=float)
    s_idx = instance.stratum_names.index(stratum)
    kappa = rates[s_idx] * net.length * net.is_primary
    return float(np.dot(solution.stratum_flow[stratum], kappa))


def total_revenue(solution: EquilibriumSolution, prices, instance: Instance) -> float:
    return float(sum(revenue(solution, prices, s, instance)
                     for s in instance.stratum_names))


def primary_flow_share(solution: EquilibriumSolution, stratum: str,
                       instance: Instance, weight: str = "distance") -> float:
    """Fraction of a stratum's flow on primary roads.

    Distance-weighted (flow * length) by default; ``weight="flow"`` uses raw
    arc flow.  NaN when the stratum moves no flow at all (undefined, not 0).
    """
    net = instance.network
    f = solution.stratum_flow[stratum]
    w = f * net.length if weight == "distance" else f
    tot = float(w.sum())
    if tot <= 0.0:
        return float("nan")
    return float(w[net.is_primary].sum()) / tot


# ---------------------------------------------------------------------------
# Report assembly

def baseline_trip_stats(instance: Instance,
                        solution_0: EquilibriumSolution) -> dict:
    """Trip stats of the toll-free equilibrium, computed once and shared by
    every welfare evaluation of the same instance."""
    return all_trip_stats(instance, solution_0)


def compute_metrics(instance: Instance, solution: EquilibriumSolution,
                    baseline, prices=None, scheme_id: str = "") -> MetricsReport:
    """Analytic MetricsReport for one equilibrium against its toll-free
    baseline (an EquilibriumSolution or precomputed baseline_trip_stats)."""
    net = instance.network
    prices = solution.price_rates if prices is None else prices
    stats_p = all_trip_stats(instance, solution)
    stats_0 = baseline if isinstance(baseline, dict) else baseline_trip_stats(instance, baseline)
    trips_of = {(e.stratum, e.origin, e.destination): e.trips for e in instance.demand}

    w, dw, rev, started, share_d, share_f, v_trip, v_flow = {}, {}, {}, {}, {}, {}, {}, {}
    per_od = []
    for s in instance.strata:
        sp_stats = {k: v for k, v in stats_p.items() if k[0] == s.name}
        s0_stats = {k: v for k, v in stats_0.items() if k[0] == s.name}
        w_val = _welfare_value(instance, s.name, sp_stats, s0_stats)
        w0_val = _welfare_value(instance, s.name, s0_stats, s0_stats)
        w[s.name] = w_val
        dw[s.name] = w_val - w0_val
        rev[s.name] = revenue(solution, prices, s.name, instance)
        g_tot = g_started = t_tot = d_tot = 0.0
        for (o, d) in instance.od_pairs(s.name):
            row = sp_stats[(s.name, o, d)]
            g = trips_of[(s.name, o, d)]
            g_tot += g
            g_started += g * row.start_prob
            t_tot += g * row.start_prob * row.time
            d_tot += g * row.start_prob * row.distance
            per_od.append(row)
        started[s.name] = g_started / g_tot if g_tot > 0 else float("nan")
        share_d[s.name] = primary_flow_share(solution, s.name, instance, "distance")
        share_f[s.name] = primary_flow_share(solution, s.name, instance, "flow")
        v_trip[s.name] = d_tot / t_tot if t_tot > 0 else float("nan")
        fl = solution.stratum_flow[s.name]
        tsum = float(np.dot(fl, solution.arc_time))
        v_flow[s.name] = float(np.dot(fl, net.length)) / tsum if tsum > 0 else float("nan")

    g_all = sum(e.trips for e in instance.demand)
    started_all = sum(
        e.trips * stats_p[(e.stratum, e.origin, e.destination)].start_prob
        for e in instance.demand)
    return MetricsReport(
        scheme_id=scheme_id,
        stratum_names=list(instance.stratum_names),
        welfare=w,
        welfare_delta=dw,
        total_welfare=total_welfare(w),
        total_welfare_delta=total_welfare(dw),
        revenue=rev,
        total_revenue=total_welfare(rev),
        trips_started=started,
        trips_started_overall=started_all / g_all if g_all > 0 else float("nan"),
        primary_share_distance=share_d,
        primary_share_flow=share_f,
        avg_speed_trip=v_trip,
        avg_speed_flow=v_flow,
        per_od=per_od,
    )


def write_metrics_csvs(report: MetricsReport, out_dir) -> None:
    """Flat CSV serialization: one row per stratum and one per OD pair."""
    import csv
    from pathlib import Path

    out_dir = Path(out_dir)
    with open(out_dir / "metrics_strata.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["scheme_id", "stratum", "welfare", "welfare_delta", "revenue",
                    "trips_started", "primary_share_distance", "primary_share_flow",
                    "avg_speed_trip", "avg_speed_flow"])
        for s in report.stratum_names:
            w.writerow([report.scheme_id, s,
                        repr(report.welfare[s]), repr(report.welfare_delta[s]),
                        repr(report.revenue[s]), repr(report.trips_started[s]),
                        repr(report.primary_share_distance[s]),
                        repr(report.primary_share_flow[s]),
                        repr(report.avg_speed_trip[s]), repr(report.avg_speed_flow[s])])
    with open(out_dir / "metrics_od.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["scheme_id", "stratum", "origin", "destination",
                    "expected_time", "expected_money", "expected_distance",
                    "start_prob"])
        for t in report.per_od:
            w.writerow([report.scheme_id, t.stratum, t.origin, t.destination,
                        repr(t.time), repr(t.money), repr(t.distance),
                        repr(t.start_prob)])


# ---------------------------------------------------------------------------
# Monte Carlo trip simulation

@dataclass
class SimulatedTrip:
    stratum: str
    origin: str
    destination: str
    started: bool
    arcs: list
    time: float
    money: float
    distance: float
    primary_distance: float
    truncated: bool


@dataclass
class SimulationReport:
    seed: int
    runs_per_unit: int
    step_cap: int
    trips: list = field(default_factory=list)
    truncated_count: int = 0

    def by_stratum(self, stratum: str) -> list:
        return [t for t in self.trips if t.stratum == stratum]

    def started_proportion(self, stratum: str) -> float:
        mine = self.by_stratum(stratum)
        return sum(t.started for t in mine) / len(mine) if mine else float("nan")

    def completed(self, stratum: str) -> list:
        return [t for t in self.by_stratum(stratum) if t.started and not t.truncated]

    def mean_time(self, stratum: str) -> float:
        done = self.completed(stratum)
        return float(np.mean([t.time for t in done])) if done else float("nan")

    def primary_share(self, stratum: str) -> float:
        done = self.completed(stratum)
        dist = sum(t.distance for t in done)
        return sum(t.primary_distance for t in done) / dist if dist > 0 else float("nan")

    def avg_speed(self, stratum: str) -> float:
        done = self.completed(stratum)
        tt = sum(t.time for t in done)
        return sum(t.distance for t in done) / tt if tt > 0 else float("nan")


def simulate_trips(instance: Instance, solution: EquilibriumSolution,
                   runs_per_unit: int = 10, seed: int = 0,
                   step_cap: int | None = None,
                   keep_paths: bool = False) -> SimulationReport:
    """Replay individual trips against the equilibrium probabilities.

    Each demand unit of each OD pair is simulated ``runs_per_unit`` times: a
    Bernoulli start decision against the outside option, then a random walk
    over outgoing arcs until the destination absorbs the trip or the step
    cap trips the truncation flag (truncated trips are counted, never
    dropped).  Every trip draws from its own substream keyed by
    (seed, stratum, origin, destination, replicate), so results do not
    depend on scheduling order.
    """
    net = instance.network
    if step_cap is None:
        step_cap = 50 * net.n_nodes
    if step_cap <= net.n_nodes:
        raise ValueError("step_cap must exceed the node count")
    report = SimulationReport(seed=seed, runs_per_unit=runs_per_unit, step_cap=step_cap)

    for (s_name, d_id), sd in sorted(solution.sub.items()):
        s_idx = instance.stratum_names.index(s_name)
        d = net.node_index[d_id]
        kappa = solution.price_rates[s_idx] * net.length * net.is_primary
        cum = _segment_cumsum(sd.arc_probs, net.out_start)
        for pos, origin_idx in enumerate(sd.origins):
            o = int(origin_idx)
            n_units = int(round(sd.trips[pos]))
            p_start = float(sd.start_prob[pos])
            for rep in range(n_units * runs_per_unit):
                rng = np.random.default_rng(
                    np.random.SeedSequence(entropy=seed, spawn_key=(s_idx, o, d, rep)))
                if rng.random() >= p_start:
                    report.trips.append(SimulatedTrip(
                        s_name, net.node_id(o), d_id, False, [], 0.0, 0.0, 0.0, 0.0, False))
                    continue
                trip = _walk(net, sd, cum, o, d, kappa, solution.arc_time,
                             step_cap, rng, keep_paths)
                trip.stratum, trip.origin, trip.destination = s_name, net.node_id(o), d_id
                if trip.truncated:
                    report.truncated_count += 1
                report.trips.append(trip)
    return report


def _segment_cumsum(probs: np.ndarray, out_start: np.ndarray) -> np.ndarray:
    cum = np.cumsum(probs)
    seg_offsets = np.concatenate(([0.0], cum[out_start[1:-1] - 1]))
    return cum - np.repeat(seg_offsets, np.diff(out_start))


def _walk(net: Network, sd, cum, origin: int, dest: int, kappa, arc_time,
          step_cap: int, rng, keep_paths: bool) -> SimulatedTrip:
    node = origin
    t = m = dist = prim = 0.0
    path = []
    for _step in range(step_cap):
        if node == dest:
            return SimulatedTrip("", "", "", True, path, t, m, dist, prim, False)
        lo, hi = net.out_start[node], net.out_start[node + 1]
        r = rng.random()
        a = lo + int(np.searchsorted(cum[lo:hi], r, side="right"))
        a = min(a, hi - 1)
        t += arc_time[a]
        m += kappa[a]
        dist += net.length[a]
        if net.is_primary[a]:
            prim += net.length[a]
        if keep_paths:
            path.append(net.arcs[a].id)
        node = int(net.head[a])
    return SimulatedTrip("", "", "", True, path, t, m, dist, prim, node != dest)
