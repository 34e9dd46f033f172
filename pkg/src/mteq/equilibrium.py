"""Equilibrium flow computation.

The arc flows of a Markovian traffic equilibrium reproduce themselves: flows
determine congested times, times determine per-stratum expected optimal
costs (a logit fixed point per stratum and destination), costs determine
choice and trip-start probabilities, and those probabilities route the
demand back onto the arcs.  The solver runs a damped first-order outer loop
on the flow vector with, per (stratum, destination), a warm-started fixed
point for the expected costs and one sparse linear solve for the node
throughputs.
"""

from __future__ import annotations

import time as _time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import spsolve

from . import choice
from .network import Network, shortest_costs


class FeasibilityError(RuntimeError):
    """The expected-cost fixed point diverges: at the given costs agents do
    not reach their destination in finite expected cost, so no equilibrium
    exists (typically the logit time sensitivity is too small relative to
    the arc costs)."""


class SolverError(RuntimeError):
    """Numerical failure inside a subproblem (singular routing system)."""


@dataclass
class SolverOptions:
    """Tolerances and iteration controls.

    ``step_rule`` identifies the damping schedule of the outer loop; the
    default keeps a 1/(k+1) schedule floored at 0.125.  ``divergence_guard``
    bounds the admissible magnitude of expected costs; the window/decay pair
    detects steadily escaping fixed-point iterations long before the guard
    magnitude is reached.
    """

    inner_tol: float = 1e-1
    inner_max_iters: int = 1000
    outer_tol: float = 10.0
    outer_max_iters: int = 10
    step_rule: str = "max(0.125, 1/(k+1))"
    norm: str = "sup"
    divergence_guard: float = 1e9
    divergence_window: int = 50
    divergence_decay: float = 0.95

    def __post_init__(self):
        if self.inner_tol <= 0 or self.outer_tol <= 0:
            raise ValueError("tolerances must be positive")
        if self.inner_max_iters < 1 or self.outer_max_iters < 1:
            raise ValueError("iteration caps must be >= 1")
        if self.norm != "sup":
            raise ValueError(f"unsupported norm {self.norm!r}")

    def step_size(self, k: int) -> float:
        rule = self.step_rule.replace(" ", "")
        if rule == "max(0.125,1/(k+1))":
            return max(0.125, 1.0 / (k + 1))
        if rule == "1/(k+1)":
            return 1.0 / (k + 1)
        try:
            return float(rule)
        except ValueError:
            raise ValueError(f"unknown step rule {self.step_rule!r}")


@dataclass
class TauResult:
    tau: np.ndarray
    converged: bool
    iterations: int
    residual: float


@dataclass
class StratumDestinationSolution:
    """Routing of one stratum toward one destination at fixed arc times."""

    stratum: str
    destination: str
    tau: np.ndarray            # expected optimal cost per node, tau[dest] = 0
    entering_flow: np.ndarray  # x per node
    arc_flow: np.ndarray       # v per arc (storage order)
    arc_probs: np.ndarray      # choice probability per arc at its tail node
    origins: np.ndarray        # node indices with positive demand
    trips: np.ndarray          # demand per origin
    start_prob: np.ndarray     # 1 - P_outside per origin
    tau_converged: bool
    tau_residual: float
    tau_iterations: int

    def started_demand(self) -> float:
        return float(np.sum(self.trips * self.start_prob))


@dataclass
class EquilibriumSolution:
    """Converged (or capped, see ``converged``) equilibrium state.

    ``total_flow`` is the outer iterate at which the final routing pass was
    solved and ``arc_time`` its congested times; ``response_flow`` is the
    demand-weighted flow those times induce.  At convergence the two agree
    to within ``outer_residual <= outer_tol``.
    """

    total_flow: np.ndarray
    arc_time: np.ndarray
    response_flow: np.ndarray
    sub: dict
    stratum_flow: dict
    price_rates: np.ndarray
    converged: bool
    inner_converged: bool
    outer_iterations: int
    outer_residual: float
    iteration_log: list = field(default_factory=list)

    def subsolution(self, stratum: str, destination: str) -> StratumDestinationSolution:
        return self.sub[(stratum, destination)]


def warm_start_tau(network: Network, arc_costs: np.ndarray, destination: int) -> np.ndarray:
    """Cheapest cost-to-destination under the generalized arc costs; a valid
    upper bound on the expected optimal costs and the fixed-point start."""
    return shortest_costs(network, arc_costs, destination)


def solve_tau(network: Network, costs: np.ndarray, destination: int, beta_t: float,
              tau_init: np.ndarray, options: SolverOptions) -> TauResult:
    """Fixed point of the expected-minimum recursion at fixed arc costs.

    Jacobi sweeps tau <- phi(costs + tau[head]) with the destination pinned
    at zero.  The sweep map is sup-norm nonexpansive, so once the update
    step drops below ``inner_tol`` the returned point has a fixed-point
    residual no larger than that.  Raises FeasibilityError when the iterates
    escape downward (no finite fixed point).
    """
    if not np.all(np.isfinite(tau_init)):
        raise ValueError("tau_init must be finite")
    tau = np.array(tau_init, dtype=float)
    tau[destination] = 0.0
    head, out_start = network.head, network.out_start
    floor = -(1.0 + 2.0 * float(np.max(np.abs(tau_init))))
    window = options.divergence_window
    deltas: list[float] = []
    consec_drop = 0
    prev_min = float(tau.min())

    delta = np.inf
    for it in range(1, options.inner_max_iters + 1):
        z = costs + tau[head]
        new = choice.phi_nodes(z, beta_t, out_start)
        new[destination] = 0.0
        delta = float(np.max(np.abs(new - tau)))
        tau = new

        if not np.all(np.isfinite(tau)) or np.max(np.abs(tau)) > options.divergence_guard:
            raise FeasibilityError(
                "expected optimal costs exceed the divergence guard; no finite "
                "equilibrium at these costs")
        cur_min = float(tau.min())
        consec_drop = consec_drop + 1 if cur_min < prev_min - 1e-300 else 0
        prev_min = cur_min
        deltas.append(delta)
        if (consec_drop >= window and cur_min < floor
                and deltas[-1] >= options.divergence_decay * deltas[-window]):
            raise FeasibilityError(
                "expected optimal costs decrease without bound; agents do not "
                "reach the destination in finite expected cost")
        if delta <= options.inner_tol:
            return TauResult(tau=tau, converged=True, iterations=it, residual=delta)
    return TauResult(tau=tau, converged=False, iterations=options.inner_max_iters,
                     residual=delta)


def flows_for_destination(network: Network, tau: np.ndarray, costs: np.ndarray,
                          beta_t: float, origins: np.ndarray, trips: np.ndarray,
                          outside_cost: np.ndarray, beta_t_out: float,
                          destination: int, *, stratum: str = "",
                          tau_result: TauResult | None = None) -> StratumDestinationSolution:
    """Route one (stratum, destination) demand column at fixed costs.

    Demand at each origin is first scaled by the start probability against
    the outside option, then pushed through the choice chain: node
    throughputs x solve (I - P^T) x = y restricted to non-destination nodes,
    and arc flows follow as v = x[tail] * P.
    """
    n = network.n_nodes
    z = costs + tau[network.head]
    probs = choice.probs_nodes(z, beta_t, network.out_start)
    log_denom = choice.log_denominator_nodes(z, beta_t, network.out_start)
    p_out, p_start = choice.outside_prob_from_log_denominator(
        outside_cost, log_denom[origins], beta_t_out)

    y = np.zeros(n)
    np.add.at(y, origins, trips * p_start)
    y[destination] = 0.0

    mask = (network.tail != destination) & (network.head != destination)
    trans = sp.csr_matrix(
        (probs[mask], (network.head[mask], network.tail[mask])), shape=(n, n))
    A = sp.identity(n, format="csr") - trans
    x = spsolve(A, y)

    scale = max(1.0, float(np.max(np.abs(y))))
    resid = float(np.max(np.abs(A @ x - y)))
    if resid > 1e-8 * scale:
        x = x + spsolve(A, y - A @ x)
        resid = float(np.max(np.abs(A @ x - y)))
        if resid > 1e-6 * scale:
            raise SolverError(
                f"routing system ill-conditioned for destination "
                f"{network.node_id(destination)!r} (residual {resid:.3e})")
    if float(x.min()) < -1e-7 * scale:
        raise SolverError(
            f"negative node throughput for destination "
            f"{network.node_id(destination)!r}; routing matrix not substochastic")
    x = np.maximum(x, 0.0)

    v = x[network.tail] * probs
    v[network.tail == destination] = 0.0

    tr = tau_result or TauResult(tau, True, 0, 0.0)
    return StratumDestinationSolution(
        stratum=stratum,
        destination=network.node_id(destination),
        tau=tau,
        entering_flow=x,
        arc_flow=v,
        arc_probs=probs,
        origins=np.asarray(origins),
        trips=np.asarray(trips, dtype=float),
        start_prob=p_start,
        tau_converged=tr.converged,
        tau_residual=tr.residual,
        tau_iterations=tr.iterations,
    )


def _stratum_cost_tables(instance, rates: np.ndarray):
    """Per stratum: toll cost per arc and the outside-cost arrays per
    destination, resolved to node indices once up front."""
    net = instance.network
    kappa, demand, outside = [], [], []
    oc_all = _outside_cost_lookup(instance)
    for s_idx, s in enumerate(instance.strata):
        kappa.append(rates[s_idx] * net.length * net.is_primary)
        cols = instance.demand_by_destination(s.name)
        demand.append(cols)
        outside.append({
            d: np.array([oc_all[(s.name, net.node_id(o), net.node_id(d))] for o in origins])
            for d, (origins, _) in cols.items()
        })
    return kappa, demand, outside


def _outside_cost_lookup(instance):
    from .instance import outside_costs
    return outside_costs(instance)


def solve_equilibrium(instance, prices, options: SolverOptions | None = None, *,
                      workers: int = 1, initial_flow: np.ndarray | None = None,
                      log_fn=None) -> EquilibriumSolution:
    """Damped fixed-point iteration on the arc-flow vector.

    ``prices`` carries per-stratum per-arc toll rates (money per km); an
    object with a ``rates`` attribute or a plain (n_strata, n_arcs) array.
    The returned solution snapshots the last routing pass, so its costs,
    probabilities and subflows are mutually consistent at ``arc_time``.
    """
    opts = options or instance.solver
    net = instance.network
    rates = np.asarray(getattr(prices, "rates", prices), dtype=float)
    if rates.shape != (len(instance.strata), net.n_arcs):
        raise ValueError(
            f"price rates must have shape ({len(instance.strata)}, {net.n_arcs})")
    if np.any(rates < 0):
        raise ValueError("price rates must be nonnegative")

    kappa, demand, outside = _stratum_cost_tables(instance, rates)
    pairs = [(s_idx, d) for s_idx in range(len(instance.strata))
             for d in demand[s_idx].keys()]

    f = np.zeros(net.n_arcs) if initial_flow is None else np.array(initial_flow, dtype=float)
    if f.shape != (net.n_arcs,) or np.any(f < 0) or not np.all(np.isfinite(f)):
        raise ValueError("initial_flow must be a finite nonnegative arc vector")

    t0_wall = _time.perf_counter()
    sub: dict = {}
    response = np.zeros(net.n_arcs)
    gap = np.inf
    converged = False
    iteration_log: list[dict] = []

    for k in range(opts.outer_max_iters):
        t = net.latency_all(f)

        def run_pair(job):
            s_idx, d = job
            s = instance.strata[s_idx]
            costs = t + (s.beta_p / s.beta_t) * kappa[s_idx]
            tau0 = warm_start_tau(net, costs, d)
            tr = solve_tau(net, costs, d, s.beta_t, tau0, opts)
            origins, trips = demand[s_idx][d]
            return flows_for_destination(
                net, tr.tau, costs, s.beta_t, origins, trips,
                outside[s_idx][d], s.beta_t_out, d,
                stratum=s.name, tau_result=tr)

        if workers > 1 and len(pairs) > 1:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                results = list(pool.map(run_pair, pairs))
        else:
            results = [run_pair(p) for p in pairs]

        sub = {}
        response = np.zeros(net.n_arcs)
        for (s_idx, d), sd in zip(pairs, results):
            sub[(instance.strata[s_idx].name, net.node_id(d))] = sd
            response = response + sd.arc_flow  # fixed pair order: reproducible sums

        if not np.all(np.isfinite(response)):
            raise SolverError("non-finite flow response")
        gap = float(np.max(np.abs(f - response))) if response.size else 0.0
        rec = {"iteration": k, "residual": gap,
               "wall_time": _time.perf_counter() - t0_wall}
        iteration_log.append(rec)
        if log_fn is not None:
            log_fn(rec)
        if gap <= opts.outer_tol:
            converged = True
            break
        if k == opts.outer_max_iters - 1:
            break
        alpha = opts.step_size(k)
        f = (1.0 - alpha) * f + alpha * response

    stratum_flow = {}
    for s in instance.strata:
        total = np.zeros(net.n_arcs)
        for (name, _d), sd in sorted(sub.items()):
            if name == s.name:
                total = total + sd.arc_flow
        stratum_flow[s.name] = total

    return EquilibriumSolution(
        total_flow=f,
        arc_time=net.latency_all(f),
        response_flow=response,
        sub=sub,
        stratum_flow=stratum_flow,
        price_rates=rates,
        converged=converged,
        inner_converged=all(sd.tau_converged for sd in sub.values()),
        outer_iterations=len(iteration_log),
        outer_residual=gap,
        iteration_log=iteration_log,
    )


SOLUTION_SCHEMA_VERSION = 1


def solution_to_dict(solution: EquilibriumSolution, network: Network) -> dict:
    """JSON-ready form of a solution; inverse of solution_from_dict."""
    return {
        "schema_version": SOLUTION_SCHEMA_VERSION,
        "arc_ids": [a.id for a in network.arcs],
        "total_flow": solution.total_flow.tolist(),
        "arc_time": solution.arc_time.tolist(),
        "response_flow": solution.response_flow.tolist(),
        "price_rates": solution.price_rates.tolist(),
        "stratum_flow": {k: v.tolist() for k, v in solution.stratum_flow.items()},
        "converged": solution.converged,
        "inner_converged": solution.inner_converged,
        "outer_iterations": solution.outer_iterations,
        "outer_residual": solution.outer_residual,
        # wall times are dropped so identical runs serialize identically
        "iteration_log": [
            {"iteration": r["iteration"], "residual": r["residual"]}
            for r in solution.iteration_log
        ],
        "sub": {
            f"{s}|{d}": {
                "tau": sd.tau.tolist(),
                "entering_flow": sd.entering_flow.tolist(),
                "arc_flow": sd.arc_flow.tolist(),
                "arc_probs": sd.arc_probs.tolist(),
                "origins": sd.origins.tolist(),
                "trips": sd.trips.tolist(),
                "start_prob": sd.start_prob.tolist(),
                "tau_converged": sd.tau_converged,
                "tau_residual": sd.tau_residual,
                "tau_iterations": sd.tau_iterations,
            }
            for (s, d), sd in sorted(solution.sub.items())
        },
    }


def solution_from_dict(doc: dict, network: Network) -> EquilibriumSolution:
    if doc.get("schema_version") != SOLUTION_SCHEMA_VERSION:
        raise ValueError(
            f"solution schema version {doc.get('schema_version')} != {SOLUTION_SCHEMA_VERSION}")
    if doc["arc_ids"] != [a.id for a in network.arcs]:
        raise ValueError("solution was computed on a different network (arc ids differ)")
    sub = {}
    for key, sd in doc["sub"].items():
        s, d = key.split("|", 1)
        sub[(s, d)] = StratumDestinationSolution(
            stratum=s,
            destination=d,
            tau=np.array(sd["tau"]),
            entering_flow=np.array(sd["entering_flow"]),
            arc_flow=np.array(sd["arc_flow"]),
            arc_probs=np.array(sd["arc_probs"]),
            origins=np.array(sd["origins"], dtype=np.int64),
            trips=np.array(sd["trips"]),
            start_prob=np.array(sd["start_prob"]),
            tau_converged=sd["tau_converged"],
            tau_residual=sd["tau_residual"],
            tau_iterations=sd["tau_iterations"],
        )
    return EquilibriumSolution(
        total_flow=np.array(doc["total_flow"]),
        arc_time=np.array(doc["arc_time"]),
        response_flow=np.array(doc["response_flow"]),
        sub=sub,
        stratum_flow={k: np.array(v) for k, v in doc["stratum_flow"].items()},
        price_rates=np.array(doc["price_rates"]),
        converged=doc["converged"],
        inner_converged=doc["inner_converged"],
        outer_iterations=doc["outer_iterations"],
        outer_residual=doc["outer_residual"],
        iteration_log=list(doc["iteration_log"]),
    )


@dataclass
class EquilibriumDiagnostics:
    flow_residual: float
    tau_residuals: dict
    phi_gradient_residual: float
    tau_bound_violation: float
    fd_checks: dict | None = None

    @property
    def max_tau_residual(self) -> float:
        return max(self.tau_residuals.values()) if self.tau_residuals else 0.0


def equilibrium_residuals(instance, prices, solution: EquilibriumSolution, *,
                          fd_arcs=None, fd_step: float = 1e-5,
                          fd_options: SolverOptions | None = None) -> EquilibriumDiagnostics:
    """Self-consistency residuals of a solution, all evaluated at its
    ``arc_time``:

    - flow residual: sup gap between the flow iterate and the aggregated
      per-(stratum, destination) arc flows;
    - per-(stratum, destination) fixed-point residual of the expected costs;
    - stationarity residual max_a |inverse_latency(t_a) - sum v_a|, which
      coincides with the flow residual whenever t = latency(flow) (kept as a
      cross-check of the latency inverse);
    - worst violation of the shortest-cost upper bound on expected costs;
    - optionally, for each arc in ``fd_arcs``, a central finite-difference
      check that the demand-weighted sensitivity of expected costs to that
      arc's time reproduces its flow.  The expected costs are re-solved with
      the perturbed time while flows (and hence start probabilities) stay
      frozen; demand enters scaled by the frozen start probabilities.
    """
    net = instance.network
    rates = np.asarray(getattr(prices, "rates", prices), dtype=float)
    t = solution.arc_time

    agg = np.zeros(net.n_arcs)
    for _key, sd in sorted(solution.sub.items()):
        agg = agg + sd.arc_flow
    flow_residual = float(np.max(np.abs(solution.total_flow - agg))) if agg.size else 0.0

    congestible = net.bpr_gamma > 0  # flat arcs have no latency inverse
    grad = (net.inverse_latency_all(t) - agg)[congestible]
    phi_gradient_residual = float(np.max(np.abs(grad))) if grad.size else 0.0

    strata = {s.name: (i, s) for i, s in enumerate(instance.strata)}
    tau_residuals = {}
    bound_violation = 0.0
    for (s_name, d_id), sd in sorted(solution.sub.items()):
        s_idx, s = strata[s_name]
        kappa = rates[s_idx] * net.length * net.is_primary
        costs = t + (s.beta_p / s.beta_t) * kappa
        d = net.node_index[d_id]
        z = costs + sd.tau[net.head]
        phi = choice.phi_nodes(z, s.beta_t, net.out_start)
        phi[d] = 0.0
        tau_residuals[(s_name, d_id)] = float(np.max(np.abs(phi - sd.tau)))
        bound = shortest_costs(net, costs, d)
        bound_violation = max(bound_violation, float(np.max(sd.tau - bound)))

    fd_checks = None
    if fd_arcs is not None:
        fd_checks = {}
        fd_opts = fd_options or SolverOptions(
            inner_tol=min(1e-10, fd_step * 1e-3), inner_max_iters=200000,
            outer_tol=instance.solver.outer_tol, outer_max_iters=1)
        for arc_pos in fd_arcs:
            arc_id = net.arcs[arc_pos].id
            for (s_name, d_id), sd in sorted(solution.sub.items()):
                s_idx, s = strata[s_name]
                kappa = rates[s_idx] * net.length * net.is_primary
                d = net.node_index[d_id]
                weighted = np.zeros(net.n_nodes)
                np.add.at(weighted, sd.origins, sd.trips * sd.start_prob)
                est = 0.0
                for sign in (+1.0, -1.0):
                    tp = t.copy()
                    tp[arc_pos] += sign * fd_step
                    costs = tp + (s.beta_p / s.beta_t) * kappa
                    tr = solve_tau(net, costs, d, s.beta_t, sd.tau, fd_opts)
                    est += sign * float(weighted @ tr.tau)
                fd_checks[(arc_id, s_name, d_id)] = (
                    est / (2.0 * fd_step), float(sd.arc_flow[arc_pos]))

    return EquilibriumDiagnostics(
        flow_residual=flow_residual,
        tau_residuals=tau_residuals,
        phi_gradient_residual=phi_gradient_residual,
        tau_bound_violation=bound_violation,
        fd_checks=fd_checks,
    )
