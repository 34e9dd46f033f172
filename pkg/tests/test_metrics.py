import math

import numpy as np
import pytest

from mteq import (
    SchemeSpec,
    SolverOptions,
    baseline_trip_stats,
    compute_metrics,
    expand_scheme,
    expected_trip_stats,
    primary_flow_share,
    revenue,
    simulate_trips,
    solve_equilibrium,
    total_revenue,
    total_welfare,
    welfare,
    zero_prices,
)
from mteq.equilibrium import StratumDestinationSolution
from mteq.metrics import _absorbing_expectations, all_trip_stats
from mteq.network import Node, build_network
from mteq.synthgen import gen_single_od

from conftest import flat_arc, two_route_instance

OPTS = SolverOptions(inner_tol=1e-10, inner_max_iters=10000,
                     outer_tol=1e-8, outer_max_iters=3000)


def solved(instance, rate=0.0):
    prices = expand_scheme(SchemeSpec(family="uniform", rate=rate), instance)
    return solve_equilibrium(instance, prices, OPTS), prices


class TestExpectedTripStats:
    def test_deterministic_chain(self, line_network):
        inst = two_route_instance()  # only for strata shape; network replaced
        from mteq import DemandEntry, Instance, OutsideOption, Stratum
        chain = Instance(
            network=line_network,
            strata=[Stratum("s", 1.0, 1.0, 1.0, 1.0)],
            demand=[DemandEntry("s", "0", "2", 5.0)],
            outside=OutsideOption(mode="per_od_table", ticket=0.0,
                                  times={("0", "2"): 1e6}),
            solver=OPTS)
        sol, _ = solved(chain)
        rows = expected_trip_stats(chain, sol, "s", "2")
        assert len(rows) == 1
        assert rows[0].time == pytest.approx(7.0, rel=1e-12)
        assert rows[0].distance == pytest.approx(7.0, rel=1e-12)
        assert rows[0].start_prob == pytest.approx(1.0, abs=1e-12)

    def test_two_equal_parallel_arcs(self, parallel_network):
        from mteq import DemandEntry, Instance, OutsideOption, Stratum
        inst = Instance(
            network=parallel_network,
            strata=[Stratum("s", 1.0, 1.0, 1.0, 1.0)],
            demand=[DemandEntry("s", "0", "1", 4.0)],
            outside=OutsideOption(mode="per_od_table", ticket=0.0,
                                  times={("0", "1"): 1e6}),
            solver=OPTS)
        sol, _ = solved(inst)
        rows = expected_trip_stats(inst, sol, "s", "1")
        assert rows[0].time == pytest.approx(5.0, rel=1e-12)

    def test_even_split_weighted_average(self, parallel_network):
        # hand-built 50/50 split over direct arcs with times 4 and 6
        net = parallel_network
        sd = StratumDestinationSolution(
            stratum="s", destination="1",
            tau=np.zeros(net.n_nodes), entering_flow=np.zeros(net.n_nodes),
            arc_flow=np.zeros(net.n_arcs),
            arc_probs=np.array([0.5, 0.5, 1.0]),
            origins=np.array([0]), trips=np.array([1.0]),
            start_prob=np.array([1.0]),
            tau_converged=True, tau_residual=0.0, tau_iterations=1)
        times = np.array([4.0, 6.0, 1.0])
        exp = _absorbing_expectations(net, sd, times[:, None], net.node_index["1"])
        assert exp[net.node_index["0"], 0] == pytest.approx(5.0, rel=1e-12)


class TestWelfare:
    def test_no_pricing_has_zero_delta(self):
        inst = gen_single_od()
        sol0, _ = solved(inst)
        for s in inst.stratum_names:
            w, dw = welfare(inst, sol0, sol0, s)
            assert dw == 0.0

    def test_money_only_loss(self):
        # single tolled route and flat latency: t(p) = t(0) exactly, so the
        # welfare is minus the sensitivity-weighted toll: 0.5 * 50 * 2km = 50
        from mteq import DemandEntry, Instance, OutsideOption, Stratum
        from mteq.network import Arc
        arcs = [
            Arc(id="prim", tail="0", head="1", length_km=2.0, free_speed_kmh=1.0,
                lanes=2, road_class="primary", capacity=8.0, bpr_gamma=0.0),
            Arc(id="back", tail="1", head="0", length_km=3.0, free_speed_kmh=1.0,
                capacity=5.0, bpr_gamma=0.0),
        ]
        inst = Instance(
            network=build_network([Node("0", 0, 0), Node("1", 1, 0)], arcs),
            strata=[Stratum("s", beta_t=1.0, beta_p=0.5, beta_t_out=1.0, beta_p_out=1.0)],
            demand=[DemandEntry("s", "0", "1", 10.0)],
            outside=OutsideOption(mode="per_od_table", ticket=0.0,
                                  times={("0", "1"): 1e9}),
            solver=OPTS)
        sol0, _ = solved(inst)
        solp, _prices = solved(inst, rate=50.0)
        sd = solp.subsolution("s", "1")
        assert sd.start_prob[0] == pytest.approx(1.0, abs=1e-12)
        stats = all_trip_stats(inst, solp)[("s", "0", "1")]
        assert stats.money == pytest.approx(100.0, rel=1e-12)
        w, _dw = welfare(inst, solp, sol0, "s")
        assert w == pytest.approx(-50.0, rel=1e-9)

    def test_all_outside_degenerates_to_outside_term(self):
        # drive cost is astronomically above the outside option
        inst = two_route_instance(outside_time=1.0, ticket=0.5, congestible=False)
        huge = [
            type(a)(id=a.id, tail=a.tail, head=a.head, length_km=1e5,
                    free_speed_kmh=1.0, lanes=a.lanes, road_class=a.road_class,
                    capacity=a.capacity, bpr_gamma=0.0)
            for a in inst.network.arcs
        ]
        slow = type(inst)(network=build_network(list(inst.network.nodes), huge),
                          strata=inst.strata, demand=inst.demand,
                          outside=inst.outside, solver=inst.solver)
        sol0, _ = solved(slow)
        sd = sol0.subsolution("solo", "1")
        assert sd.start_prob[0] == pytest.approx(0.0, abs=1e-12)
        w, _dw = welfare(slow, sol0, sol0, "solo")
        stats0 = all_trip_stats(slow, sol0)[("solo", "0", "1")]
        expected = stats0.time - 1.0 - 0.5  # t0 - outside time - fare
        assert w == pytest.approx(expected, rel=1e-12)

    def test_total_welfare_sums(self):
        assert total_welfare({"a": 1.0, "b": 2.0, "c": 3.0}) == 6.0
        assert total_welfare([0.0, 0.0]) == 0.0
        assert total_welfare({"low": -837.0, "mid": 10.0, "high": 20.0}) == -807.0


class TestRevenue:
    def test_zero_prices_zero_revenue(self):
        inst = two_route_instance()
        sol, prices = solved(inst)
        assert revenue(sol, prices, "solo", inst) == 0.0

    def test_flow_times_toll(self):
        # all 10 trips forced over the 2 km primary arc at rate 100
        inst = two_route_instance(outside_time=1e9, congestible=False)
        only_prim = [a for a in inst.network.arcs if a.id != "sec"]
        net = build_network(list(inst.network.nodes), only_prim)
        forced = type(inst)(network=net, strata=inst.strata, demand=inst.demand,
                            outside=inst.outside, solver=inst.solver)
        sol, prices = solved(forced, rate=100.0)
        assert sol.stratum_flow["solo"][net.arc_index["prim"]] == pytest.approx(10.0, rel=1e-9)
        assert revenue(sol, prices, "solo", forced) == pytest.approx(2000.0, rel=1e-9)
        assert total_revenue(sol, prices, forced) == pytest.approx(2000.0, rel=1e-9)

    def test_secondary_only_flow_earns_nothing(self):
        inst = two_route_instance(outside_time=1e9, congestible=False)
        only_sec = [a for a in inst.network.arcs if a.id != "prim"]
        net = build_network(list(inst.network.nodes), only_sec)
        forced = type(inst)(network=net, strata=inst.strata, demand=inst.demand,
                            outside=inst.outside, solver=inst.solver)
        sol, prices = solved(forced, rate=500.0)
        assert revenue(sol, prices, "solo", forced) == 0.0

    def test_linear_in_price_at_frozen_flows(self):
        inst = two_route_instance(outside_time=1e9)
        sol, prices = solved(inst, rate=10.0)
        r1 = revenue(sol, prices.rates, "solo", inst)
        r2 = revenue(sol, 2.0 * prices.rates, "solo", inst)
        assert r2 == pytest.approx(2.0 * r1, rel=1e-12)

    def test_revenue_equals_demand_weighted_expected_money(self):
        inst = two_route_instance()
        sol, prices = solved(inst, rate=3.0)
        stats = all_trip_stats(inst, sol)[("solo", "0", "1")]
        paid = 10.0 * stats.start_prob * stats.money
        assert revenue(sol, prices, "solo", inst) == pytest.approx(paid, rel=1e-8)


class TestPrimaryShare:
    def test_extremes_and_ratio(self):
        inst = two_route_instance(congestible=False)
        sol, _ = solved(inst)
        net = inst.network
        f = sol.stratum_flow["solo"]
        prim, sec = net.arc_index["prim"], net.arc_index["sec"]
        share = primary_flow_share(sol, "solo", inst)
        expect = f[prim] * 2.0 / (f[prim] * 2.0 + f[sec] * 3.0)
        assert share == pytest.approx(expect, rel=1e-12)

    def test_equal_flows_equal_lengths_is_half(self):
        inst = two_route_instance()
        sol, _ = solved(inst)
        sol.stratum_flow["solo"] = np.array([7.0, 7.0, 0.0])  # prim, sec, back
        net = inst.network
        fake_lengths = net.length.copy()
        share = primary_flow_share(sol, "solo", inst, weight="flow")
        assert share == pytest.approx(0.5, rel=1e-12)

    def test_zero_flow_is_undefined(self):
        inst = two_route_instance()
        sol, _ = solved(inst)
        sol.stratum_flow["solo"] = np.zeros(inst.network.n_arcs)
        assert math.isnan(primary_flow_share(sol, "solo", inst))


class TestSimulation:
    def test_never_started_when_outside_dominates(self):
        inst = two_route_instance(outside_time=0.0, ticket=0.0, congestible=False)
        # make driving hopeless so the start probability collapses to zero
        huge = [
            type(a)(id=a.id, tail=a.tail, head=a.head, length_km=1e5,
                    free_speed_kmh=1.0, lanes=a.lanes, road_class=a.road_class,
                    capacity=a.capacity, bpr_gamma=0.0)
            for a in inst.network.arcs
        ]
        slow = type(inst)(network=build_network(list(inst.network.nodes), huge),
                          strata=inst.strata, demand=inst.demand,
                          outside=inst.outside, solver=inst.solver)
        sol, _ = solved(slow)
        rep = simulate_trips(slow, sol, runs_per_unit=5, seed=1)
        assert rep.started_proportion("solo") == 0.0
        assert len(rep.trips) == 50

    def test_deterministic_chain_times_exact(self, line_network):
        from mteq import DemandEntry, Instance, OutsideOption, Stratum
        chain = Instance(
            network=line_network,
            strata=[Stratum("s", 1.0, 1.0, 1.0, 1.0)],
            demand=[DemandEntry("s", "0", "2", 3.0)],
            outside=OutsideOption(mode="per_od_table", ticket=0.0,
                                  times={("0", "2"): 1e6}),
            solver=OPTS)
        sol, _ = solved(chain)
        rep = simulate_trips(chain, sol, runs_per_unit=4, seed=0)
        done = rep.completed("s")
        assert len(done) == 12
        assert all(t.time == pytest.approx(7.0, rel=1e-12) for t in done)

    def test_two_route_shares_within_3_sigma(self):
        inst = two_route_instance(outside_time=1e9, congestible=False, trips=100.0)
        sol, _ = solved(inst)
        sd = sol.subsolution("solo", "1")
        net = inst.network
        p_prim = sd.arc_probs[net.arc_index["prim"]]
        rep = simulate_trips(inst, sol, runs_per_unit=100, seed=3)
        done = rep.completed("solo")
        n = len(done)
        assert n == 10000
        frac = sum(net.arcs[net.arc_index["prim"]].id in ("prim",) and t.primary_distance > 0
                   for t in done) / n
        se = math.sqrt(p_prim * (1 - p_prim) / n)
        assert abs(frac - p_prim) <= 3 * se

    def test_step_cap_truncates_and_keeps_trips(self):
        # near-uniform choice at the middle node bounces walks back toward
        # the origin, so a tight step cap truncates a visible fraction
        from mteq import DemandEntry, Instance, OutsideOption, Stratum
        nodes = [Node("0", 0, 0), Node("1", 1, 0), Node("2", 2, 0)]
        arcs = [flat_arc("f01", "0", "1", 1.0), flat_arc("b10", "1", "0", 1.0),
                flat_arc("f12", "1", "2", 1.0), flat_arc("ret", "2", "0", 1.0)]
        inst = Instance(
            network=build_network(nodes, arcs),
            strata=[Stratum("s", beta_t=0.01, beta_p=1.0, beta_t_out=0.01, beta_p_out=1.0)],
            demand=[DemandEntry("s", "0", "2", 10.0)],
            outside=OutsideOption(mode="per_od_table", ticket=0.0,
                                  times={("0", "2"): 1e6}),
            solver=OPTS)
        sol, _ = solved(inst)
        rep = simulate_trips(inst, sol, runs_per_unit=10, seed=5,
                             step_cap=inst.network.n_nodes + 1)
        assert rep.truncated_count > 0
        assert len(rep.trips) == 100
        truncated = [t for t in rep.trips if t.truncated]
        assert len(truncated) == rep.truncated_count
        assert all(t.started for t in truncated)

    def test_seed_reproducibility(self):
        inst = two_route_instance()
        sol, _ = solved(inst)
        a = simulate_trips(inst, sol, runs_per_unit=3, seed=11)
        b = simulate_trips(inst, sol, runs_per_unit=3, seed=11)
        c = simulate_trips(inst, sol, runs_per_unit=3, seed=12)
        assert [(t.time, t.started) for t in a.trips] == [(t.time, t.started) for t in b.trips]
        assert [(t.time, t.started) for t in a.trips] != [(t.time, t.started) for t in c.trips]

    def test_aggregates_invariant_to_trip_order(self):
        inst = two_route_instance()
        sol, _ = solved(inst)
        rep = simulate_trips(inst, sol, runs_per_unit=5, seed=2)
        speed = rep.avg_speed("solo")
        share = rep.primary_share("solo")
        rep.trips.reverse()
        assert rep.avg_speed("solo") == speed
        assert rep.primary_share("solo") == share


class TestReport:
    def test_report_assembles_and_serializes(self):
        inst = gen_single_od()
        sol0, _ = solved(inst)
        solp, prices = solved(inst, rate=25.0)
        rep = compute_metrics(inst, solp, baseline_trip_stats(inst, sol0), prices,
                              scheme_id="uniform_p25")
        assert rep.total_welfare == pytest.approx(total_welfare(rep.welfare), rel=1e-12)
        assert set(rep.trips_started) == {"high", "mid", "low"}
        d = rep.to_dict()
        assert d["scheme_id"] == "uniform_p25"
        assert len(d["per_od"]) == 3
        # toll-free baseline against itself: exact zero deltas
        rep0 = compute_metrics(inst, sol0, baseline_trip_stats(inst, sol0),
                               zero_prices(inst), scheme_id="uniform_p0")
        assert all(v == 0.0 for v in rep0.welfare_delta.values())
        assert rep0.total_revenue == 0.0
