import numpy as np
import pytest

from mteq import (
    Arc,
    NetworkError,
    Node,
    build_network,
    default_capacity,
    extract_core,
    inverse_latency,
    latency,
    monetary_cost,
    shortest_costs,
    strongly_connected,
)
from mteq.synthgen import gen_single_od

from conftest import flat_arc


def bpr_arc(t0=10.0, gamma=0.02, nu=2.0, capacity=100.0, road_class="secondary",
            length=None):
    length = t0 if length is None else length
    return Arc(id="a", tail="0", head="1", length_km=length,
               free_speed_kmh=length / t0, road_class=road_class,
               capacity=capacity, bpr_gamma=gamma, bpr_nu=nu)


class TestBuild:
    def test_minimal_cycle_adjacency(self):
        net = build_network(
            [Node("0", 0, 0), Node("1", 1, 0)],
            [flat_arc("f", "0", "1", 1.0), flat_arc("b", "1", "0", 1.0)])
        assert net.out_degree.tolist() == [1, 1]

    def test_single_od_instance_counts(self):
        net = gen_single_od().network
        assert net.n_nodes == 4
        assert net.n_arcs == 6
        assert int(net.is_primary.sum()) == 2

    def test_unknown_endpoint_rejected(self):
        with pytest.raises(NetworkError, match="99"):
            build_network([Node("0", 0, 0)], [flat_arc("bad", "0", "99", 1.0)])

    def test_duplicate_ids_rejected(self):
        with pytest.raises(NetworkError):
            build_network([Node("0", 0, 0), Node("0", 1, 0)], [])
        with pytest.raises(NetworkError):
            build_network(
                [Node("0", 0, 0), Node("1", 1, 0)],
                [flat_arc("a", "0", "1", 1.0), flat_arc("a", "1", "0", 1.0)])


class TestExtractCore:
    def cycle(self, ids):
        nodes = [Node(i, k, 0) for k, i in enumerate(ids)]
        arcs = [flat_arc(f"c{a}{b}", a, b, 1.0) for a, b in zip(ids, ids[1:] + ids[:1])]
        return nodes, arcs

    def test_strongly_connected_is_fixpoint(self):
        nodes, arcs = self.cycle(["0", "1", "2"])
        net = build_network(nodes, arcs)
        core = extract_core(net)
        assert {n.id for n in core.nodes} == {"0", "1", "2"}
        assert {a.id for a in core.arcs} == {a.id for a in net.arcs}

    def test_dangling_sink_removed(self):
        # 3-cycle plus a sink node reachable from it; by hand the only SCC
        # with >1 node is the cycle.
        nodes, arcs = self.cycle(["0", "1", "2"])
        nodes.append(Node("sink", 5, 5))
        arcs.append(flat_arc("toSink", "0", "sink", 1.0))
        core = extract_core(build_network(nodes, arcs))
        assert {n.id for n in core.nodes} == {"0", "1", "2"}
        assert strongly_connected(core)

    def test_larger_of_two_cycles_kept(self):
        n3, a3 = self.cycle(["0", "1", "2"])
        n2, a2 = self.cycle(["x", "y"])
        core = extract_core(build_network(n3 + n2, a3 + a2))
        assert {n.id for n in core.nodes} == {"0", "1", "2"}

    def test_no_nontrivial_scc_is_error(self):
        nodes = [Node("0", 0, 0), Node("1", 1, 0)]
        with pytest.raises(NetworkError):
            extract_core(build_network(nodes, [flat_arc("a", "0", "1", 1.0)]))

    def test_connectivity_oracle_bfs_both_directions(self):
        nodes, arcs = self.cycle(["0", "1", "2", "3"])
        core = extract_core(build_network(nodes, arcs))
        # hand BFS forward and backward from node 0
        fwd = {e: set() for e in range(core.n_nodes)}
        rev = {e: set() for e in range(core.n_nodes)}
        for a in range(core.n_arcs):
            fwd[core.tail[a]].add(core.head[a])
            rev[core.head[a]].add(core.tail[a])
        for adj in (fwd, rev):
            seen, stack = {0}, [0]
            while stack:
                for nxt in adj[stack.pop()]:
                    if nxt not in seen:
                        seen.add(nxt)
                        stack.append(nxt)
            assert seen == set(range(core.n_nodes))


class TestLatency:
    def test_zero_flow_gives_free_time(self):
        assert latency(bpr_arc(), 0.0) == 10.0

    def test_bpr_values(self):
        # t0 (1 + 0.02 (f/100)^2): f=100 -> 10*1.02, f=200 -> 10*1.08
        assert latency(bpr_arc(), 100.0) == pytest.approx(10.2, rel=1e-12)
        assert latency(bpr_arc(), 200.0) == pytest.approx(10.8, rel=1e-12)

    def test_negative_flow_rejected(self):
        with pytest.raises(ValueError):
            latency(bpr_arc(), -1.0)

    def test_strictly_monotone(self):
        arc = bpr_arc()
        flows = np.linspace(0, 500, 40)
        vals = latency(arc, flows)
        assert np.all(np.diff(vals) > 0)

    def test_inverse_round_trip(self):
        arc = bpr_arc()
        for f in [0.0, 1.0, 57.3, 100.0, 4000.0]:
            assert inverse_latency(arc, latency(arc, f)) == pytest.approx(f, rel=1e-9, abs=1e-9)

    def test_inverse_values(self):
        arc = bpr_arc()
        assert inverse_latency(arc, 10.0) == 0.0
        # closed form b ((t/t0 - 1)/gamma)^(1/nu) = 100 ((1.02-1)/0.02)^0.5
        assert inverse_latency(arc, 10.2) == pytest.approx(100.0, rel=1e-10)

    def test_inverse_below_free_time_rejected(self):
        with pytest.raises(ValueError):
            inverse_latency(bpr_arc(), 9.0)

    def test_flat_arc_not_invertible(self):
        arc = bpr_arc(gamma=0.0)
        assert inverse_latency(arc, 10.0) == 0.0
        with pytest.raises(ValueError):
            inverse_latency(arc, 11.0)


class TestMonetaryCost:
    def test_secondary_is_free(self):
        assert monetary_cost(bpr_arc(road_class="secondary"), 1000.0) == 0.0

    def test_primary_charges_per_km(self):
        arc = bpr_arc(road_class="primary", length=2.0)
        assert monetary_cost(arc, 100.0) == 200.0

    def test_zero_price(self):
        assert monetary_cost(bpr_arc(road_class="primary"), 0.0) == 0.0

    def test_negative_price_rejected(self):
        with pytest.raises(ValueError):
            monetary_cost(bpr_arc(), -1.0)


class TestDefaultCapacity:
    def test_value(self):
        assert default_capacity(3, 5.0, 0.005) == pytest.approx(3000.0)

    def test_one_car_fits(self):
        assert default_capacity(1, 0.005, 0.005) == pytest.approx(1.0)

    def test_zero_car_length_rejected(self):
        with pytest.raises(NetworkError):
            default_capacity(1, 5.0, 0.0)


class TestShortestCosts:
    def test_line_graph(self, line_network):
        costs = shortest_costs(line_network, line_network.free_time, 2)
        assert costs.tolist() == [7.0, 4.0, 0.0]

    def test_parallel_arcs_take_min(self):
        net = build_network(
            [Node("0", 0, 0), Node("1", 1, 0)],
            [flat_arc("slow", "0", "1", 9.0), flat_arc("fast", "0", "1", 5.0),
             flat_arc("back", "1", "0", 1.0)])
        costs = shortest_costs(net, net.free_time, net.node_index["1"])
        assert costs[net.node_index["0"]] == 5.0

    def test_destination_zero_with_self_loop(self):
        net = build_network(
            [Node("0", 0, 0), Node("1", 1, 0)],
            [flat_arc("a", "0", "1", 3.0), flat_arc("loop", "1", "1", 2.0),
             flat_arc("back", "1", "0", 4.0)])
        costs = shortest_costs(net, net.free_time, net.node_index["1"])
        assert costs[net.node_index["1"]] == 0.0

    def test_bellman_fixed_point(self, line_network):
        net = line_network
        w = net.free_time
        costs = shortest_costs(net, w, 2)
        for i in range(net.n_nodes):
            if i == 2:
                continue
            lo, hi = net.out_start[i], net.out_start[i + 1]
            best = min(w[a] + costs[net.head[a]] for a in range(lo, hi))
            assert costs[i] == best

    def test_unreachable_destination_reported(self):
        net = build_network(
            [Node("0", 0, 0), Node("1", 1, 0)],
            [flat_arc("a", "0", "1", 1.0), flat_arc("loop", "0", "0", 1.0),
             flat_arc("loop1", "1", "1", 1.0)])
        with pytest.raises(NetworkError, match="cannot reach"):
            shortest_costs(net, net.free_time, net.node_index["0"])
