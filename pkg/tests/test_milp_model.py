import math

import numpy as np
import pytest

from cavgame.conflict_geometry import enumerate_crucial_pairs
from cavgame.milp_model import (
    Decision,
    Limits,
    Weights,
    assemble_best_response,
    build_regions,
    check_travel_feasibility,
    count_collisions,
    decision_from_solution,
    decision_to_vector,
    evaluate_cost,
)
from cavgame.milp_solver import solve_milp
from cavgame.waypoint_graph import (
    Edge,
    SubGraph,
    VehicleSpec,
    Vertex,
    WayPointGraph,
    subgraph_for_vehicle,
)

TABLE_WEIGHTS = Weights(alpha_t=0.1, alpha_v=1.0, alpha_a=0.5, alpha_theta=0.5)
LIMITS = Limits()
BIG_M = 1e4


def vehicle(vid, v_ref=10.0, start_vertex=None, dests=(), **kw):
    base = dict(
        id=vid,
        start_xy=(0.0, 0.0),
        heading=0.0,
        v_ini=v_ref,
        v_ref=v_ref,
        v_min=0.6 * v_ref,
        v_max=1.4 * v_ref,  # symmetric band: midpoint reference equals v_ref
        length=3.526,
        width=1.673,
        wheelbase=2.405,
        center_to_rear_axle=1.2025,
        destinations=frozenset(dests),
        start_vertex=start_vertex,
    )
    base.update(kw)
    return VehicleSpec(**base)


def chain(n_edges=3, spacing=10.0, y=0.0, x0=0.0):
    verts = [Vertex(i, x0 + spacing * i, y, 0, spacing * i) for i in range(n_edges + 1)]
    edges = [Edge(i, i, i + 1, spacing, 0.0, "lane") for i in range(n_edges)]
    return WayPointGraph(verts, edges)


def full_subgraph(graph, vid):
    return SubGraph(
        vid,
        frozenset(v.id for v in graph.vertices),
        frozenset(e.id for e in graph.edges),
    )


def solve_best_response(veh, sub, graph, others=None, pairs=None, k=1,
                        weights=TABLE_WEIGHTS):
    regions = build_regions(veh, k)
    inst = assemble_best_response(
        veh, sub, regions, others or {}, pairs or [], weights, BIG_M, graph, LIMITS
    )
    res = solve_milp(inst)
    return inst, res, regions


class TestAssembly:
    def test_single_vehicle_chain_structure(self):
        g = chain(3)
        veh = vehicle(1, start_vertex=0, dests={3})
        inst, res, regions = solve_best_response(veh, full_subgraph(g, 1), g)
        assert sum(n.startswith("P[") for n in inst.var_names) == 3
        assert sum(n.startswith("t[") for n in inst.var_names) == 4
        assert res.status == "optimal"
        # slack-free straight drive at the reference speed
        assert res.objective == pytest.approx(0.1 * 30.0 / 10.0, abs=1e-6)

    def test_table_weights_in_objective(self):
        g = chain(3)
        veh = vehicle(1, start_vertex=0, dests={3})
        regions = build_regions(veh, 1)
        inst = assemble_best_response(
            veh, full_subgraph(g, 1), regions, {}, [], TABLE_WEIGHTS, BIG_M, g, LIMITS
        )
        idx = inst.index
        assert inst.c[idx.t[3]] == pytest.approx(0.1)
        assert inst.c[idx.s_over[0]] == pytest.approx(1.0)
        assert inst.c[idx.s_under[0]] == pytest.approx(1.0)
        col = idx.g_over[(idx.start_vertex, 0)]
        assert inst.c[col] == pytest.approx(0.5 * regions.v_ref[0] ** 2)
        assert inst.c[idx.eta[(1, 0)]] == pytest.approx(0.5)

    def test_one_acute_pair_adds_rows_and_delta(self):
        g = chain(3)
        v1 = vehicle(1, start_vertex=0, dests={3})
        v2 = vehicle(2, start_vertex=0, dests={3})
        subs = {1: full_subgraph(g, 1), 2: full_subgraph(g, 2)}
        pairs = enumerate_crucial_pairs(g, subs, {1: v1, 2: v2})
        mine = [p for p in pairs if p.i == 1 and p.e_i == 1 and p.e_j == 1]
        assert len(mine) == 1 and mine[0].angle_class == "acute"
        other = sample_decision(g, v2)
        regions = build_regions(v1, 1)
        inst = assemble_best_response(
            v1, subs[1], regions, {2: other}, mine, TABLE_WEIGHTS, BIG_M, g, LIMITS
        )
        assert sum(k == "collision" for k in inst.row_kinds) == 4
        assert sum(n.startswith("delta[") for n in inst.var_names) == 1

    def test_partner_not_traversing_is_skipped(self):
        g = chain(3)
        v1 = vehicle(1, start_vertex=0, dests={3})
        v2 = vehicle(2, start_vertex=0, dests={3})
        subs = {1: full_subgraph(g, 1), 2: full_subgraph(g, 2)}
        pairs = [
            p for p in enumerate_crucial_pairs(g, subs, {1: v1, 2: v2}) if p.i == 1
        ]
        other = sample_decision(g, v2)
        pruned = Decision(
            vehicle_id=2,
            path_edges=(),
            path_vertices=(),
            t=other.t,
            s_over={},
            s_under={},
            region={},
            gamma_over={},
            gamma_under={},
            eta={},
            delta={},
        )
        regions = build_regions(v1, 1)
        inst = assemble_best_response(
            v1, subs[1], regions, {2: pruned}, pairs, TABLE_WEIGHTS, BIG_M, g, LIMITS
        )
        assert sum(k == "collision" for k in inst.row_kinds) == 0


def sample_decision(graph, veh, speed=None):
    """Constant-speed drive along the single chain path."""
    speed = speed or veh.v_ref
    path_edges = tuple(e.id for e in graph.edges if e.kind == "lane")
    path_vertices = tuple(range(len(path_edges) + 1))
    t = {}
    clock = 0.0
    t[path_vertices[0]] = 0.0
    for e in path_edges:
        clock += graph.edge(e).length / speed
        t[graph.edge(e).head] = clock
    regions = build_regions(veh, 1)
    band = {v: 0 for v in path_vertices[:-1]}
    return Decision(
        vehicle_id=veh.id,
        path_edges=path_edges,
        path_vertices=path_vertices,
        t=t,
        s_over={e: max(graph.edge(e).length - veh.v_ref * (graph.edge(e).length / speed), 0.0) for e in path_edges},
        s_under={e: max(veh.v_ref * (graph.edge(e).length / speed) - graph.edge(e).length, 0.0) for e in path_edges},
        region=band,
        gamma_over={},
        gamma_under={},
        eta={},
        delta={},
    )


class TestCost:
    def test_arrival_only(self):
        g = chain(3)
        veh = vehicle(1, start_vertex=0, dests={3})
        dec = sample_decision(g, veh)
        dec.t[3] = 5.0
        dec.s_over = {}
        dec.s_under = {}
        regions = build_regions(veh, 1)
        assert evaluate_cost(dec, TABLE_WEIGHTS, regions) == pytest.approx(0.5)

    def test_sum_feeds_potential(self):
        g = chain(3)
        v1 = vehicle(1, start_vertex=0, dests={3})
        v2 = vehicle(2, start_vertex=0, dests={3})
        regions = build_regions(v1, 1)
        d1, d2 = sample_decision(g, v1), sample_decision(g, v2)
        d1.t[3], d2.t[3] = 30.0, 40.0
        j1 = evaluate_cost(d1, TABLE_WEIGHTS, regions)
        j2 = evaluate_cost(d2, TABLE_WEIGHTS, regions)
        assert j1 + j2 == pytest.approx(3.0 + 4.0)

    def test_solver_objective_matches_reevaluation(self):
        g = chain(4)
        veh = vehicle(1, v_ref=12.0, start_vertex=0, dests={4})
        inst, res, regions = solve_best_response(veh, full_subgraph(g, 1), g, k=2)
        dec = decision_from_solution(res.x, inst, veh, g)
        assert evaluate_cost(dec, TABLE_WEIGHTS, regions) == pytest.approx(
            res.objective, abs=1e-6
        )


class TestTravelFeasibility:
    def test_solver_output_feasible(self):
        g = chain(3)
        veh = vehicle(1, start_vertex=0, dests={3})
        inst, res, _ = solve_best_response(veh, full_subgraph(g, 1), g)
        dec = decision_from_solution(res.x, inst, veh, g)
        assert check_travel_feasibility(dec, inst) == []

    def test_time_order_violation_reported(self):
        g = chain(3)
        veh = vehicle(1, start_vertex=0, dests={3})
        inst, res, _ = solve_best_response(veh, full_subgraph(g, 1), g)
        dec = decision_from_solution(res.x, inst, veh, g)
        dec.t[2] = dec.t[1]  # equal passage times on a used edge
        names = [n for n, _ in check_travel_feasibility(dec, inst)]
        assert any(n.startswith("time/order") for n in names)

    def test_random_time_perturbation_detected(self):
        g = chain(4)
        veh = vehicle(1, start_vertex=0, dests={4})
        inst, res, _ = solve_best_response(veh, full_subgraph(g, 1), g)
        rng = np.random.default_rng(2)
        for _ in range(5):
            dec = decision_from_solution(res.x, inst, veh, g)
            v = int(rng.integers(1, 5))
            dec.t[v] = dec.t[v] + 1.0
            assert check_travel_feasibility(dec, inst)


class TestCollisionCount:
    def _two_vehicle_setup(self, offset=0.0):
        g = chain(3)
        v1 = vehicle(1, start_vertex=0, dests={3})
        v2 = vehicle(2, start_vertex=0, dests={3})
        subs = {1: full_subgraph(g, 1), 2: full_subgraph(g, 2)}
        pairs = enumerate_crucial_pairs(g, subs, {1: v1, 2: v2})
        return g, v1, v2, pairs

    def test_disjoint_paths_zero(self):
        g1 = chain(3)
        v1 = vehicle(1, start_vertex=0, dests={3})
        d1 = sample_decision(g1, v1)
        assert count_collisions(1, d1, {}, [], g1) == 0

    def test_identical_profiles_collide(self):
        g, v1, v2, pairs = self._two_vehicle_setup()
        d1 = sample_decision(g, v1)
        d2 = sample_decision(g, v2)
        mine = [p for p in pairs if p.i == 1]
        assert count_collisions(1, d1, {2: d2}, mine, g) >= 1
        theirs = [p for p in pairs if p.i == 2]
        assert count_collisions(2, d2, {1: d1}, theirs, g) >= 1

    def test_well_separated_profiles_clear(self):
        g, v1, v2, pairs = self._two_vehicle_setup()
        d1 = sample_decision(g, v1)
        d2 = sample_decision(g, v2)
        d2.t = {v: t + 8.0 for v, t in d2.t.items()}  # partner far behind in time
        d2.t[0] = 8.0
        mine = [p for p in pairs if p.i == 1]
        assert count_collisions(1, d1, {2: d2}, mine, g) == 0


class TestPotentialIdentity:
    def test_exact_potential_quick(self):
        g = chain(4)
        vehs = {
            1: vehicle(1, v_ref=10.0, start_vertex=0, dests={4}),
            2: vehicle(2, v_ref=8.0, start_vertex=0, dests={4}),
        }
        regions = {i: build_regions(v, 1) for i, v in vehs.items()}
        d = {i: sample_decision(g, v) for i, v in vehs.items()}
        alt = sample_decision(g, vehs[1], speed=9.0)

        def pot(ds):
            return sum(
                evaluate_cost(ds[i], TABLE_WEIGHTS, regions[i]) for i in ds
            )

        before = pot(d)
        dj_before = evaluate_cost(d[1], TABLE_WEIGHTS, regions[1])
        d_new = dict(d)
        d_new[1] = alt
        after = pot(d_new)
        dj_after = evaluate_cost(alt, TABLE_WEIGHTS, regions[1])
        assert (after - before) == pytest.approx(dj_after - dj_before, abs=1e-9)


class TestBigMInactivity:
    def test_gated_rows_slack_when_open(self):
        g = chain(3)
        veh = vehicle(1, start_vertex=0, dests={3})
        inst, res, _ = solve_best_response(veh, full_subgraph(g, 1), g)
        x = res.x
        resid = inst.b - inst.A @ x  # row slack, >= 0 when satisfied
        # every row holds; rows whose gates are open have big slack
        assert np.all(resid >= -1e-6)

    def test_linear_in_own_times(self):
        # collision rows never multiply own variables: constraint matrix is
        # constant, so feasibility of scaled time shifts changes linearly
        g = chain(3)
        v1 = vehicle(1, start_vertex=0, dests={3})
        v2 = vehicle(2, start_vertex=0, dests={3})
        subs = {1: full_subgraph(g, 1), 2: full_subgraph(g, 2)}
        pairs = [p for p in enumerate_crucial_pairs(g, subs, {1: v1, 2: v2}) if p.i == 1]
        other = sample_decision(g, v2)
        regions = build_regions(v1, 1)
        inst = assemble_best_response(
            v1, subs[1], regions, {2: other}, pairs, TABLE_WEIGHTS, BIG_M, g, LIMITS
        )
        rows = np.array([k == "collision" for k in inst.row_kinds])
        A_coll = inst.A[rows]
        t_cols = sorted(inst.index.t.values())
        x1 = np.zeros(inst.n_vars)
        x2 = np.zeros(inst.n_vars)
        x2[t_cols] = 1.0
        # linear map: A(x1 + 2 (x2-x1)) == A x1 + 2 (A x2 - A x1)
        lhs = A_coll @ (x1 + 2 * (x2 - x1))
        rhs = A_coll @ x1 + 2 * (A_coll @ x2 - A_coll @ x1)
        assert np.allclose(lhs, rhs)


class TestPathExtraction:
    def test_extracted_path_simple(self):
        # two-lane ladder gives multiple path choices
        from cavgame.waypoint_graph import RoadSpec, build_waypoint_graph, extend_with_start

        spec = RoadSpec(
            lanes=(((0.0, 0.0), (40.0, 0.0)), ((0.0, 3.75), (40.0, 3.75))),
            lane_width=3.75,
            sample_spacing=10.0,
            lane_adjacency=((0, 1),),
        )
        g = build_waypoint_graph(spec)
        ends = {v.id for v in g.vertices if math.isclose(v.arc, 40.0)}
        veh = vehicle(1, start_xy=(5.0, 0.0), dests=ends)
        g2 = extend_with_start(g, veh, spec)
        sub = subgraph_for_vehicle(g2, veh)
        regions = build_regions(veh, 1)
        inst = assemble_best_response(
            veh, sub, regions, {}, [], TABLE_WEIGHTS, BIG_M, g2, LIMITS
        )
        res = solve_milp(inst)
        assert res.status == "optimal"
        dec = decision_from_solution(res.x, inst, veh, g2)
        # consecutive edges join head to tail and end at a destination
        for e1, e2 in zip(dec.path_edges, dec.path_edges[1:]):
            assert g2.edge(e1).head == g2.edge(e2).tail
        assert dec.path_vertices[-1] in veh.destinations
        assert len(set(dec.path_vertices)) == len(dec.path_vertices)
