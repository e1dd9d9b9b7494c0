"""Shared builders for game-level tests: road + vehicles -> GameProblem."""

from cavgame.conflict_geometry import enumerate_crucial_pairs
from cavgame.game import GameProblem
from cavgame.milp_model import Limits, Weights, build_regions
from cavgame.waypoint_graph import (
    RoadSpec,
    build_waypoint_graph,
    extend_with_start,
    subgraph_for_vehicle,
)


def ladder_road(length=40.0, spacing=10.0, lanes=2, width=3.75):
    polylines = tuple(
        ((0.0, width * i), (length, width * i)) for i in range(lanes)
    )
    adjacency = tuple((i, i + 1) for i in range(lanes - 1))
    return RoadSpec(
        lanes=polylines,
        lane_width=width,
        sample_spacing=spacing,
        lane_adjacency=adjacency,
    )


def lane_end_ids(graph, length):
    return frozenset(
        v.id for v in graph.vertices if abs(v.arc - length) < 1e-9 and v.lane >= 0
    )


def build_problem(
    road,
    vehicles,
    k_regions=1,
    weights=None,
    limits=None,
    big_m=1e4,
    length=40.0,
):
    graph = build_waypoint_graph(road)
    ends = lane_end_ids(graph, length)
    for veh in vehicles:
        if not veh.destinations:
            veh.destinations = ends
        graph = extend_with_start(graph, veh, road)
    subgraphs = {v.id: subgraph_for_vehicle(graph, v) for v in vehicles}
    vdict = {v.id: v for v in vehicles}
    pairs = enumerate_crucial_pairs(graph, subgraphs, vdict)
    by_vehicle = {v.id: [p for p in pairs if p.i == v.id] for v in vehicles}
    return GameProblem(
        graph=graph,
        vehicles=vdict,
        subgraphs=subgraphs,
        regions={v.id: build_regions(v, k_regions) for v in vehicles},
        pairs_by_vehicle=by_vehicle,
        weights=weights or Weights(),
        limits=limits or Limits(),
        big_m=big_m,
        progress={v.id: v.start_xy[0] for v in vehicles},
    )
