"""Cooperative multi-vehicle decision-making on structured roads.

Pipeline: way-point graph modeling, per-vehicle mixed-integer best
responses, Gauss-Seidel iteration to an epsilon-equilibrium of the
induced potential game, and bicycle-model trajectory generation.
"""

from cavgame.waypoint_graph import (
    RoadSpec,
    VehicleSpec,
    SubGraph,
    WayPointGraph,
    build_waypoint_graph,
    extend_with_start,
    forward_reachable,
    backward_reachable,
    subgraph_for_vehicle,
)

__all__ = [
    "RoadSpec",
    "VehicleSpec",
    "SubGraph",
    "WayPointGraph",
    "build_waypoint_graph",
    "extend_with_start",
    "forward_reachable",
    "backward_reachable",
    "subgraph_for_vehicle",
]
