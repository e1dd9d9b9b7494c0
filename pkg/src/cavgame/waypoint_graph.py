"""Way-point graph construction over structured roads.

Lane centerlines are sampled equidistantly into waypoints; consecutive
same-lane waypoints are joined by straight chord edges and each waypoint
is joined to the two nearest forward waypoints on every adjacent lane.
Vehicle start positions are grafted on as extra vertices.  The result is
a directed acyclic graph on which path search and timing constraints are
formulated.
"""

from __future__ import annotations

import json
import math
from collections import deque
from dataclasses import dataclass, field

import numpy as np

POSITION_TOL = 1e-6  # meters; below this two points count as coincident


class TopologyError(ValueError):
    """Road description produced a cyclic or otherwise invalid graph."""


class ConfigurationError(ValueError):
    """Vehicle placement is inconsistent with the road network."""


class InfeasibleVehicleError(ValueError):
    """No destination is reachable from the vehicle's start vertex."""


@dataclass(frozen=True)
class RoadSpec:
    """Geometric road description: one polyline per lane centerline."""

    lanes: tuple[tuple[tuple[float, float], ...], ...]
    lane_width: float
    sample_spacing: float
    lane_adjacency: tuple[tuple[int, int], ...] = ()
    direction: tuple[int, ...] = ()

    def validate(self) -> None:
        if self.sample_spacing <= 0:
            raise ValueError("sample_spacing must be positive")
        if self.lane_width <= 0:
            raise ValueError("lane_width must be positive")
        if not self.lanes:
            raise ValueError("road needs at least one lane")
        for li, lane in enumerate(self.lanes):
            if len(lane) < 2:
                raise ValueError(f"lane {li} needs at least two points")
            for a, b in zip(lane, lane[1:]):
                if math.dist(a, b) <= POSITION_TOL:
                    raise ValueError(f"lane {li} has coincident consecutive points")
        n = len(self.lanes)
        for a, b in self.lane_adjacency:
            if not (0 <= a < n and 0 <= b < n) or a == b:
                raise ValueError(f"bad adjacency pair ({a}, {b})")
        if self.direction and len(self.direction) != n:
            raise ValueError("direction must list one entry per lane")
        for d in self.direction:
            if d not in (1, -1):
                raise ValueError("direction entries must be +1 or -1")

    def oriented_lane(self, index: int) -> np.ndarray:
        pts = np.asarray(self.lanes[index], dtype=float)
        if self.direction and self.direction[index] == -1:
            pts = pts[::-1]
        return pts

    def adjacent_lanes(self, index: int) -> list[int]:
        out = set()
        for a, b in self.lane_adjacency:
            if a == index:
                out.add(b)
            elif b == index:
                out.add(a)
        return sorted(out)


@dataclass(frozen=True)
class Vertex:
    id: int
    x: float
    y: float
    lane: int  # -1 for grafted start vertices
    arc: float  # arc-length progress along the lane centerline

    @property
    def pos(self) -> np.ndarray:
        return np.array([self.x, self.y])


@dataclass(frozen=True)
class Edge:
    id: int
    tail: int
    head: int
    length: float
    heading: float
    kind: str  # "lane" | "change" | "start"


class WayPointGraph:
    """Directed acyclic graph of sampled waypoints.

    Immutable after construction; extension with a start vertex returns a
    new graph.
    """

    def __init__(self, vertices: list[Vertex], edges: list[Edge]):
        self.vertices = list(vertices)
        self.edges = list(edges)
        self._out: dict[int, tuple[int, ...]] = {}
        self._in: dict[int, tuple[int, ...]] = {}
        out: dict[int, list[int]] = {v.id: [] for v in vertices}
        inc: dict[int, list[int]] = {v.id: [] for v in vertices}
        for e in edges:
            out[e.tail].append(e.id)
            inc[e.head].append(e.id)
        self._out = {v: tuple(sorted(ids)) for v, ids in out.items()}
        self._in = {v: tuple(sorted(ids)) for v, ids in inc.items()}
        self._assert_consistent()

    def _assert_consistent(self) -> None:
        ids = [v.id for v in self.vertices]
        if ids != list(range(len(ids))):
            raise TopologyError("vertex ids must be contiguous from 0")
        eids = [e.id for e in self.edges]
        if eids != list(range(len(eids))):
            raise TopologyError("edge ids must be contiguous from 0")
        for e in self.edges:
            d = math.dist(self.position(e.tail), self.position(e.head))
            if abs(d - e.length) > 1e-9:
                raise TopologyError(f"edge {e.id} length inconsistent with endpoints")
        if self._topological_order() is None:
            raise TopologyError("way-point graph contains a directed cycle")

    def _topological_order(self) -> list[int] | None:
        indeg = {v.id: len(self._in[v.id]) for v in self.vertices}
        queue = deque(sorted(v for v, d in indeg.items() if d == 0))
        order = []
        while queue:
            v = queue.popleft()
            order.append(v)
            for eid in self._out[v]:
                h = self.edges[eid].head
                indeg[h] -= 1
                if indeg[h] == 0:
                    queue.append(h)
        return order if len(order) == len(self.vertices) else None

    # -- queries ---------------------------------------------------------

    def position(self, vid: int) -> tuple[float, float]:
        v = self.vertices[vid]
        return (v.x, v.y)

    def out_edges(self, vid: int) -> tuple[int, ...]:
        return self._out[vid]

    def in_edges(self, vid: int) -> tuple[int, ...]:
        return self._in[vid]

    def edge(self, eid: int) -> Edge:
        return self.edges[eid]

    def topological_order(self) -> list[int]:
        order = self._topological_order()
        assert order is not None
        return order

    def to_json_dict(self) -> dict:
        return {
            "vertices": [{"id": v.id, "x": v.x, "y": v.y} for v in self.vertices],
            "edges": [
                {
                    "id": e.id,
                    "tail": e.tail,
                    "head": e.head,
                    "length": e.length,
                    "heading": e.heading,
                }
                for e in self.edges
            ],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_json_dict(), indent=1)


@dataclass
class VehicleSpec:
    """One vehicle's geometry, speed envelope, and routing goals."""

    id: int
    start_xy: tuple[float, float]
    heading: float
    v_ini: float
    v_ref: float
    v_min: float
    v_max: float
    length: float
    width: float
    wheelbase: float
    center_to_rear_axle: float
    destinations: frozenset[int] = frozenset()
    start_vertex: int | None = None
    start_attach_count: int = 2

    def validate(self) -> None:
        if not (0 <= self.v_min <= self.v_ref <= self.v_max):
            raise ValueError(f"vehicle {self.id}: need 0 <= v_min <= v_ref <= v_max")
        if min(self.length, self.width, self.wheelbase) <= 0:
            raise ValueError(f"vehicle {self.id}: dimensions must be positive")
        if not (0 <= self.center_to_rear_axle <= self.length):
            raise ValueError(f"vehicle {self.id}: center_to_rear_axle out of range")
        if self.start_attach_count < 1:
            raise ValueError(f"vehicle {self.id}: start_attach_count must be >= 1")

    def validate_routing(self) -> None:
        if not self.destinations:
            raise ValueError(f"vehicle {self.id}: empty destination set")
        if self.start_vertex in self.destinations:
            raise ValueError(f"vehicle {self.id}: start vertex is a destination")


@dataclass(frozen=True)
class SubGraph:
    """Vertices/edges a vehicle can use on some start-to-destination path."""

    vehicle_id: int
    vertex_ids: frozenset[int]
    edge_ids: frozenset[int]


def _sample_arc(points: np.ndarray, spacing: float) -> np.ndarray:
    """Equidistant samples along a polyline, always including both ends."""
    seg = np.linalg.norm(np.diff(points, axis=0), axis=1)
    cum = np.concatenate([[0.0], np.cumsum(seg)])
    total = cum[-1]
    targets = list(np.arange(0.0, total, spacing))
    if total - targets[-1] > POSITION_TOL:
        targets.append(total)
    targets = np.asarray(targets)
    xs = np.interp(targets, cum, points[:, 0])
    ys = np.interp(targets, cum, points[:, 1])
    return np.column_stack([xs, ys, targets])


def build_waypoint_graph(spec: RoadSpec) -> WayPointGraph:
    """Sample the road description into a DAG of waypoints and edges.

    Coincident samples from different lanes collapse into a single shared
    vertex, which is how merge and diverge junctions are expressed.
    """
    spec.validate()
    vertices: list[Vertex] = []
    by_pos: dict[tuple[int, int], int] = {}  # quantized position -> vertex id
    lane_vertex_ids: list[list[int]] = []
    for li in range(len(spec.lanes)):
        samples = _sample_arc(spec.oriented_lane(li), spec.sample_spacing)
        ids = []
        for x, y, arc in samples:
            key = (round(x / POSITION_TOL), round(y / POSITION_TOL))
            vid = by_pos.get(key)
            if vid is None:
                vid = len(vertices)
                vertices.append(Vertex(vid, float(x), float(y), li, float(arc)))
                by_pos[key] = vid
            ids.append(vid)
        lane_vertex_ids.append(ids)

    def chord(tail: Vertex, head: Vertex) -> tuple[float, float]:
        dx, dy = head.x - tail.x, head.y - tail.y
        return math.hypot(dx, dy), math.atan2(dy, dx)

    straight: list[tuple[int, int]] = []
    seen_straight: set[tuple[int, int]] = set()
    for ids in lane_vertex_ids:
        for pair in zip(ids, ids[1:]):
            if pair not in seen_straight:
                seen_straight.add(pair)
                straight.append(pair)

    # local travel direction at each waypoint, for the forward test; a
    # shared junction vertex keeps the direction of the first lane using it
    local_heading: dict[int, float] = {}
    for ids in lane_vertex_ids:
        for a, b in zip(ids, ids[1:]):
            _, h = chord(vertices[a], vertices[b])
            local_heading.setdefault(a, h)
        if len(ids) >= 2 and ids[-1] not in local_heading:
            _, h = chord(vertices[ids[-2]], vertices[ids[-1]])
            local_heading[ids[-1]] = h

    # lane changes must make real forward progress and stay local; on
    # curved adjacent lanes a bare positive-dot test admits mutual
    # (cyclic) hops, and open-arc endpoints would otherwise reach across
    # to far-away "forward" waypoints
    min_advance = 0.25 * spec.sample_spacing
    max_chord = 2.5 * spec.sample_spacing
    changes: list[tuple[int, int]] = []
    for li, ids in enumerate(lane_vertex_ids):
        for other in spec.adjacent_lanes(li):
            other_ids = lane_vertex_ids[other]
            for vid in ids:
                u = vertices[vid]
                h = local_heading[vid]
                fwd = []
                for wid in other_ids:
                    w = vertices[wid]
                    adv = (w.x - u.x) * math.cos(h) + (w.y - u.y) * math.sin(h)
                    chord_len = math.dist((u.x, u.y), (w.x, w.y))
                    if adv > min_advance and chord_len <= max_chord:
                        fwd.append((chord_len, wid))
                fwd.sort()
                changes.extend((vid, wid) for _, wid in fwd[:2])

    edges: list[Edge] = []
    for tail, head in straight:
        length, heading = chord(vertices[tail], vertices[head])
        edges.append(Edge(len(edges), tail, head, length, heading, "lane"))
    for tail, head in sorted(set(changes) - seen_straight):
        length, heading = chord(vertices[tail], vertices[head])
        edges.append(Edge(len(edges), tail, head, length, heading, "change"))

    return WayPointGraph(vertices, edges)


def extend_with_start(graph: WayPointGraph, vehicle: VehicleSpec, spec: RoadSpec) -> WayPointGraph:
    """Graft the vehicle start position onto the graph.

    If the start coincides with an existing vertex that vertex is reused.
    Otherwise a new vertex is added with edges to the nearest
    ``start_attach_count`` forward vertices on the start lane and the
    lanes adjacent to it.  Records ``vehicle.start_vertex``.
    """
    vehicle.validate()
    sx, sy = vehicle.start_xy
    for v in graph.vertices:
        if math.dist((sx, sy), (v.x, v.y)) <= POSITION_TOL:
            vehicle.start_vertex = v.id
            return graph

    # candidates sit ahead of the vehicle, laterally within reach of the
    # own or an adjacent lane, and close enough to be a plausible first hop
    ch, sh = math.cos(vehicle.heading), math.sin(vehicle.heading)
    max_lateral = 1.6 * spec.lane_width
    max_chord = 3.0 * spec.sample_spacing
    forward = []
    for v in graph.vertices:
        adv = (v.x - sx) * ch + (v.y - sy) * sh
        lat = abs(-(v.x - sx) * sh + (v.y - sy) * ch)
        chord = math.dist((sx, sy), (v.x, v.y))
        if adv > POSITION_TOL and lat <= max_lateral and chord <= max_chord:
            forward.append((chord, v.id))
    if not forward:
        raise ConfigurationError(
            f"vehicle {vehicle.id}: no forward waypoint ahead of start {vehicle.start_xy}"
        )
    forward.sort()
    targets = [vid for _, vid in forward[: vehicle.start_attach_count]]

    new_id = len(graph.vertices)
    vertices = graph.vertices + [Vertex(new_id, sx, sy, -1, 0.0)]
    edges = list(graph.edges)
    for wid in targets:
        w = graph.vertices[wid]
        dx, dy = w.x - sx, w.y - sy
        edges.append(
            Edge(len(edges), new_id, wid, math.hypot(dx, dy), math.atan2(dy, dx), "start")
        )
    vehicle.start_vertex = new_id
    return WayPointGraph(vertices, edges)


def _point_segment_distance(p, a, b) -> float:
    p, a, b = np.asarray(p, float), np.asarray(a, float), np.asarray(b, float)
    ab = b - a
    t = float(np.clip(np.dot(p - a, ab) / np.dot(ab, ab), 0.0, 1.0))
    return float(np.linalg.norm(p - (a + t * ab)))


def forward_reachable(graph: WayPointGraph, vid: int) -> set[int]:
    """All vertices reachable from ``vid`` by directed paths (excluding it)."""
    return _reach(graph, vid, forward=True)


def backward_reachable(graph: WayPointGraph, vid: int) -> set[int]:
    """All vertices from which ``vid`` is reachable (excluding it)."""
    return _reach(graph, vid, forward=False)


def _reach(graph: WayPointGraph, vid: int, forward: bool) -> set[int]:
    if not (0 <= vid < len(graph.vertices)):
        raise KeyError(f"unknown vertex id {vid}")
    seen: set[int] = set()
    stack = [vid]
    while stack:
        v = stack.pop()
        eids = graph.out_edges(v) if forward else graph.in_edges(v)
        for eid in eids:
            e = graph.edge(eid)
            nxt = e.head if forward else e.tail
            if nxt not in seen:
                seen.add(nxt)
                stack.append(nxt)
    seen.discard(vid)
    return seen


def subgraph_for_vehicle(graph: WayPointGraph, vehicle: VehicleSpec) -> SubGraph:
    """Vertices reachable from the start that can still reach a destination."""
    vehicle.validate_routing()
    if vehicle.start_vertex is None:
        raise ConfigurationError(f"vehicle {vehicle.id}: start vertex not set")
    fwd = forward_reachable(graph, vehicle.start_vertex)
    reachable_dests = {d for d in vehicle.destinations if d in fwd}
    if not reachable_dests:
        raise InfeasibleVehicleError(
            f"vehicle {vehicle.id}: no destination reachable from start"
        )
    bwd: set[int] = set()
    for d in reachable_dests:
        bwd |= backward_reachable(graph, d)
    core = fwd & bwd
    verts = frozenset(core | {vehicle.start_vertex} | reachable_dests)
    eids = frozenset(
        e.id for e in graph.edges if e.tail in verts and e.head in verts
    )
    return SubGraph(vehicle.id, verts, eids)
