"""Crucial edge pairs: where two vehicles' swept footprints can overlap.

For an edge pair whose swept corridors intersect, the conflict is reduced
to one dimension: the partner's motion is projected onto the first
vehicle's travel axis, giving entry/exit stations and an equivalent safe
distance used by the precedence constraints.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, asdict

import numpy as np

from cavgame.waypoint_graph import SubGraph, VehicleSpec, WayPointGraph

@dataclass(frozen=True)
class CrucialPair:
    """Conflict record between (vehicle i, edge e_i) and (vehicle j, e_j).

    ``theta_1/theta_2`` bound vehicle i's positions along ``e_i`` whose
    footprint touches j's corridor.  ``partner_theta_1/2`` are the same
    bounds for j along ``e_j``; j's entry/exit times are interpolated at
    those parameters.  ``s_hat_1/2`` are j's entry/exit centers projected
    onto e_i's axis (meters from its tail); for obtuse pairs the
    projection runs backwards, so ``s_hat_1 >= s_hat_2``.
    """

    i: int
    e_i: int
    j: int
    e_j: int
    theta_1: float
    theta_2: float
    partner_theta_1: float
    partner_theta_2: float
    s_hat_1: float
    s_hat_2: float
    d_safe: float
    angle_class: str  # "acute" (< 90 deg) | "obtuse" (>= 90 deg)
    projected_other_length: float

    def to_json_dict(self) -> dict:
        d = asdict(self)
        d["D_ij"] = d.pop("d_safe")
        return d


def _rect_corners(center: np.ndarray, heading: float, half_len: float, half_wid: float) -> np.ndarray:
    u = np.array([math.cos(heading), math.sin(heading)])
    n = np.array([-u[1], u[0]])
    return np.array(
        [
            center + half_len * u + half_wid * n,
            center + half_len * u - half_wid * n,
            center - half_len * u - half_wid * n,
            center - half_len * u + half_wid * n,
        ]
    )


def _convex_overlap(a: np.ndarray, b: np.ndarray) -> bool:
    """Separating-axis test for two convex polygons given as corner arrays."""
    for poly in (a, b):
        for k in range(len(poly)):
            edge = poly[(k + 1) % len(poly)] - poly[k]
            axis = np.array([-edge[1], edge[0]])
            pa = a @ axis
            pb = b @ axis
            if pa.max() < pb.min() or pb.max() < pa.min():
                return False
    return True


def _edge_frame(graph: WayPointGraph, eid: int) -> tuple[np.ndarray, np.ndarray, float, float]:
    e = graph.edge(eid)
    p1 = np.asarray(graph.position(e.tail), dtype=float)
    p2 = np.asarray(graph.position(e.head), dtype=float)
    return p1, p2, e.length, e.heading


def swept_corridor(graph: WayPointGraph, eid: int, veh: VehicleSpec) -> np.ndarray:
    """Corners of the rectangle the vehicle footprint sweeps along an edge."""
    p1, p2, length, heading = _edge_frame(graph, eid)
    center = 0.5 * (p1 + p2)
    return _rect_corners(center, heading, 0.5 * (length + veh.length), 0.5 * veh.width)


def footprint_at(graph: WayPointGraph, eid: int, veh: VehicleSpec, theta: float) -> np.ndarray:
    """Vehicle footprint with its center at parameter ``theta`` on the edge."""
    p1, p2, _, heading = _edge_frame(graph, eid)
    center = (1.0 - theta) * p1 + theta * p2
    return _rect_corners(center, heading, 0.5 * veh.length, 0.5 * veh.width)


def swept_volumes_intersect(
    graph: WayPointGraph, e_i: int, veh_i: VehicleSpec, e_j: int, veh_j: VehicleSpec
) -> bool:
    return _convex_overlap(
        swept_corridor(graph, e_i, veh_i), swept_corridor(graph, e_j, veh_j)
    )


def _conflict_interval(
    graph: WayPointGraph, eid: int, veh: VehicleSpec, other_corridor: np.ndarray
) -> tuple[float, float] | None:
    """[theta_1, theta_2] where the moving footprint touches the corridor.

    Both shapes are rectangles and the footprint only translates, so each
    separating axis yields a pair of conditions linear in theta; the
    touching set is the intersection of those intervals with [0, 1],
    computed in closed form.
    """
    p1, p2, _, heading = _edge_frame(graph, eid)
    d = p2 - p1
    u_f = np.array([math.cos(heading), math.sin(heading)])
    n_f = np.array([-u_f[1], u_f[0]])
    corridor_edge = other_corridor[1] - other_corridor[0]
    u_c = corridor_edge / np.linalg.norm(corridor_edge)
    n_c = np.array([-u_c[1], u_c[0]])

    lo, hi = 0.0, 1.0
    for axis in (u_f, n_f, u_c, n_c):
        r_f = 0.5 * veh.length * abs(float(u_f @ axis)) + 0.5 * veh.width * abs(
            float(n_f @ axis)
        )
        proj = other_corridor @ axis
        m_lo, m_hi = float(proj.min()), float(proj.max())
        base = float(p1 @ axis)
        slope = float(d @ axis)
        # overlap on this axis: m_lo - r_f <= base + slope*theta <= m_hi + r_f
        for bound, sense in ((m_lo - r_f, ">="), (m_hi + r_f, "<=")):
            if abs(slope) < 1e-12:
                if (sense == ">=" and base < bound) or (sense == "<=" and base > bound):
                    return None
                continue
            t = (bound - base) / slope
            at_least = (sense == ">=") == (slope > 0)
            if at_least:
                lo = max(lo, t)
            else:
                hi = min(hi, t)
    if lo > hi:
        return None
    return float(lo), float(hi)


def _wrap_angle(a: float) -> float:
    return (a + math.pi) % (2.0 * math.pi) - math.pi


def projected_length(veh: VehicleSpec, phi: float) -> float:
    """Support width of the vehicle footprint along a direction at angle phi."""
    return abs(veh.length * math.cos(phi)) + abs(veh.width * math.sin(phi))


def crucial_area(
    graph: WayPointGraph,
    veh_i: VehicleSpec,
    e_i: int,
    veh_j: VehicleSpec,
    e_j: int,
) -> CrucialPair | None:
    """Full conflict record for one ordered edge pair, or None if it
    degenerates after projection rounding."""
    corridor_i = swept_corridor(graph, e_i, veh_i)
    corridor_j = swept_corridor(graph, e_j, veh_j)
    own = _conflict_interval(graph, e_i, veh_i, corridor_j)
    partner = _conflict_interval(graph, e_j, veh_j, corridor_i)
    if own is None or partner is None:
        return None

    p1_i, p2_i, len_i, head_i = _edge_frame(graph, e_i)
    p1_j, p2_j, _, head_j = _edge_frame(graph, e_j)
    axis_i = np.array([math.cos(head_i), math.sin(head_i)])

    def project(theta: float) -> float:
        pos = (1.0 - theta) * p1_j + theta * p2_j
        return float(np.dot(pos - p1_i, axis_i))

    phi = _wrap_angle(head_j - head_i)
    l_hat = projected_length(veh_j, phi)
    return CrucialPair(
        i=veh_i.id,
        e_i=e_i,
        j=veh_j.id,
        e_j=e_j,
        theta_1=own[0],
        theta_2=own[1],
        partner_theta_1=partner[0],
        partner_theta_2=partner[1],
        s_hat_1=project(partner[0]),
        s_hat_2=project(partner[1]),
        d_safe=0.5 * (veh_i.length + l_hat),
        angle_class="acute" if abs(phi) < math.pi / 2 else "obtuse",
        projected_other_length=l_hat,
    )


def enumerate_crucial_pairs(
    graph: WayPointGraph,
    subgraphs: dict[int, SubGraph],
    vehicles: dict[int, VehicleSpec],
) -> list[CrucialPair]:
    """All ordered conflict records, sorted by (i, e_i, j, e_j)."""
    ids = sorted(subgraphs)
    corridors: dict[tuple[int, int], np.ndarray] = {}
    radii: dict[tuple[int, int], tuple[np.ndarray, float]] = {}
    for vid in ids:
        veh = vehicles[vid]
        for eid in subgraphs[vid].edge_ids:
            c = swept_corridor(graph, eid, veh)
            corridors[(vid, eid)] = c
            center = c.mean(axis=0)
            radii[(vid, eid)] = (center, float(np.linalg.norm(c - center, axis=1).max()))

    pairs: list[CrucialPair] = []
    for a_idx, vid_i in enumerate(ids):
        for vid_j in ids[a_idx + 1 :]:
            for e_i in sorted(subgraphs[vid_i].edge_ids):
                ci, ri = radii[(vid_i, e_i)]
                for e_j in sorted(subgraphs[vid_j].edge_ids):
                    cj, rj = radii[(vid_j, e_j)]
                    if np.linalg.norm(ci - cj) > ri + rj:
                        continue
                    if not _convex_overlap(corridors[(vid_i, e_i)], corridors[(vid_j, e_j)]):
                        continue
                    fwd = crucial_area(graph, vehicles[vid_i], e_i, vehicles[vid_j], e_j)
                    rev = crucial_area(graph, vehicles[vid_j], e_j, vehicles[vid_i], e_i)
                    if fwd is None or rev is None:
                        continue
                    pairs.append(fwd)
                    pairs.append(rev)
    pairs.sort(key=lambda p: (p.i, p.e_i, p.j, p.e_j))
    return pairs


def pairs_to_json(pairs: list[CrucialPair]) -> str:
    return json.dumps([p.to_json_dict() for p in pairs], indent=1)
