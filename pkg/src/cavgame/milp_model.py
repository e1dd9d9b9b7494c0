"""Per-vehicle best-response MILP assembly and decision evaluation.

One vehicle's problem: choose a start-to-destination path (edge binaries),
vertex passage times, and slack variables, minimizing a weighted sum of
arrival time, velocity deviation, longitudinal acceleration, and turning
penalties, subject to travel constraints and gated precedence constraints
against the fixed decisions of surrounding vehicles.

Gated rows use per-row relaxation constants sized to twice the worst
violation achievable within the time box, which keeps the LP relaxation
tight while guaranteeing open-gated rows are slack by at least half the
constant.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from cavgame.conflict_geometry import CrucialPair
from cavgame.waypoint_graph import SubGraph, VehicleSpec, WayPointGraph

TIME_GAP = 1e-3  # seconds; closed-set stand-in for strict time ordering
FEAS_TOL = 1e-6


class AssemblyError(ValueError):
    """Inconsistent inputs to the best-response assembler."""


class StaleDecisionError(AssemblyError):
    """A fixed decision lacks passage times on an edge it traverses."""


@dataclass(frozen=True)
class Weights:
    """Objective weights for time, velocity, acceleration, turning."""

    alpha_t: float = 0.1
    alpha_v: float = 1.0
    alpha_a: float = 0.5
    alpha_theta: float = 0.5

    def validate(self) -> None:
        if min(self.alpha_t, self.alpha_v, self.alpha_a, self.alpha_theta) < 0:
            raise ValueError("objective weights must be nonnegative")


@dataclass(frozen=True)
class Limits:
    """Comfort and actuation bounds shared by the scenario."""

    gamma_max: float = 3.0
    gamma_min: float = -4.5
    eta_max: float = 3.0
    a_max: float = 4.0
    a_min: float = -6.0
    delta_max: float = 0.9
    delta_min: float = -0.9
    d_safe: float = 2.366


@dataclass(frozen=True)
class VelocityRegions:
    """Partition of [v_min, v_max] into contiguous bands with references."""

    v_lo: tuple[float, ...]
    v_hi: tuple[float, ...]
    v_ref: tuple[float, ...]

    @property
    def count(self) -> int:
        return len(self.v_lo)

    def validate(self) -> None:
        if not self.v_lo:
            raise ValueError("need at least one velocity region")
        for lo, hi, ref in zip(self.v_lo, self.v_hi, self.v_ref):
            if not (0 < lo <= ref <= hi):
                raise ValueError("region must satisfy 0 < lo <= ref <= hi")
        for hi, nxt in zip(self.v_hi, self.v_lo[1:]):
            if abs(hi - nxt) > 1e-9:
                raise ValueError("regions must be contiguous and non-overlapping")

    def region_of(self, v: float) -> int:
        for k in range(self.count):
            if self.v_lo[k] - 1e-9 <= v <= self.v_hi[k] + 1e-9:
                return k
        raise ValueError(f"velocity {v} outside region span")


def build_regions(veh: VehicleSpec, k: int) -> VelocityRegions:
    """Equal-width regions over the vehicle's velocity range, midpoint refs."""
    if k < 1:
        raise ValueError("region count must be >= 1")
    grid = np.linspace(veh.v_min, veh.v_max, k + 1)
    lo, hi = grid[:-1], grid[1:]
    return VelocityRegions(
        v_lo=tuple(map(float, lo)),
        v_hi=tuple(map(float, hi)),
        v_ref=tuple(map(float, 0.5 * (lo + hi))),
    )


@dataclass
class Decision:
    """One vehicle's committed plan: path, passage times, and slacks.

    Treated as an immutable snapshot once constructed; the game loop
    replaces whole decisions rather than mutating them.
    """

    vehicle_id: int
    path_edges: tuple[int, ...]
    path_vertices: tuple[int, ...]
    t: dict[int, float]
    s_over: dict[int, float]  # per edge, velocity slack above reference
    s_under: dict[int, float]  # per edge, velocity slack below reference
    region: dict[int, int]  # per constrained vertex, selected band index
    gamma_over: dict[tuple[int, int], float]  # (vertex, band) accel slack
    gamma_under: dict[tuple[int, int], float]
    eta: dict[tuple[int, int], float]  # (vertex, band) turn slack
    delta: dict[tuple[int, int], int]  # (partner id, own edge) precedence

    def __post_init__(self) -> None:
        self._edge_set = frozenset(self.path_edges)

    def uses_edge(self, eid: int) -> bool:
        return eid in self._edge_set

    def destinations_reached(self) -> tuple[int, ...]:
        return (self.path_vertices[-1],) if self.path_vertices else ()


@dataclass
class MilpInstance:
    """Compact inequality form: min c.x  s.t.  A x <= b, lb <= x <= ub."""

    c: np.ndarray
    A: np.ndarray
    b: np.ndarray
    lb: np.ndarray
    ub: np.ndarray
    integral: np.ndarray  # bool mask
    big_m: float
    var_names: list[str]
    row_names: list[str]
    row_kinds: list[str]  # "travel" | "collision"
    row_gates: list[tuple[tuple[int, int], ...]]  # (column, closed value)
    row_gate_m: np.ndarray  # relaxation constant per open gate unit
    index: "VariableIndex"

    @property
    def n_vars(self) -> int:
        return self.c.size

    def travel_rows(self) -> np.ndarray:
        return np.array([k == "travel" for k in self.row_kinds])

    def to_lp_text(self) -> str:
        lines = ["minimize"]
        terms = [
            f"{coef:+.12g} {self.var_names[j]}"
            for j, coef in enumerate(self.c)
            if coef != 0.0
        ]
        lines.append("  " + " ".join(terms))
        lines.append("subject to")
        for r in range(self.A.shape[0]):
            row = self.A[r]
            terms = [
                f"{row[j]:+.12g} {self.var_names[j]}" for j in np.flatnonzero(row)
            ]
            lines.append(
                f"  {self.row_names[r]}: " + " ".join(terms) + f" <= {self.b[r]:.12g}"
            )
        lines.append("bounds")
        for j, name in enumerate(self.var_names):
            lines.append(f"  {self.lb[j]:.12g} <= {name} <= {self.ub[j]:.12g}")
        lines.append("integers")
        lines.append(
            "  " + " ".join(n for n, m in zip(self.var_names, self.integral) if m)
        )
        return "\n".join(lines) + "\n"


@dataclass
class VariableIndex:
    """Column lookup for the structured variable blocks of one vehicle."""

    p: dict[int, int] = field(default_factory=dict)  # edge -> col
    t: dict[int, int] = field(default_factory=dict)  # vertex -> col
    s_over: dict[int, int] = field(default_factory=dict)
    s_under: dict[int, int] = field(default_factory=dict)
    y: dict[tuple[int, int], int] = field(default_factory=dict)  # (vertex, band)
    g_over: dict[tuple[int, int], int] = field(default_factory=dict)
    g_under: dict[tuple[int, int], int] = field(default_factory=dict)
    eta: dict[tuple[int, int], int] = field(default_factory=dict)
    delta: dict[tuple[int, int], int] = field(default_factory=dict)  # (partner, edge)
    accel_vertices: list[int] = field(default_factory=list)
    start_vertex: int = -1
    destinations: frozenset[int] = frozenset()


def _wrap_angle(a: float) -> float:
    return (a + math.pi) % (2.0 * math.pi) - math.pi


def turn_angle(h_in: float, h_out: float) -> float:
    """Unsigned angle between successive travel directions, in [0, pi]."""
    return abs(_wrap_angle(h_out - h_in))


def partner_window_times(
    pair: CrucialPair, partner: Decision, graph: WayPointGraph
) -> tuple[float, float]:
    """Partner's conflict entry/exit times, interpolated on its own edge."""
    e = graph.edge(pair.e_j)
    try:
        t_tail = partner.t[e.tail]
        t_head = partner.t[e.head]
    except KeyError as exc:
        raise StaleDecisionError(
            f"decision of vehicle {partner.vehicle_id} lacks time at vertex {exc}"
        ) from exc
    t1 = (1.0 - pair.partner_theta_1) * t_tail + pair.partner_theta_1 * t_head
    t2 = (1.0 - pair.partner_theta_2) * t_tail + pair.partner_theta_2 * t_head
    return t1, t2


class _Builder:
    """Accumulates rows of the form core <= rhs + gate_m * (open gate units)."""

    def __init__(self, n_vars: int):
        self.rows: list[np.ndarray] = []
        self.b: list[float] = []
        self.names: list[str] = []
        self.kinds: list[str] = []
        self.gates: list[tuple[tuple[int, int], ...]] = []
        self.gate_m: list[float] = []
        self.n = n_vars

    def le(
        self,
        coeffs: dict[int, float],
        rhs: float,
        name: str,
        kind: str = "travel",
        gates: tuple[tuple[int, int], ...] = (),
        gate_m: float = 0.0,
    ) -> None:
        row = np.zeros(self.n)
        for col, val in coeffs.items():
            row[col] += val
        for col, closed in gates:
            # one open unit relaxes the row by gate_m
            if closed == 1:
                row[col] += gate_m
                rhs += gate_m
            else:
                row[col] -= gate_m
        self.rows.append(row)
        self.b.append(rhs)
        self.names.append(name)
        self.kinds.append(kind)
        self.gates.append(tuple(gates))
        self.gate_m.append(gate_m)

    def eq(self, coeffs: dict[int, float], rhs: float, name: str) -> None:
        self.le(coeffs, rhs, name + "/ub")
        self.le({c: -v for c, v in coeffs.items()}, -rhs, name + "/lb")


def _longest_path_length(graph: WayPointGraph, sub: SubGraph, start: int) -> float:
    dist = {v: -math.inf for v in sub.vertex_ids}
    dist[start] = 0.0
    for v in graph.topological_order():
        if v not in sub.vertex_ids or dist[v] == -math.inf:
            continue
        for eid in graph.out_edges(v):
            if eid not in sub.edge_ids:
                continue
            e = graph.edge(eid)
            dist[e.head] = max(dist[e.head], dist[v] + e.length)
    return max((d for d in dist.values() if d > -math.inf), default=0.0)


def earliest_arrival(
    graph: WayPointGraph, sub: SubGraph, start: int, v_max: float
) -> dict[int, float]:
    """Lower bound on each vertex's passage time at top speed."""
    t = {v: math.inf for v in sub.vertex_ids}
    t[start] = 0.0
    for v in graph.topological_order():
        if v not in sub.vertex_ids or t[v] == math.inf:
            continue
        for eid in graph.out_edges(v):
            if eid not in sub.edge_ids:
                continue
            e = graph.edge(eid)
            t[e.head] = min(t[e.head], t[v] + e.length / v_max)
    return t


def latest_arrival(
    graph: WayPointGraph, sub: SubGraph, start: int, v_min: float
) -> dict[int, float]:
    """Upper bound on each vertex's passage time.

    Velocity caps force every used edge to take at most length/v_min, so
    no plan can pass a vertex later than the longest path to it at the
    floor speed.
    """
    t = {v: 0.0 for v in sub.vertex_ids}
    t[start] = 0.0
    for v in graph.topological_order():
        if v not in sub.vertex_ids:
            continue
        for eid in graph.out_edges(v):
            if eid not in sub.edge_ids:
                continue
            e = graph.edge(eid)
            t[e.head] = max(t[e.head], t[v] + e.length / v_min)
    return t


def _station_time_range(
    s: float, length: float, lo_u: float, hi_u: float, lo_w: float, hi_w: float
) -> tuple[float, float]:
    """Range of (1-f) t_u + f t_w over independent endpoint time boxes."""
    f = s / length
    cu, cw = 1.0 - f, f
    lo = cu * (lo_u if cu >= 0 else hi_u) + cw * (lo_w if cw >= 0 else hi_w)
    hi = cu * (hi_u if cu >= 0 else lo_u) + cw * (hi_w if cw >= 0 else lo_w)
    return lo, hi


def _group_is_vacuous(
    pairs: list[tuple[CrucialPair, float, float]],
    graph: WayPointGraph,
    t_lo: dict[int, float],
    t_hi: dict[int, float],
) -> bool:
    """True when one precedence branch holds for every achievable timing.

    Such a group never restricts the vehicle (its binary can take the free
    branch), so its rows and binary are omitted from the instance.
    """
    behind_free = True
    ahead_free = True
    for pair, t1, t2 in pairs:
        ed = graph.edge(pair.e_i)
        lo_u, hi_u = t_lo[ed.tail], t_hi[ed.tail]
        lo_w, hi_w = t_lo[ed.head], t_hi[ed.head]

        def rng(s: float) -> tuple[float, float]:
            return _station_time_range(s, ed.length, lo_u, hi_u, lo_w, hi_w)

        if pair.angle_class == "acute":
            blo1, _ = rng(pair.s_hat_1 - pair.d_safe)
            blo2, _ = rng(pair.s_hat_2 - pair.d_safe)
            behind_free &= blo1 >= t1 and blo2 >= t2
            _, ahi1 = rng(pair.s_hat_1 + pair.d_safe)
            _, ahi2 = rng(pair.s_hat_2 + pair.d_safe)
            ahead_free &= ahi1 <= t1 and ahi2 <= t2
        else:
            blo, _ = rng(pair.s_hat_1 + pair.d_safe)
            behind_free &= blo >= t2
            _, ahi = rng(pair.s_hat_2 + pair.d_safe)
            ahead_free &= ahi <= t1
        if not (behind_free or ahead_free):
            return False
    return behind_free or ahead_free


def assemble_best_response(
    veh: VehicleSpec,
    sub: SubGraph,
    regions: VelocityRegions,
    others: dict[int, Decision],
    pairs: list[CrucialPair],
    weights: Weights,
    big_m: float,
    graph: WayPointGraph,
    limits: Limits,
    include_collisions: bool = True,
) -> MilpInstance:
    """Build the vehicle's best-response MILP against fixed partner plans.

    Precedence rows are emitted only for conflict records whose partner
    actually traverses the partner edge; every gated row binds only when
    this vehicle uses the conflicting edge.
    """
    weights.validate()
    regions.validate()
    if veh.start_vertex is None:
        raise AssemblyError(f"vehicle {veh.id}: start vertex unset")

    edge_ids = sorted(sub.edge_ids)
    vert_ids = sorted(sub.vertex_ids)
    start = veh.start_vertex
    dests = frozenset(d for d in veh.destinations if d in sub.vertex_ids)
    kcount = regions.count

    horizon = _longest_path_length(graph, sub, start) / max(veh.v_min, 1e-6)
    sum_le = sum(graph.edge(e).length for e in edge_ids)
    m_needed = max(200.0, 10.0 * sum_le / max(veh.v_min, 1e-6))
    if big_m < m_needed:
        raise AssemblyError(
            f"big_m={big_m} below the validated bound {m_needed:.0f} for this subgraph"
        )
    t_max = 3.0 * horizon
    t_lo = earliest_arrival(graph, sub, start, veh.v_max)
    t_hi_raw = latest_arrival(graph, sub, start, max(veh.v_min, 1e-6))
    t_hi = {v: min(t_max, t_hi_raw[v]) for v in t_hi_raw}
    M = m_needed  # per-gate ceiling; tighter constants are derived per row

    in_edges = {
        v: tuple(e for e in graph.in_edges(v) if e in sub.edge_ids) for v in vert_ids
    }
    out_edges = {
        v: tuple(e for e in graph.out_edges(v) if e in sub.edge_ids) for v in vert_ids
    }
    accel_vertices = [
        v
        for v in vert_ids
        if v != start and v not in dests and in_edges[v] and out_edges[v]
    ]

    idx = VariableIndex(
        start_vertex=start, destinations=dests, accel_vertices=accel_vertices
    )
    names: list[str] = []

    def add(name: str) -> int:
        names.append(name)
        return len(names) - 1

    for e in edge_ids:
        idx.p[e] = add(f"P[{e}]")
    for v in vert_ids:
        idx.t[v] = add(f"t[{v}]")
    for e in edge_ids:
        idx.s_over[e] = add(f"s_over[{e}]")
    for e in edge_ids:
        idx.s_under[e] = add(f"s_under[{e}]")
    band_vertices = [start] + accel_vertices
    for v in band_vertices:
        for k in range(kcount):
            idx.y[(v, k)] = add(f"y[{v},{k}]")
    for v in band_vertices:
        for k in range(kcount):
            idx.g_over[(v, k)] = add(f"g_over[{v},{k}]")
            idx.g_under[(v, k)] = add(f"g_under[{v},{k}]")
    for v in band_vertices:
        for k in range(kcount):
            idx.eta[(v, k)] = add(f"eta[{v},{k}]")

    # per-vertex caps used both as variable bounds and gate sizing
    pace_span: dict[int, float] = {}
    turn_span: dict[tuple[int, int], float] = {}
    for v in accel_vertices:
        worst = 0.0
        ang = 0.0
        for ein in in_edges[v]:
            ea = graph.edge(ein)
            for eout in out_edges[v]:
                eb = graph.edge(eout)
                worst = max(worst, t_max * (1.0 / ea.length + 1.0 / eb.length))
                ang = max(ang, turn_angle(ea.heading, eb.heading))
        pace_span[v] = worst
        for k in range(kcount):
            turn_span[(v, k)] = regions.v_ref[k] * ang
    worst0 = 0.0
    ang0 = 0.0
    for eout in out_edges[start]:
        eb = graph.edge(eout)
        worst0 = max(worst0, t_max / eb.length)
        ang0 = max(ang0, turn_angle(veh.heading, eb.heading))
    pace0_max = max(
        abs((2.0 * regions.v_ref[k] - veh.v_ini) / regions.v_ref[k] ** 2)
        for k in range(kcount)
    )
    pace_span[start] = worst0 + pace0_max
    for k in range(kcount):
        turn_span[(start, k)] = regions.v_ref[k] * ang0

    active_pairs: list[tuple[CrucialPair, float, float]] = []
    if include_collisions:
        groups: dict[tuple[int, int], list[tuple[CrucialPair, float, float]]] = {}
        for pair in pairs:
            if pair.i != veh.id:
                raise AssemblyError(f"pair {pair} does not belong to vehicle {veh.id}")
            if pair.e_i not in sub.edge_ids:
                raise AssemblyError(
                    f"pair references edge {pair.e_i} outside the subgraph"
                )
            partner = others.get(pair.j)
            if partner is None or not partner.uses_edge(pair.e_j):
                continue  # partner never enters that corridor; gate constant false
            t1, t2 = partner_window_times(pair, partner, graph)
            groups.setdefault((pair.j, pair.e_i), []).append((pair, t1, t2))
        for key in sorted(groups):
            if _group_is_vacuous(groups[key], graph, t_lo, t_hi):
                continue
            idx.delta[key] = add(f"delta[{key[0]},{key[1]}]")
            active_pairs.extend(groups[key])
    n = len(names)
    bld = _Builder(n)

    # --- path flow: leave the start once, enter exactly one destination,
    # conserve flow at interior vertices
    bld.eq({idx.p[e]: 1.0 for e in out_edges[start]}, 1.0, "flow/start")
    bld.eq(
        {idx.p[e]: 1.0 for d in dests for e in in_edges[d]},
        1.0,
        "flow/destination",
    )
    for v in vert_ids:
        if v == start or v in dests:
            continue
        coeffs: dict[int, float] = {}
        for e in in_edges[v]:
            coeffs[idx.p[e]] = coeffs.get(idx.p[e], 0.0) + 1.0
        for e in out_edges[v]:
            coeffs[idx.p[e]] = coeffs.get(idx.p[e], 0.0) - 1.0
        bld.eq(coeffs, 0.0, f"flow/conserve[{v}]")

    # --- passage times: ordering along used edges, unreached destinations
    # pinned to zero so the arrival objective counts only the reached one
    m_time = 2.0 * (t_max + TIME_GAP)
    for e in edge_ids:
        ed = graph.edge(e)
        bld.le(
            {idx.t[ed.tail]: 1.0, idx.t[ed.head]: -1.0},
            -TIME_GAP,
            f"time/order[{e}]",
            gates=((idx.p[e], 1),),
            gate_m=m_time,
        )
    for d in dests:
        bld.le(
            {idx.t[d]: 1.0},
            0.0,
            f"time/pin_dest[{d}]",
            gates=tuple((idx.p[e], 0) for e in in_edges[d]),
            gate_m=2.0 * t_max,
        )

    # --- velocity deviation rows per edge, gated on edge use
    for e in edge_ids:
        ed = graph.edge(e)
        tu, tw = idx.t[ed.tail], idx.t[ed.head]
        vr = veh.v_ref
        gate = ((idx.p[e], 1),)
        m_vel = 2.0 * (ed.length + vr * t_max)
        bld.le(
            {tu: vr, tw: -vr, idx.s_over[e]: -1.0},
            -ed.length,
            f"vel/over[{e}]",
            gates=gate,
            gate_m=m_vel,
        )
        bld.le(
            {tu: -vr, tw: vr, idx.s_under[e]: -1.0},
            ed.length,
            f"vel/under[{e}]",
            gates=gate,
            gate_m=m_vel,
        )
        c_hi = veh.v_max - veh.v_ref
        c_lo = veh.v_ref - veh.v_min
        bld.le(
            {idx.s_over[e]: 1.0, tw: -c_hi, tu: c_hi},
            0.0,
            f"vel/cap_over[{e}]",
            gates=gate,
            gate_m=2.0 * (ed.length + 1.0 + c_hi * t_max),
        )
        bld.le(
            {idx.s_under[e]: 1.0, tw: -c_lo, tu: c_lo},
            0.0,
            f"vel/cap_under[{e}]",
            gates=gate,
            gate_m=2.0 * (vr * t_max + c_lo * t_max + 1.0),
        )

    # --- velocity band selection and acceleration slacks; one shared band
    # per vertex (a simple path uses at most one in/out pair there)
    for v in band_vertices:
        bld.eq({idx.y[(v, k)]: 1.0 for k in range(kcount)}, 1.0, f"band/one[{v}]")

    for v in accel_vertices:
        tv = idx.t[v]
        for ein in in_edges[v]:
            ea = graph.edge(ein)
            for eout in out_edges[v]:
                eb = graph.edge(eout)
                la, lb_ = ea.length, eb.length
                ta1, tb2 = idx.t[ea.tail], idx.t[eb.head]
                gate2 = ((idx.p[ein], 1), (idx.p[eout], 1))
                span = la + lb_
                m_band = 2.0 * (t_max + kcount * span / regions.v_lo[0])
                coeffs = {tb2: 1.0, ta1: -1.0}
                for k in range(kcount):
                    coeffs[idx.y[(v, k)]] = -span / regions.v_lo[k]
                bld.le(coeffs, 0.0, f"band/min[{v},{ein},{eout}]", gates=gate2, gate_m=m_band)
                coeffs = {tb2: -1.0, ta1: 1.0}
                for k in range(kcount):
                    coeffs[idx.y[(v, k)]] = span / regions.v_hi[k]
                bld.le(coeffs, 0.0, f"band/max[{v},{ein},{eout}]", gates=gate2, gate_m=m_band)
                # linearized pace change (s/m) across the vertex with
                # band-scaled comfort caps
                expr = {tv: 1.0 / la + 1.0 / lb_, ta1: -1.0 / la, tb2: -1.0 / lb_}
                ang = turn_angle(ea.heading, eb.heading)
                m_pace = 2.0 * pace_span[v]
                for k in range(kcount):
                    yk = idx.y[(v, k)]
                    gate3 = gate2 + ((yk, 1),)
                    go, gu = idx.g_over[(v, k)], idx.g_under[(v, k)]
                    vr2 = 2.0 * regions.v_ref[k] ** 2
                    c = dict(expr)
                    c[go] = -1.0
                    bld.le(c, 0.0, f"acc/over[{v},{ein},{eout},{k}]", gates=gate3, gate_m=m_pace)
                    c = {col: -val for col, val in expr.items()}
                    c[gu] = -1.0
                    bld.le(c, 0.0, f"acc/under[{v},{ein},{eout},{k}]", gates=gate3, gate_m=m_pace)
                    m_cap = 2.0 * (pace_span[v] + 1.0 + limits.gamma_max * t_max / vr2)
                    bld.le(
                        {go: 1.0, tb2: -limits.gamma_max / vr2, ta1: limits.gamma_max / vr2},
                        0.0,
                        f"acc/cap_over[{v},{ein},{eout},{k}]",
                        gates=gate3,
                        gate_m=m_cap,
                    )
                    m_cap = 2.0 * (pace_span[v] + 1.0 - limits.gamma_min * t_max / vr2)
                    bld.le(
                        {gu: 1.0, tb2: limits.gamma_min / vr2, ta1: -limits.gamma_min / vr2},
                        0.0,
                        f"acc/cap_under[{v},{ein},{eout},{k}]",
                        gates=gate3,
                        gate_m=m_cap,
                    )
                    # turn-rate slack: band reference speed times turn angle,
                    # within the lateral comfort budget over the two edges
                    eta = idx.eta[(v, k)]
                    if ang > 1e-12:
                        bld.le(
                            {eta: -1.0},
                            -regions.v_ref[k] * ang,
                            f"turn/min[{v},{ein},{eout},{k}]",
                            gates=gate3,
                            gate_m=2.0 * regions.v_ref[k] * ang,
                        )
                    bld.le(
                        {eta: 1.0, tb2: -limits.eta_max, ta1: limits.eta_max},
                        0.0,
                        f"turn/cap[{v},{ein},{eout},{k}]",
                        gates=gate3,
                        gate_m=2.0 * (turn_span[(v, k)] + limits.eta_max * t_max + 1.0),
                    )

    # --- start-vertex variants: no incoming edge, initial velocity known
    for eout in out_edges[start]:
        eb = graph.edge(eout)
        lb_ = eb.length
        tb2 = idx.t[eb.head]
        gate1 = ((idx.p[eout], 1),)
        m_band = 2.0 * (t_max + kcount * lb_ / regions.v_lo[0])
        coeffs = {tb2: 1.0}
        for k in range(kcount):
            coeffs[idx.y[(start, k)]] = -lb_ / regions.v_lo[k]
        bld.le(coeffs, 0.0, f"band/min[start,{eout}]", gates=gate1, gate_m=m_band)
        coeffs = {tb2: -1.0}
        for k in range(kcount):
            coeffs[idx.y[(start, k)]] = lb_ / regions.v_hi[k]
        bld.le(coeffs, 0.0, f"band/max[start,{eout}]", gates=gate1, gate_m=m_band)
        ang = turn_angle(veh.heading, eb.heading)
        m_pace = 2.0 * pace_span[start]
        for k in range(kcount):
            yk = idx.y[(start, k)]
            gate2 = gate1 + ((yk, 1),)
            go, gu = idx.g_over[(start, k)], idx.g_under[(start, k)]
            vrk = regions.v_ref[k]
            vr2 = 2.0 * vrk**2
            pace0 = (2.0 * vrk - veh.v_ini) / vrk**2  # linearized initial pace
            bld.le(
                {tb2: -1.0 / lb_, go: -1.0},
                -pace0,
                f"acc/over[start,{eout},{k}]",
                gates=gate2,
                gate_m=m_pace,
            )
            bld.le(
                {tb2: 1.0 / lb_, gu: -1.0},
                pace0,
                f"acc/under[start,{eout},{k}]",
                gates=gate2,
                gate_m=m_pace,
            )
            m_cap = 2.0 * (pace_span[start] + 1.0 + limits.gamma_max * t_max / vr2)
            bld.le(
                {go: 1.0, tb2: -limits.gamma_max / vr2},
                0.0,
                f"acc/cap_over[start,{eout},{k}]",
                gates=gate2,
                gate_m=m_cap,
            )
            m_cap = 2.0 * (pace_span[start] + 1.0 - limits.gamma_min * t_max / vr2)
            bld.le(
                {gu: 1.0, tb2: limits.gamma_min / vr2},
                0.0,
                f"acc/cap_under[start,{eout},{k}]",
                gates=gate2,
                gate_m=m_cap,
            )
            eta = idx.eta[(start, k)]
            if ang > 1e-12:
                bld.le(
                    {eta: -1.0},
                    -vrk * ang,
                    f"turn/min[start,{eout},{k}]",
                    gates=gate2,
                    gate_m=2.0 * vrk * ang,
                )
            bld.le(
                {eta: 1.0, tb2: -limits.eta_max},
                0.0,
                f"turn/cap[start,{eout},{k}]",
                gates=gate2,
                gate_m=2.0 * (turn_span[(start, k)] + limits.eta_max * t_max + 1.0),
            )

    # --- precedence rows against fixed partner windows; rows that hold
    # for every achievable timing are left out
    for pair, t1, t2 in active_pairs:
        ed = graph.edge(pair.e_i)
        tu, tw = idx.t[ed.tail], idx.t[ed.head]
        dcol = idx.delta[(pair.j, pair.e_i)]
        pcol = idx.p[pair.e_i]
        le = ed.length
        tag = f"[{pair.j},{pair.e_i},{pair.e_j}]"
        prune_box = (t_lo[ed.tail], t_hi[ed.tail], t_lo[ed.head], t_hi[ed.head])
        full_box = (0.0, t_hi[ed.tail], 0.0, t_hi[ed.head])

        def station_coeffs(s: float) -> dict[int, float]:
            frac = s / le
            return {tu: 1.0 - frac, tw: frac}

        if pair.angle_class == "acute":
            specs = [
                (pair.s_hat_1 - pair.d_safe, ">=", t1, "behind_in"),
                (pair.s_hat_2 - pair.d_safe, ">=", t2, "behind_out"),
                (pair.s_hat_1 + pair.d_safe, "<=", t1, "ahead_in"),
                (pair.s_hat_2 + pair.d_safe, "<=", t2, "ahead_out"),
            ]
        else:
            # published pairing for opposing edges: the entry station is
            # held until the partner's exit time and vice versa
            specs = [
                (pair.s_hat_1 + pair.d_safe, ">=", t2, "behind"),
                (pair.s_hat_2 + pair.d_safe, "<=", t1, "ahead"),
            ]
        for station, sense, rhs, label in specs:
            lhs_lo, lhs_hi = _station_time_range(station, le, *prune_box)
            flo, fhi = _station_time_range(station, le, *full_box)
            if sense == ">=":
                if lhs_lo >= rhs - 1e-9:
                    continue  # satisfied regardless of the plan
                m_row = 2.0 * (rhs - flo)
                c = {col: -val for col, val in station_coeffs(station).items()}
                bld.le(
                    c,
                    -rhs,
                    f"prec/{label}{tag}",
                    kind="collision",
                    gates=((dcol, 0), (pcol, 1)),
                    gate_m=m_row,
                )
            else:
                if lhs_hi <= rhs + 1e-9:
                    continue
                m_row = 2.0 * (fhi - rhs)
                bld.le(
                    station_coeffs(station),
                    rhs,
                    f"prec/{label}{tag}",
                    kind="collision",
                    gates=((dcol, 1), (pcol, 1)),
                    gate_m=m_row,
                )

    # --- objective and bounds
    c = np.zeros(n)
    for d in dests:
        c[idx.t[d]] += weights.alpha_t
    for e in edge_ids:
        c[idx.s_over[e]] += weights.alpha_v
        c[idx.s_under[e]] += weights.alpha_v
    for (v, k), col in idx.g_over.items():
        c[col] += weights.alpha_a * regions.v_ref[k] ** 2
    for (v, k), col in idx.g_under.items():
        c[col] += weights.alpha_a * regions.v_ref[k] ** 2
    for col in idx.eta.values():
        c[col] += weights.alpha_theta

    lb = np.zeros(n)
    ub = np.zeros(n)
    integral = np.zeros(n, dtype=bool)
    for col in idx.p.values():
        ub[col] = 1.0
        integral[col] = True
    for col in idx.y.values():
        ub[col] = 1.0
        integral[col] = True
    for col in idx.delta.values():
        ub[col] = 1.0
        integral[col] = True
    for v, col in idx.t.items():
        ub[col] = t_hi[v]
        if v not in dests and math.isfinite(t_lo[v]):
            # a passage earlier than the top-speed bound is unreachable,
            # and unused vertices are unconstrained otherwise
            lb[col] = t_lo[v]
    ub[idx.t[start]] = 0.0  # departure defines the clock origin
    lb[idx.t[start]] = 0.0
    for e, col in idx.s_over.items():
        ub[col] = graph.edge(e).length + 1.0
    for e, col in idx.s_under.items():
        ub[col] = veh.v_ref * t_max
    for (v, k), col in idx.g_over.items():
        ub[col] = pace_span[v] + 1.0
        ub[idx.g_under[(v, k)]] = pace_span[v] + 1.0
    for (v, k), col in idx.eta.items():
        ub[col] = turn_span[(v, k)] + 1.0

    return MilpInstance(
        c=c,
        A=np.vstack(bld.rows) if bld.rows else np.zeros((0, n)),
        b=np.asarray(bld.b),
        lb=lb,
        ub=ub,
        integral=integral,
        big_m=m_needed,
        var_names=names,
        row_names=bld.names,
        row_kinds=bld.kinds,
        row_gates=bld.gates,
        row_gate_m=np.asarray(bld.gate_m),
        index=idx,
    )


def decision_from_solution(
    x: np.ndarray, instance: MilpInstance, veh: VehicleSpec, graph: WayPointGraph
) -> Decision:
    """Read the structured plan back out of a solver vector."""
    idx = instance.index
    used = {e for e, col in idx.p.items() if x[col] > 0.5}
    path_edges: list[int] = []
    path_vertices = [idx.start_vertex]
    v = idx.start_vertex
    while v not in idx.destinations:
        nxt = [e for e in graph.out_edges(v) if e in used]
        if len(nxt) != 1:
            raise AssemblyError(f"path binaries do not form a simple path at vertex {v}")
        e = nxt[0]
        used.discard(e)
        path_edges.append(e)
        v = graph.edge(e).head
        path_vertices.append(v)
    kcount = max(k for (_, k) in idx.y) + 1 if idx.y else 1
    region = {}
    for v_ in {vk[0] for vk in idx.y}:
        sel = [k for k in range(kcount) if x[idx.y[(v_, k)]] > 0.5]
        region[v_] = sel[0] if sel else 0
    return Decision(
        vehicle_id=veh.id,
        path_edges=tuple(path_edges),
        path_vertices=tuple(path_vertices),
        t={v_: float(x[col]) for v_, col in idx.t.items()},
        s_over={e: float(x[col]) for e, col in idx.s_over.items()},
        s_under={e: float(x[col]) for e, col in idx.s_under.items()},
        region=region,
        gamma_over={vk: float(x[col]) for vk, col in idx.g_over.items()},
        gamma_under={vk: float(x[col]) for vk, col in idx.g_under.items()},
        eta={vk: float(x[col]) for vk, col in idx.eta.items()},
        delta={key: int(round(x[col])) for key, col in idx.delta.items()},
    )


def decision_to_vector(decision: Decision, instance: MilpInstance) -> np.ndarray:
    """Embed a structured plan into the instance's variable layout."""
    idx = instance.index
    x = np.zeros(instance.n_vars)
    for e, col in idx.p.items():
        x[col] = 1.0 if decision.uses_edge(e) else 0.0
    for v, col in idx.t.items():
        # vertices without a recorded time sit at their reachability bound
        x[col] = decision.t[v] if v in decision.t else instance.lb[col]
    for e, col in idx.s_over.items():
        x[col] = decision.s_over.get(e, 0.0)
    for e, col in idx.s_under.items():
        x[col] = decision.s_under.get(e, 0.0)
    for (v, k), col in idx.y.items():
        x[col] = 1.0 if decision.region.get(v, 0) == k else 0.0
    for vk, col in idx.g_over.items():
        x[col] = decision.gamma_over.get(vk, 0.0)
    for vk, col in idx.g_under.items():
        x[col] = decision.gamma_under.get(vk, 0.0)
    for vk, col in idx.eta.items():
        x[col] = decision.eta.get(vk, 0.0)
    for key, col in idx.delta.items():
        x[col] = float(decision.delta.get(key, 0))
    return x


def evaluate_cost(decision: Decision, weights: Weights, regions: VelocityRegions) -> float:
    """Weighted plan cost; by construction it depends only on own variables."""
    f_t = sum(decision.t.get(d, 0.0) for d in decision.destinations_reached())
    f_v = sum(decision.s_over.values()) + sum(decision.s_under.values())
    f_a = 0.0
    for (v, k), val in decision.gamma_over.items():
        f_a += regions.v_ref[k] ** 2 * val
    for (v, k), val in decision.gamma_under.items():
        f_a += regions.v_ref[k] ** 2 * val
    f_th = sum(decision.eta.values())
    return (
        weights.alpha_t * f_t
        + weights.alpha_v * f_v
        + weights.alpha_a * f_a
        + weights.alpha_theta * f_th
    )


def check_travel_feasibility(
    decision: Decision, instance: MilpInstance, tol: float = FEAS_TOL
) -> list[tuple[str, float]]:
    """Violated travel rows (name, excess); precedence rows are ignored."""
    x = decision_to_vector(decision, instance)
    resid = instance.A @ x - instance.b
    out = []
    for r in np.flatnonzero(resid > tol):
        if instance.row_kinds[r] == "travel":
            out.append((instance.row_names[r], float(resid[r])))
    return out


def count_collisions(
    veh_id: int,
    decision: Decision,
    others: dict[int, Decision],
    pairs: list[CrucialPair],
    graph: WayPointGraph,
    tol: float = 1e-9,
) -> int:
    """Conflict records violated by the current plans.

    A record counts when both vehicles traverse their edges and neither
    precedence choice satisfies its rows evaluated as plain inequalities.
    """
    count = 0
    for pair in pairs:
        if pair.i != veh_id or not decision.uses_edge(pair.e_i):
            continue
        partner = others.get(pair.j)
        if partner is None or not partner.uses_edge(pair.e_j):
            continue
        t1, t2 = partner_window_times(pair, partner, graph)
        ed = graph.edge(pair.e_i)
        t_tail = decision.t[ed.tail]
        t_head = decision.t[ed.head]

        def at_station(s: float) -> float:
            frac = s / ed.length
            return (1.0 - frac) * t_tail + frac * t_head

        if pair.angle_class == "acute":
            behind = (
                at_station(pair.s_hat_1 - pair.d_safe) >= t1 - tol
                and at_station(pair.s_hat_2 - pair.d_safe) >= t2 - tol
            )
            ahead = (
                at_station(pair.s_hat_1 + pair.d_safe) <= t1 + tol
                and at_station(pair.s_hat_2 + pair.d_safe) <= t2 + tol
            )
        else:
            behind = at_station(pair.s_hat_1 + pair.d_safe) >= t2 - tol
            ahead = at_station(pair.s_hat_2 + pair.d_safe) <= t1 + tol
        if not (behind or ahead):
            count += 1
    return count
