"""Best-response dynamics to an epsilon-equilibrium of the potential game.

Each vehicle minimizes only its own cost, so the sum of costs is an exact
potential: any accepted unilateral improvement lowers the sum by the same
amount, giving finite termination of the Gauss-Seidel sweeps.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from cavgame.conflict_geometry import CrucialPair
from cavgame.milp_model import (
    Decision,
    Limits,
    VelocityRegions,
    Weights,
    assemble_best_response,
    count_collisions,
    decision_from_solution,
    evaluate_cost,
)
from cavgame.milp_solver import SolveResult, solve_milp
from cavgame.waypoint_graph import SubGraph, VehicleSpec, WayPointGraph


class ScenarioError(RuntimeError):
    """A vehicle cannot form any feasible plan in isolation."""


@dataclass
class GameProblem:
    """Immutable per-scenario bundle shared by all solver calls."""

    graph: WayPointGraph
    vehicles: dict[int, VehicleSpec]
    subgraphs: dict[int, SubGraph]
    regions: dict[int, VelocityRegions]
    pairs_by_vehicle: dict[int, list[CrucialPair]]
    weights: Weights
    limits: Limits
    big_m: float
    progress: dict[int, float]  # start position along the lane, for ordering

    @property
    def vehicle_ids(self) -> list[int]:
        return sorted(self.vehicles)


@dataclass
class IterationRecord:
    sweep: int
    vehicle: int
    j_before: float
    j_after: float
    delta: float
    accepted: bool
    feasible: bool
    repair: bool  # adopted because the incumbent plan violated conflicts
    potential: float
    collisions: int


@dataclass
class GameState:
    decisions: dict[int, Decision]
    log: list[IterationRecord] = field(default_factory=list)
    sweeps: int = 0
    converged: bool = False
    infeasible_vehicles: set[int] = field(default_factory=set)
    solve_time: float = 0.0
    solve_calls: int = 0


@dataclass(frozen=True)
class OrderPolicy:
    kind: str = "default"  # "default" | "lod" | "topsis"
    beta_p: float = 0.5
    beta_v: float = 0.5
    collision_aware: bool = True

    def validate(self) -> None:
        if self.kind not in ("default", "lod", "topsis"):
            raise ValueError(f"unknown order kind {self.kind!r}")
        if self.beta_p < 0 or self.beta_v < 0 or self.beta_p + self.beta_v == 0:
            raise ValueError("order weights must be nonnegative, not both zero")


@dataclass
class CertifyResult:
    certified: bool
    worst_vehicle: int | None
    worst_improvement: float
    inconclusive: list[int]
    collisions: dict[int, int]


def cost_of(problem: GameProblem, vid: int, decision: Decision) -> float:
    return evaluate_cost(decision, problem.weights, problem.regions[vid])


def potential(problem: GameProblem, state: GameState) -> float:
    """Sum of all vehicles' costs: the game's exact potential."""
    return sum(cost_of(problem, i, d) for i, d in state.decisions.items())


def collision_counts(problem: GameProblem, state: GameState) -> dict[int, int]:
    out = {}
    for i, dec in state.decisions.items():
        others = {j: d for j, d in state.decisions.items() if j != i}
        out[i] = count_collisions(
            i, dec, others, problem.pairs_by_vehicle[i], problem.graph
        )
    return out


def _path_dive(problem: GameProblem, vid: int, inst) -> "callable":
    """Root-relaxation dive: follow the LP-heaviest out-edges into a single
    path, fix those binaries, and let the solver finish the small rest."""
    graph, sub = problem.graph, problem.subgraphs[vid]
    veh = problem.vehicles[vid]
    dests = {d for d in veh.destinations if d in sub.vertex_ids}

    def dive(x):
        v = veh.start_vertex
        chosen: set[int] = set()
        seen: set[int] = set()
        while v not in dests:
            if v in seen:
                return None
            seen.add(v)
            options = [
                (x[inst.index.p[e]], -e, e)
                for e in graph.out_edges(v)
                if e in sub.edge_ids
            ]
            if not options:
                return None
            _, _, e = max(options)
            chosen.add(e)
            v = graph.edge(e).head
        return {col: (1.0 if e in chosen else 0.0) for e, col in inst.index.p.items()}

    return dive


def best_response(
    problem: GameProblem, state: GameState, vid: int, include_collisions: bool = True
) -> tuple[SolveResult, Decision | None]:
    others = {j: d for j, d in state.decisions.items() if j != vid}
    pairs = problem.pairs_by_vehicle[vid] if include_collisions else []
    inst = assemble_best_response(
        problem.vehicles[vid],
        problem.subgraphs[vid],
        problem.regions[vid],
        others,
        pairs,
        problem.weights,
        problem.big_m,
        problem.graph,
        problem.limits,
        include_collisions=include_collisions,
    )
    # stopping a quarter of epsilon above the bound never flips an
    # accept/certify decision made at the epsilon threshold
    res = solve_milp(
        inst, dive=_path_dive(problem, vid, inst), abs_gap=0.05, node_limit=50_000
    )
    if res.status != "optimal" or res.x is None:
        return res, None
    return res, decision_from_solution(res.x, inst, problem.vehicles[vid], problem.graph)


def _turn_drivable(problem: GameProblem, vid: int, h_in: float, e_out: int, l_in: float) -> bool:
    """Whether some velocity band can take this turn within the lateral
    comfort budget; undrivable junction choices are not worth sampling."""
    from cavgame.milp_model import turn_angle

    e = problem.graph.edge(e_out)
    ang = turn_angle(h_in, e.heading)
    regions = problem.regions[vid]
    span = l_in + e.length
    return any(
        regions.v_ref[k] * ang
        <= problem.limits.eta_max * span / regions.v_lo[k] + 1e-9
        for k in range(regions.count)
    )


def _random_path(
    problem: GameProblem, vid: int, rng: np.random.Generator, attempts: int = 32
) -> tuple[tuple[int, ...], tuple[int, ...]]:
    """Random start-to-destination path, weighted by suffix path counts and
    restricted to junction turns the vehicle can physically take."""
    graph, sub = problem.graph, problem.subgraphs[vid]
    veh = problem.vehicles[vid]
    dests = {d for d in veh.destinations if d in sub.vertex_ids}
    counts: dict[int, float] = {v: 0.0 for v in sub.vertex_ids}
    for v in reversed(graph.topological_order()):
        if v not in sub.vertex_ids:
            continue
        if v in dests:
            counts[v] = 1.0
            continue
        counts[v] = sum(
            counts[graph.edge(e).head]
            for e in graph.out_edges(v)
            if e in sub.edge_ids
        )
    for _ in range(attempts):
        v = veh.start_vertex
        h_in, l_in = veh.heading, 0.0
        edges, verts = [], [v]
        while v not in dests:
            options = [
                e
                for e in sorted(graph.out_edges(v))
                if e in sub.edge_ids
                and counts[graph.edge(e).head] > 0
                and _turn_drivable(problem, vid, h_in, e, l_in)
            ]
            if not options:
                break  # dead end under the turn filter; redraw
            # uniform over drivable successors: naive, zigzag-happy starts
            e = options[int(rng.integers(len(options)))]
            edges.append(e)
            ed = graph.edge(e)
            h_in, l_in = ed.heading, ed.length
            v = ed.head
            verts.append(v)
        else:
            return tuple(edges), tuple(verts)
    raise ScenarioError(f"vehicle {vid}: no drivable random path found")


def _profile_for_path(
    problem: GameProblem, vid: int, path_edges: tuple[int, ...]
) -> Decision | None:
    """Cheapest feasible timing profile for a fixed path, or None."""
    inst = assemble_best_response(
        problem.vehicles[vid],
        problem.subgraphs[vid],
        problem.regions[vid],
        {},
        [],
        problem.weights,
        problem.big_m,
        problem.graph,
        problem.limits,
        include_collisions=False,
    )
    used = set(path_edges)
    for e, col in inst.index.p.items():
        val = 1.0 if e in used else 0.0
        inst.lb[col] = val
        inst.ub[col] = val
    res = solve_milp(inst)
    if res.status != "optimal" or res.x is None:
        return None
    return decision_from_solution(res.x, inst, problem.vehicles[vid], problem.graph)


def initial_state(
    problem: GameProblem, mode: str = "random-feasible", seed: int | np.random.Generator = 0
) -> GameState:
    """Starting decisions: per-vehicle optimum ignoring conflicts, or a
    random path with its cheapest drivable profile.

    Either way every vehicle satisfies its own travel constraints; mutual
    collision freedom is not guaranteed.
    """
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    decisions: dict[int, Decision] = {}
    empty = GameState(decisions={})
    for vid in problem.vehicle_ids:
        if mode == "independent-optimum":
            res, dec = best_response(problem, empty, vid, include_collisions=False)
            if dec is None:
                raise ScenarioError(f"vehicle {vid}: travel-infeasible ({res.status})")
        elif mode == "random-feasible":
            dec = None
            try:
                for _ in range(32):
                    path, _verts = _random_path(problem, vid, rng)
                    dec = _profile_for_path(problem, vid, path)
                    if dec is not None:
                        break
            except ScenarioError:
                dec = None
            if dec is None:
                # sampled paths can all be undrivable for extreme speed
                # draws; the vehicle's own optimum is still a valid start
                res, dec = best_response(problem, empty, vid, include_collisions=False)
                if dec is None:
                    raise ScenarioError(
                        f"vehicle {vid}: no drivable plan exists ({res.status})"
                    )
        else:
            raise ValueError(f"unknown initial state mode {mode!r}")
        decisions[vid] = dec
    return GameState(decisions=decisions)


def _rank(values: list[float], descending: bool) -> list[int]:
    """1-based ranks; ties keep vehicle-list order."""
    order = sorted(
        range(len(values)), key=lambda i: (-values[i] if descending else values[i], i)
    )
    ranks = [0] * len(values)
    for r, i in enumerate(order, start=1):
        ranks[i] = r
    return ranks


def lod_order(
    p_ini: list[float], v_ini: list[float], beta_p: float = 0.5, beta_v: float = 0.5
) -> list[int]:
    """Rank-combination ordering: front-most and slowest vehicles first.

    Returns 0-based indices into the input lists.
    """
    if len(p_ini) != len(v_ini) or not p_ini:
        raise ValueError("need equal nonempty position/velocity lists")
    rank_p = _rank(list(p_ini), descending=True)  # front-most gets rank 1
    rank_v = _rank(list(v_ini), descending=False)  # slowest gets rank 1
    value = [beta_p * rp + beta_v * rv for rp, rv in zip(rank_p, rank_v)]
    return sorted(range(len(value)), key=lambda i: (value[i], i))


def topsis_order(
    p_ini: list[float], v_ini: list[float], betas: tuple[float, float] = (0.5, 0.5)
) -> list[int]:
    """Closeness-to-ideal ordering on the (position, slowness) matrix.

    Columns are min-max normalized; distances are weighted Euclidean
    against the normalized column extremes, so a constant column
    contributes nothing.  Returns 0-based indices, descending score.
    """
    if len(p_ini) != len(v_ini) or not p_ini:
        raise ValueError("need equal nonempty position/velocity lists")
    m = np.array([p_ini, [max(v_ini) - v for v in v_ini]], dtype=float).T
    norm = np.zeros_like(m)
    for j in range(m.shape[1]):
        span = m[:, j].max() - m[:, j].min()
        if span > 1e-12:
            norm[:, j] = (m[:, j] - m[:, j].min()) / span
    w = np.asarray(betas, dtype=float)
    hi = norm.max(axis=0)
    lo = norm.min(axis=0)
    d_plus = np.sqrt(((hi - norm) ** 2 * w).sum(axis=1))
    d_minus = np.sqrt(((norm - lo) ** 2 * w).sum(axis=1))
    denom = d_plus + d_minus
    scores = np.where(denom > 1e-12, d_minus / np.maximum(denom, 1e-300), 0.5)
    return sorted(range(len(p_ini)), key=lambda i: (-scores[i], i))


def base_order(problem: GameProblem, policy: OrderPolicy) -> list[int]:
    """Vehicle ids in optimization order under the chosen policy."""
    policy.validate()
    ids = problem.vehicle_ids
    if policy.kind == "default":
        return list(ids)
    p = [problem.progress[i] for i in ids]
    v = [problem.vehicles[i].v_ini for i in ids]
    if policy.kind == "lod":
        perm = lod_order(p, v, policy.beta_p, policy.beta_v)
    else:
        perm = topsis_order(p, v, (policy.beta_p, policy.beta_v))
    return [ids[k] for k in perm]


def _same_plan(a: Decision, b: Decision, tol: float = 1e-9) -> bool:
    if a.path_edges != b.path_edges:
        return False
    return all(abs(a.t[v] - b.t[v]) <= tol for v in a.path_vertices)


def _sweep(
    problem: GameProblem,
    state: GameState,
    eps: float,
    order: list[int],
    sweep_no: int,
) -> int:
    """One Gauss-Seidel pass; returns the number of accepted updates.

    A plan that violates conflict constraints is not an admissible
    strategy, so a vehicle holding one adopts any feasible response
    regardless of the cost change; admissible plans are only replaced
    when the response improves the own cost by at least eps.
    """
    accepted = 0
    counts = collision_counts(problem, state)
    for vid in order:
        t0 = time.perf_counter()
        res, candidate = best_response(problem, state, vid)
        state.solve_time += time.perf_counter() - t0
        state.solve_calls += 1
        j_before = cost_of(problem, vid, state.decisions[vid])
        if candidate is None:
            state.infeasible_vehicles.add(vid)
            state.log.append(
                IterationRecord(
                    sweep=sweep_no,
                    vehicle=vid,
                    j_before=j_before,
                    j_after=j_before,
                    delta=0.0,
                    accepted=False,
                    feasible=False,
                    repair=False,
                    potential=potential(problem, state),
                    collisions=counts.get(vid, 0),
                )
            )
            continue
        state.infeasible_vehicles.discard(vid)
        j_after = cost_of(problem, vid, candidate)
        delta = j_before - j_after
        repair = counts.get(vid, 0) > 0 and not _same_plan(
            state.decisions[vid], candidate
        )
        take = delta >= eps or repair
        if take:
            state.decisions[vid] = candidate
            accepted += 1
        counts = collision_counts(problem, state)
        state.log.append(
            IterationRecord(
                sweep=sweep_no,
                vehicle=vid,
                j_before=j_before,
                j_after=j_after if take else j_before,
                delta=delta,
                accepted=take,
                feasible=True,
                repair=repair and take,
                potential=potential(problem, state),
                collisions=counts.get(vid, 0),
            )
        )
    return accepted


def _mark_converged(problem: GameProblem, state: GameState) -> None:
    """A stalled sweep is a fixed point; it only counts as converged when
    the state is a genuine equilibrium (collision-free, all responses
    solvable).  Stalls at colliding states are failed runs."""
    state.converged = (
        not state.infeasible_vehicles
        and all(c == 0 for c in collision_counts(problem, state).values())
    )


def gauss_seidel(
    problem: GameProblem,
    state: GameState,
    eps: float,
    order: list[int] | None = None,
    max_sweeps: int = 20,
) -> GameState:
    """Fixed-order sweeps until one full pass accepts no update."""
    if eps <= 0:
        raise ValueError("eps must be positive")
    order = list(order) if order is not None else problem.vehicle_ids
    for sweep_no in range(1, max_sweeps + 1):
        accepted = _sweep(problem, state, eps, order, sweep_no)
        state.sweeps = sweep_no
        if accepted == 0:
            _mark_converged(problem, state)
            break
    return state


def sequential_gauss_seidel(
    problem: GameProblem,
    state: GameState,
    eps: float,
    policy: OrderPolicy,
    max_sweeps: int = 20,
) -> GameState:
    """Collision-aware sweeps: vehicles with fewer conflicts move first.

    When every count is zero the sweep falls back to the policy's base
    order, so conflict-free runs reproduce plain Gauss-Seidel.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    base = base_order(problem, policy)
    base_pos = {vid: k for k, vid in enumerate(base)}
    for sweep_no in range(1, max_sweeps + 1):
        if policy.collision_aware:
            counts = collision_counts(problem, state)
            order = sorted(base, key=lambda vid: (counts[vid], base_pos[vid]))
        else:
            order = base
        accepted = _sweep(problem, state, eps, order, sweep_no)
        state.sweeps = sweep_no
        if accepted == 0:
            _mark_converged(problem, state)
            break
    return state


def certify_epsilon_mine(
    problem: GameProblem, state: GameState, eps: float
) -> CertifyResult:
    """Re-solve every best response; certified when nobody can improve by
    eps or more and the joint state is collision-free."""
    counts = collision_counts(problem, state)
    worst_vid: int | None = None
    worst = -math.inf
    inconclusive: list[int] = []
    for vid in problem.vehicle_ids:
        res, candidate = best_response(problem, state, vid)
        if candidate is None:
            inconclusive.append(vid)
            continue
        improvement = cost_of(problem, vid, state.decisions[vid]) - cost_of(
            problem, vid, candidate
        )
        if improvement > worst:
            worst, worst_vid = improvement, vid
    certified = (
        not inconclusive
        and worst < eps
        and all(c == 0 for c in counts.values())
    )
    return CertifyResult(
        certified=certified,
        worst_vehicle=worst_vid,
        worst_improvement=worst if worst > -math.inf else 0.0,
        inconclusive=inconclusive,
        collisions=counts,
    )
