"""Joint all-vehicle MILP, for comparing against the equilibrium search.

The joint model stacks every vehicle's travel block and replaces the
fixed partner times in precedence rows with the partners' own variables,
with all precedence binaries free.  Its optimum is the cooperative global
optimum the per-vehicle iteration approximates.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from cavgame.game import GameProblem, GameState
from cavgame.milp_model import (
    MilpInstance,
    VariableIndex,
    _station_time_range,
    assemble_best_response,
    decision_to_vector,
    earliest_arrival,
    partner_window_times,
)
from cavgame.milp_solver import SolveResult, solve_milp


@dataclass
class JointModel:
    instance: MilpInstance
    offsets: dict[int, int]  # vehicle id -> column offset of its block
    blocks: dict[int, MilpInstance]  # per-vehicle travel instances
    delta: dict[tuple[int, int, int], int]  # (i, j, e_i) -> column


def assemble_joint(problem: GameProblem) -> JointModel:
    """Stack travel blocks and couple them with free precedence rows."""
    blocks: dict[int, MilpInstance] = {}
    offsets: dict[int, int] = {}
    n = 0
    for vid in problem.vehicle_ids:
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
        blocks[vid] = inst
        offsets[vid] = n
        n += inst.n_vars

    groups: dict[tuple[int, int, int], list] = {}
    for vid in problem.vehicle_ids:
        for pair in problem.pairs_by_vehicle[vid]:
            if pair.e_j not in problem.subgraphs[pair.j].edge_ids:
                continue
            groups.setdefault((pair.i, pair.j, pair.e_i), []).append(pair)

    delta: dict[tuple[int, int, int], int] = {}
    names: list[str] = []
    for vid in problem.vehicle_ids:
        names.extend(f"v{vid}:{nm}" for nm in blocks[vid].var_names)
    for key in sorted(groups):
        delta[key] = n + len(delta)
        names.append(f"delta[{key[0]},{key[1]},{key[2]}]")
    n_total = n + len(delta)

    rows: list[np.ndarray] = []
    rhs: list[float] = []
    row_names: list[str] = []
    row_kinds: list[str] = []
    row_gates: list[tuple[tuple[int, int], ...]] = []
    row_gate_m: list[float] = []

    for vid in problem.vehicle_ids:
        inst = blocks[vid]
        off = offsets[vid]
        pad_before = np.zeros((inst.A.shape[0], off))
        pad_after = np.zeros((inst.A.shape[0], n_total - off - inst.n_vars))
        rows.extend(np.hstack([pad_before, inst.A, pad_after]))
        rhs.extend(inst.b)
        row_names.extend(f"v{vid}:{nm}" for nm in inst.row_names)
        row_kinds.extend(inst.row_kinds)
        row_gates.extend(
            tuple((off + col, closed) for col, closed in gates)
            for gates in inst.row_gates
        )
        row_gate_m.extend(inst.row_gate_m)

    graph = problem.graph
    t_boxes: dict[int, tuple[dict[int, float], float]] = {}
    for vid in problem.vehicle_ids:
        inst = blocks[vid]
        t_max = max(inst.ub[col] for col in inst.index.t.values())
        t_lo = earliest_arrival(
            graph, problem.subgraphs[vid], problem.vehicles[vid].start_vertex,
            problem.vehicles[vid].v_max,
        )
        t_boxes[vid] = (t_lo, t_max)

    def station_cols(vid: int, eid: int, s: float) -> dict[int, float]:
        inst = blocks[vid]
        ed = graph.edge(eid)
        f = s / ed.length
        off = offsets[vid]
        return {
            off + inst.index.t[ed.tail]: 1.0 - f,
            off + inst.index.t[ed.head]: f,
        }

    def window_cols(vid: int, eid: int, theta: float) -> dict[int, float]:
        inst = blocks[vid]
        ed = graph.edge(eid)
        off = offsets[vid]
        return {
            off + inst.index.t[ed.tail]: 1.0 - theta,
            off + inst.index.t[ed.head]: theta,
        }

    def box_range(vid: int, eid: int, s_or_theta: float, is_station: bool) -> tuple[float, float]:
        t_lo, t_max = t_boxes[vid]
        ed = graph.edge(eid)
        if is_station:
            return _station_time_range(s_or_theta, ed.length, 0.0, t_max, 0.0, t_max)
        th = s_or_theta
        return (0.0, t_max)

    for (i, j, e_i), pair_list in sorted(groups.items()):
        dcol = delta[(i, j, e_i)]
        p_i = offsets[i] + blocks[i].index.p[e_i]
        for pair in pair_list:
            p_j = offsets[j] + blocks[j].index.p[pair.e_j]
            tag = f"[{i},{j},{e_i},{pair.e_j}]"
            windows = [
                (pair.partner_theta_1, "in"),
                (pair.partner_theta_2, "out"),
            ]
            if pair.angle_class == "acute":
                specs = [
                    (pair.s_hat_1 - pair.d_safe, ">=", 0, "behind_in"),
                    (pair.s_hat_2 - pair.d_safe, ">=", 1, "behind_out"),
                    (pair.s_hat_1 + pair.d_safe, "<=", 0, "ahead_in"),
                    (pair.s_hat_2 + pair.d_safe, "<=", 1, "ahead_out"),
                ]
            else:
                specs = [
                    (pair.s_hat_1 + pair.d_safe, ">=", 1, "behind"),
                    (pair.s_hat_2 + pair.d_safe, "<=", 0, "ahead"),
                ]
            for station, sense, w_idx, label in specs:
                theta_w = windows[w_idx][0]
                lhs = station_cols(i, e_i, station)
                rhs_cols = window_cols(j, pair.e_j, theta_w)
                s_lo, s_hi = box_range(i, e_i, station, True)
                w_lo, w_hi = 0.0, t_boxes[j][1]
                row = np.zeros(n_total)
                if sense == ">=":
                    # station time of i must not precede j's window time
                    for col, val in lhs.items():
                        row[col] -= val
                    for col, val in rhs_cols.items():
                        row[col] += val
                    m_row = 2.0 * max(w_hi - s_lo, 1.0)
                    gates = ((dcol, 0), (p_i, 1), (p_j, 1))
                    base = 0.0
                else:
                    for col, val in lhs.items():
                        row[col] += val
                    for col, val in rhs_cols.items():
                        row[col] -= val
                    m_row = 2.0 * max(s_hi - w_lo, 1.0)
                    gates = ((dcol, 1), (p_i, 1), (p_j, 1))
                    base = 0.0
                for col, closed in gates:
                    if closed == 1:
                        row[col] += m_row
                        base += m_row
                    else:
                        row[col] -= m_row
                rows.append(row)
                rhs.append(base)
                row_names.append(f"joint/{label}{tag}")
                row_kinds.append("collision")
                row_gates.append(gates)
                row_gate_m.append(m_row)

    c = np.zeros(n_total)
    lb = np.zeros(n_total)
    ub = np.ones(n_total)
    integral = np.zeros(n_total, dtype=bool)
    for vid in problem.vehicle_ids:
        off = offsets[vid]
        inst = blocks[vid]
        c[off : off + inst.n_vars] = inst.c
        lb[off : off + inst.n_vars] = inst.lb
        ub[off : off + inst.n_vars] = inst.ub
        integral[off : off + inst.n_vars] = inst.integral
    for col in delta.values():
        integral[col] = True

    instance = MilpInstance(
        c=c,
        A=np.vstack(rows) if rows else np.zeros((0, n_total)),
        b=np.asarray(rhs),
        lb=lb,
        ub=ub,
        integral=integral,
        big_m=max(b.big_m for b in blocks.values()),
        var_names=names,
        row_names=row_names,
        row_kinds=row_kinds,
        row_gates=row_gates,
        row_gate_m=np.asarray(row_gate_m),
        index=VariableIndex(),
    )
    return JointModel(instance=instance, offsets=offsets, blocks=blocks, delta=delta)


def joint_incumbent(
    problem: GameProblem, state: GameState, model: JointModel
) -> np.ndarray | None:
    """Embed a collision-free game state as a joint feasible point."""
    x = np.zeros(model.instance.n_vars)
    for vid in problem.vehicle_ids:
        dec = state.decisions[vid]
        block = model.blocks[vid]
        xv = decision_to_vector(dec, block)
        off = model.offsets[vid]
        x[off : off + block.n_vars] = xv
    graph = problem.graph
    for (i, j, e_i), col in model.delta.items():
        dec_i = state.decisions[i]
        dec_j = state.decisions[j]
        choice = dec_i.delta.get((j, e_i))
        if choice is None:
            # pick the branch the current timings satisfy
            choice = 1
            for pair in problem.pairs_by_vehicle[i]:
                if pair.e_i != e_i or pair.j != j:
                    continue
                if not (dec_i.uses_edge(e_i) and dec_j.uses_edge(pair.e_j)):
                    continue
                t1, t2 = partner_window_times(pair, dec_j, graph)
                ed = graph.edge(e_i)

                def at(s: float) -> float:
                    f = s / ed.length
                    return (1 - f) * dec_i.t[ed.tail] + f * dec_i.t[ed.head]

                if pair.angle_class == "acute":
                    ok_ahead = (
                        at(pair.s_hat_1 + pair.d_safe) <= t1 + 1e-9
                        and at(pair.s_hat_2 + pair.d_safe) <= t2 + 1e-9
                    )
                else:
                    ok_ahead = at(pair.s_hat_2 + pair.d_safe) <= t1 + 1e-9
                if not ok_ahead:
                    choice = 0
                    break
        x[col] = float(choice)
    resid = model.instance.A @ x - model.instance.b
    if resid.max(initial=0.0) > 1e-6:
        return None
    return x


@dataclass
class ComparisonResult:
    joint: SolveResult
    joint_cost: float
    mipg_cost: float
    mipg_wall: float
    joint_wall: float
    seeded: bool


def run_comparison(
    problem: GameProblem,
    mipg_state: GameState,
    mipg_wall: float,
    node_limit: int = 2_000_000,
) -> ComparisonResult:
    """Solve the joint model for the same perturbed setup the iteration ran
    on, seeding the search with the equilibrium when it embeds cleanly."""
    from cavgame.game import cost_of

    mipg_cost = sum(
        cost_of(problem, vid, dec) for vid, dec in mipg_state.decisions.items()
    )
    model = assemble_joint(problem)
    seed = joint_incumbent(problem, mipg_state, model)
    t0 = time.perf_counter()
    res = solve_milp(model.instance, node_limit=node_limit, incumbent=seed)
    joint_wall = time.perf_counter() - t0
    return ComparisonResult(
        joint=res,
        joint_cost=res.objective,
        mipg_cost=mipg_cost,
        mipg_wall=mipg_wall,
        joint_wall=joint_wall,
        seeded=seed is not None,
    )
