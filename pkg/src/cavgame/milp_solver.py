"""Branch-and-bound MILP solver over a bounded-variable LP relaxation.

Best-bound node selection with FIFO tie-break, branching on the most
fractional integer variable with lowest-index tie-break, floor/ceil bound
children.  The LP relaxation is delegated to HiGHS via scipy.
"""

from __future__ import annotations

import heapq
import time
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.optimize import linprog

from cavgame.milp_model import MilpInstance

LP_TOL = 1e-7


class LpError(RuntimeError):
    """LP relaxation failed for a reason other than infeasibility."""


@dataclass
class LpResult:
    status: str  # "optimal" | "infeasible"
    x: np.ndarray | None
    objective: float


@dataclass
class SolveResult:
    status: str  # "optimal" | "feasible-gap" | "infeasible" | "node-limit"
    x: np.ndarray | None
    objective: float
    bound: float
    gap: float
    nodes_explored: int
    wall_time: float


def solve_lp(
    c: np.ndarray,
    A: np.ndarray | sp.csr_matrix,
    b: np.ndarray,
    lb: np.ndarray,
    ub: np.ndarray,
) -> LpResult:
    """min c.x s.t. A x <= b, lb <= x <= ub (all bounds finite)."""
    if not (np.all(np.isfinite(lb)) and np.all(np.isfinite(ub))):
        raise LpError("variable bounds must be finite")
    nrows = A.shape[0] if A.ndim == 2 else 0
    res = linprog(
        c,
        A_ub=A if nrows else None,
        b_ub=b if nrows else None,
        bounds=np.column_stack([lb, ub]),
        method="highs",
    )
    if res.status == 0:
        return LpResult("optimal", np.asarray(res.x), float(res.fun))
    if res.status == 2:
        return LpResult("infeasible", None, np.inf)
    raise LpError(f"LP solve failed with status {res.status}: {res.message}")


def _fractionality(x: np.ndarray, mask: np.ndarray, int_tol: float) -> np.ndarray:
    frac = np.abs(x - np.round(x))
    frac[~mask] = 0.0
    frac[frac <= int_tol] = 0.0
    return frac


def solve_milp(
    instance: MilpInstance,
    gap_tol: float = 1e-6,
    int_tol: float = 1e-6,
    node_limit: int = 1_000_000,
    incumbent: np.ndarray | None = None,
    node_log: list | None = None,
    dive=None,
    abs_gap: float = 0.0,
) -> SolveResult:
    """Solve the instance to proven optimality or within the gap.

    ``incumbent`` optionally seeds the search with a known feasible point
    (it is validated before use).  ``dive`` may map the root relaxation
    vector to a {column: value} fixing of some binaries; the residual
    problem is then solved with a small node cap to produce an early
    incumbent.  ``node_log`` collects (node, bound, incumbent objective)
    tuples when provided.
    """
    t0 = time.perf_counter()
    c, b = instance.c, instance.b
    A = sp.csr_matrix(instance.A) if instance.A.size else instance.A
    mask = instance.integral

    inc_x: np.ndarray | None = None
    inc_obj = np.inf
    if incumbent is not None:
        xi = np.asarray(incumbent, dtype=float)
        ok = (
            xi.shape == (instance.n_vars,)
            and np.all(A @ xi <= b + 1e-6)
            and np.all(xi >= instance.lb - 1e-9)
            and np.all(xi <= instance.ub + 1e-9)
            and np.all(np.abs(xi[mask] - np.round(xi[mask])) <= int_tol)
        )
        if ok:
            inc_x = xi
            inc_obj = float(c @ xi)

    def finish(status: str, bound: float, nodes: int) -> SolveResult:
        obj = inc_obj if inc_x is not None else np.inf
        if status == "optimal":
            bound = obj
        gap = abs(obj - bound) / max(1.0, abs(obj)) if inc_x is not None else np.inf
        return SolveResult(
            status=status,
            x=inc_x,
            objective=obj,
            bound=bound,
            gap=gap,
            nodes_explored=nodes,
            wall_time=time.perf_counter() - t0,
        )

    root = solve_lp(c, A, b, instance.lb, instance.ub)
    nodes = 1
    if root.status == "infeasible":
        return finish("optimal" if inc_x is not None else "infeasible", -np.inf, nodes)

    heap: list[tuple[float, int, np.ndarray, np.ndarray, np.ndarray]] = []
    counter = 0
    frac = _fractionality(root.x, mask, int_tol)
    if not frac.any():
        inc_x, inc_obj = root.x, root.objective
        return finish("optimal", root.objective, nodes)

    if dive is not None:
        fixing = dive(root.x)
        if fixing:
            lo_d, hi_d = instance.lb.copy(), instance.ub.copy()
            for col, val in fixing.items():
                lo_d[col] = hi_d[col] = val
            sub = _with_bounds(instance, lo_d, hi_d)
            dived = solve_milp(
                sub, gap_tol=gap_tol, int_tol=int_tol, node_limit=500, abs_gap=abs_gap
            )
            nodes += dived.nodes_explored
            if dived.x is not None and dived.objective < inc_obj:
                inc_x, inc_obj = dived.x, dived.objective

    heapq.heappush(heap, (root.objective, counter, root.x, instance.lb.copy(), instance.ub.copy()))

    while heap:
        bound, _, x, lo, hi = heapq.heappop(heap)
        if node_log is not None:
            node_log.append((nodes, bound, inc_obj))
        if inc_x is not None and bound >= inc_obj - max(
            gap_tol * max(1.0, abs(inc_obj)), abs_gap
        ):
            return finish("optimal", bound, nodes)
        if nodes >= node_limit:
            return finish("feasible-gap" if inc_x is not None else "node-limit", bound, nodes)

        frac = _fractionality(x, mask, int_tol)
        j = int(np.argmax(frac))  # argmax takes the lowest index on ties
        base = np.floor(x[j])
        for child_lo, child_hi in (
            (lo, np.minimum(hi, _with(hi, j, base))),
            (np.maximum(lo, _with(lo, j, base + 1.0)), hi),
        ):
            if child_lo[j] > child_hi[j] + 1e-12:
                continue
            res = solve_lp(c, A, b, child_lo, child_hi)
            nodes += 1
            if res.status == "infeasible":
                continue
            child_bound = max(res.objective, bound)  # bounds never regress
            if inc_x is not None and child_bound >= inc_obj - max(
                gap_tol * max(1.0, abs(inc_obj)), abs_gap
            ):
                continue
            if not _fractionality(res.x, mask, int_tol).any():
                if res.objective < inc_obj:
                    inc_x, inc_obj = res.x, res.objective
                continue
            counter += 1
            heapq.heappush(heap, (child_bound, counter, res.x, child_lo.copy(), child_hi.copy()))

    return finish("optimal" if inc_x is not None else "infeasible", inc_obj, nodes)


def _with(arr: np.ndarray, j: int, val: float) -> np.ndarray:
    out = arr.copy()
    out[j] = val
    return out


def _with_bounds(instance: MilpInstance, lb: np.ndarray, ub: np.ndarray) -> MilpInstance:
    return MilpInstance(
        c=instance.c,
        A=instance.A,
        b=instance.b,
        lb=lb,
        ub=ub,
        integral=instance.integral,
        big_m=instance.big_m,
        var_names=instance.var_names,
        row_names=instance.row_names,
        row_kinds=instance.row_kinds,
        row_gates=instance.row_gates,
        row_gate_m=instance.row_gate_m,
        index=instance.index,
    )


def solve_instance(instance: MilpInstance, **kw) -> SolveResult:
    """Convenience wrapper keeping call sites free of array plumbing."""
    return solve_milp(instance, **kw)
