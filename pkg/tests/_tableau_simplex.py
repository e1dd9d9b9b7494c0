"""Textbook two-phase dense tableau simplex, used only as a test oracle.

Solves min c.x s.t. A x <= b, lb <= x <= ub by shifting to nonnegative
variables, adding explicit upper-bound rows and slack columns, and running
Bland's rule (slow, cycle-free).  Independent of the production LP path.
"""

import numpy as np

TOL = 1e-9


def tableau_lp(c, A, b, lb, ub):
    c = np.asarray(c, float)
    A = np.asarray(A, float).reshape(-1, c.size)
    b = np.asarray(b, float)
    lb = np.asarray(lb, float)
    ub = np.asarray(ub, float)

    # shift x = lb + z with 0 <= z <= ub - lb, fold bounds into rows
    n = c.size
    G = np.vstack([A, np.eye(n)])
    h = np.concatenate([b - A @ lb, ub - lb])
    m = G.shape[0]

    # equality form with slacks; flip rows so rhs >= 0
    flip = h < 0
    G = np.where(flip[:, None], -G, G)
    S = np.where(flip, -1.0, 1.0)
    h = np.abs(h)
    Aeq = np.hstack([G, np.diag(S)])
    ncol = n + m

    # phase I: artificial variables for rows whose slack entered at -1
    need_art = np.flatnonzero(S < 0)
    n_art = need_art.size
    T = np.hstack([Aeq, np.zeros((m, n_art)), h[:, None]])
    basis = np.empty(m, dtype=int)
    for i in range(m):
        if S[i] > 0:
            basis[i] = n + i
    for k, i in enumerate(need_art):
        T[i, ncol + k] = 1.0
        basis[i] = ncol + k

    def run(T, basis, cost):
        z = np.zeros(T.shape[1] - 1)
        z[: cost.size] = cost
        obj = z.copy()
        for i, bi in enumerate(basis):
            if obj[bi] != 0.0:
                obj -= obj[bi] * T[i, :-1]
        red = obj
        val = -sum(z[bi] * T[i, -1] for i, bi in enumerate(basis))
        while True:
            enter = -1
            for j in range(T.shape[1] - 1):
                if red[j] < -TOL:
                    enter = j  # Bland: first improving column
                    break
            if enter < 0:
                return basis
            ratios = [
                (T[i, -1] / T[i, enter], basis[i], i)
                for i in range(m)
                if T[i, enter] > TOL
            ]
            if not ratios:
                raise RuntimeError("unbounded")
            _, _, leave = min(ratios, key=lambda r: (r[0], r[1]))
            piv = T[leave, enter]
            T[leave] /= piv
            for i in range(m):
                if i != leave:
                    T[i] -= T[i, enter] * T[leave]
            red = red - red[enter] * T[leave, :-1]
            basis[leave] = enter

    if n_art:
        cost1 = np.zeros(ncol + n_art)
        cost1[ncol:] = 1.0
        basis = run(T, basis, cost1)
        x_art = np.array([T[i, -1] if basis[i] >= ncol else 0.0 for i in range(m)])
        if x_art.sum() > 1e-7:
            return None, np.inf  # infeasible
        # pivot any residual artificial out of the basis
        for i in range(m):
            if basis[i] >= ncol:
                row = T[i, :ncol]
                j = next((jj for jj in range(ncol) if abs(row[jj]) > TOL), None)
                if j is None:
                    continue
                piv = T[i, j]
                T[i] /= piv
                for r in range(m):
                    if r != i:
                        T[r] -= T[r, j] * T[i]
                basis[i] = j
        T = np.hstack([T[:, :ncol], T[:, -1:]])

    cost2 = np.zeros(ncol)
    cost2[:n] = c
    basis = run(T, basis, cost2)
    xz = np.zeros(ncol)
    for i, bi in enumerate(basis):
        if bi < ncol:
            xz[bi] = T[i, -1]
    x = lb + xz[:n]
    return x, float(c @ x)


def brute_force_milp(c, A, b, lb, ub, mask):
    """Enumerate all binary patterns of masked vars, LP for the rest."""
    cols = np.flatnonzero(mask)
    best_x, best_obj = None, np.inf
    for bits in range(1 << cols.size):
        lo, hi = lb.copy(), ub.copy()
        for k, j in enumerate(cols):
            v = float((bits >> k) & 1)
            lo[j] = hi[j] = v
        x, obj = tableau_lp(c, A, b, lo, hi)
        if x is not None and obj < best_obj - 1e-12:
            best_x, best_obj = x, obj
    return best_x, best_obj
