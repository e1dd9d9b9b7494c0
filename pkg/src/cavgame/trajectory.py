"""Bicycle-model trajectory generation from a committed plan.

The plan's vertex sequence and passage times become a piecewise-linear
reference on a fixed time grid; a single-shooting optimal control problem
tracks it under rear-axle kinematics and input box bounds.  A two-disc
audit then verifies pairwise clearances of the resulting trajectories.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize

from cavgame.milp_model import Decision, Limits
from cavgame.waypoint_graph import VehicleSpec, WayPointGraph


class KinematicLimitError(ValueError):
    """Turn rate demanded more lateral travel than the wheelbase allows."""


class DegenerateSegmentError(ValueError):
    """Reference segment with zero duration."""


@dataclass(frozen=True)
class OcpParams:
    """Tracking weights: state deviation (PSD) and input effort (PD)."""

    q_diag: tuple[float, float, float, float] = (20.0, 20.0, 0.0, 0.0)
    r_diag: tuple[float, float] = (20.0, 0.1)

    def validate(self) -> None:
        if min(self.q_diag) < 0:
            raise ValueError("state weights must be positive semi-definite")
        if min(self.r_diag) <= 0:
            raise ValueError("input weights must be positive definite")


@dataclass
class Trajectory:
    """States on the tau grid (rear-axle frame) and the inputs between them."""

    vehicle_id: int
    states: np.ndarray  # (T+1, 4): x, y, heading, velocity
    inputs: np.ndarray  # (T, 2): steering, acceleration
    tau_s: float
    cost: float = 0.0
    status: str = "optimal"  # "optimal" | "baseline"

    @property
    def horizon(self) -> int:
        return self.inputs.shape[0]


def f_r(delta: float, v: float, tau_s: float, wheelbase: float) -> float:
    """Arc advance of the rear axle over one step at constant steering."""
    q = tau_s * v * math.sin(delta)
    rad = wheelbase**2 - q**2
    if rad < 0:
        raise KinematicLimitError(
            f"steering {delta:.3f} at speed {v:.2f} exceeds the wheelbase limit"
        )
    return wheelbase + tau_s * v * math.cos(delta) - math.sqrt(rad)


def bicycle_step(
    state: np.ndarray, control: np.ndarray, tau_s: float, wheelbase: float
) -> np.ndarray:
    """One explicit step of the discrete rear-axle bicycle recursion."""
    x, y, heading, v = state
    delta, acc = control
    s = math.sin(delta)
    arg = tau_s * v * s / wheelbase
    if abs(arg) > 1.0:
        raise KinematicLimitError("heading update outside the arcsin domain")
    adv = f_r(delta, v, tau_s, wheelbase)
    return np.array(
        [
            x + adv * math.cos(heading),
            y + adv * math.sin(heading),
            heading + math.asin(arg),
            v + tau_s * acc,
        ]
    )


def rollout(
    x0: np.ndarray, inputs: np.ndarray, tau_s: float, wheelbase: float
) -> np.ndarray:
    states = np.empty((inputs.shape[0] + 1, 4))
    states[0] = x0
    for t, u in enumerate(inputs):
        states[t + 1] = bicycle_step(states[t], u, tau_s, wheelbase)
    return states


def reference_from_decision(
    decision: Decision,
    graph: WayPointGraph,
    rear_axle_offset: float,
    tau_s: float,
) -> np.ndarray:
    """Reference states on the tau grid from the plan's vertex times.

    Centers interpolate linearly in time between consecutive path
    vertices, then shift back along the segment to the rear axle.
    Heading is the segment direction; velocity is the segment's average.
    """
    verts = decision.path_vertices
    times = np.array([decision.t[v] for v in verts])
    points = np.array([graph.position(v) for v in verts], dtype=float)
    durations = np.diff(times)
    if np.any(durations <= 0):
        raise DegenerateSegmentError("non-increasing passage times along the path")
    horizon = int(math.floor(times[-1] / tau_s))
    refs = np.empty((horizon + 1, 4))
    seg_dirs = points[1:] - points[:-1]
    seg_len = np.linalg.norm(seg_dirs, axis=1)
    if np.any(seg_len <= 0):
        raise DegenerateSegmentError("zero-length path segment")
    units = seg_dirs / seg_len[:, None]
    for tau in range(horizon + 1):
        t = tau * tau_s
        k = int(np.searchsorted(times, t, side="right")) - 1
        k = min(max(k, 0), len(durations) - 1)
        lam = (t - times[k]) / durations[k]
        center = (1.0 - lam) * points[k] + lam * points[k + 1]
        rear = center - rear_axle_offset * units[k]
        refs[tau, 0:2] = rear
        refs[tau, 2] = math.atan2(units[k][1], units[k][0])
        refs[tau, 3] = seg_len[k] / durations[k]
    return refs


def _ocp_cost_grad(
    u_flat: np.ndarray,
    x0: np.ndarray,
    refs: np.ndarray,
    q: np.ndarray,
    r: np.ndarray,
    tau_s: float,
    b: float,
) -> tuple[float, np.ndarray]:
    """Tracking cost and its input gradient by reverse accumulation."""
    T = refs.shape[0] - 1
    u = u_flat.reshape(T, 2)
    try:
        xs = rollout(x0, u, tau_s, b)
    except KinematicLimitError:
        return np.inf, np.zeros_like(u_flat)
    err = xs - refs
    cost = float(np.einsum("ti,i,ti->", err, q, err) + np.einsum("ti,i,ti->", u, r, u))

    lam = 2.0 * q * err[T]
    grad = np.empty_like(u)
    for t in range(T - 1, -1, -1):
        x_, y_, th, v = xs[t]
        delta, acc = u[t]
        sd, cd = math.sin(delta), math.cos(delta)
        qv = tau_s * v * sd
        root = math.sqrt(b * b - qv * qv)
        adv = b + tau_s * v * cd - root
        dadv_dv = tau_s * cd + qv * tau_s * sd / root
        dadv_dd = -tau_s * v * sd + qv * tau_s * v * cd / root
        dth_dv = tau_s * sd / root
        dth_dd = tau_s * v * cd / root
        ct, st = math.cos(th), math.sin(th)
        A = np.array(
            [
                [1.0, 0.0, -adv * st, dadv_dv * ct],
                [0.0, 1.0, adv * ct, dadv_dv * st],
                [0.0, 0.0, 1.0, dth_dv],
                [0.0, 0.0, 0.0, 1.0],
            ]
        )
        B = np.array(
            [
                [dadv_dd * ct, 0.0],
                [dadv_dd * st, 0.0],
                [dth_dd, 0.0],
                [0.0, tau_s],
            ]
        )
        grad[t] = 2.0 * r * u[t] + B.T @ lam
        lam = 2.0 * q * err[t] + A.T @ lam
    return cost, grad.ravel()


def solve_ocp(
    refs: np.ndarray,
    x0: np.ndarray,
    params: OcpParams,
    limits: Limits,
    tau_s: float,
    wheelbase: float,
    vehicle_id: int = 0,
    max_iter: int = 200,
) -> Trajectory:
    """Single-shooting tracking solve over the input sequence.

    Starts from zero inputs and never returns anything worse than that
    baseline; if the local method fails to improve, the baseline rollout
    is returned with a warning status.
    """
    params.validate()
    if refs.shape[0] < 1:
        raise ValueError("empty reference")
    T = refs.shape[0] - 1
    q = np.asarray(params.q_diag, dtype=float)
    r = np.asarray(params.r_diag, dtype=float)
    u0 = np.zeros((T, 2))
    baseline_states = rollout(x0, u0, tau_s, wheelbase)
    err0 = baseline_states - refs
    baseline_cost = float(np.einsum("ti,i,ti->", err0, q, err0))
    if T == 0:
        return Trajectory(vehicle_id, baseline_states, u0, tau_s, baseline_cost)

    bounds = [(limits.delta_min, limits.delta_max), (limits.a_min, limits.a_max)] * T
    res = minimize(
        _ocp_cost_grad,
        u0.ravel(),
        args=(x0, refs, q, r, tau_s, wheelbase),
        jac=True,
        bounds=bounds,
        method="L-BFGS-B",
        options={"maxiter": max_iter, "ftol": 1e-10, "gtol": 1e-8},
    )
    cost, _ = _ocp_cost_grad(res.x, x0, refs, q, r, tau_s, wheelbase)
    if not np.isfinite(cost) or cost > baseline_cost:
        return Trajectory(
            vehicle_id, baseline_states, u0, tau_s, baseline_cost, status="baseline"
        )
    u = res.x.reshape(T, 2)
    return Trajectory(vehicle_id, rollout(x0, u, tau_s, wheelbase), u, tau_s, cost)


def trajectory_for_vehicle(
    decision: Decision,
    veh: VehicleSpec,
    graph: WayPointGraph,
    params: OcpParams,
    limits: Limits,
    tau_s: float,
) -> Trajectory:
    """Reference extraction plus OCP solve for one vehicle."""
    refs = reference_from_decision(decision, graph, veh.center_to_rear_axle, tau_s)
    ch, sh = math.cos(veh.heading), math.sin(veh.heading)
    x0 = np.array(
        [
            veh.start_xy[0] - veh.center_to_rear_axle * ch,
            veh.start_xy[1] - veh.center_to_rear_axle * sh,
            veh.heading,
            veh.v_ini,
        ]
    )
    traj = solve_ocp(refs, x0, params, limits, tau_s, veh.wheelbase, vehicle_id=veh.id)
    return traj


def trim_to_common_horizon(trajectories: list[Trajectory]) -> list[Trajectory]:
    """Truncate all trajectories to the shortest horizon, grids aligned."""
    if not trajectories:
        raise ValueError("need at least one trajectory")
    horizon = min(t.horizon for t in trajectories)
    out = []
    for t in trajectories:
        out.append(
            Trajectory(
                vehicle_id=t.vehicle_id,
                states=t.states[: horizon + 1].copy(),
                inputs=t.inputs[:horizon].copy(),
                tau_s=t.tau_s,
                cost=t.cost,
                status=t.status,
            )
        )
    return out


def _disc_centers(states: np.ndarray, veh: VehicleSpec) -> np.ndarray:
    """Two audit discs per state, offset from the footprint center."""
    heading = states[:, 2]
    u = np.column_stack([np.cos(heading), np.sin(heading)])
    center = states[:, 0:2] + veh.center_to_rear_axle * u
    off = (veh.length - veh.width) / 4.0
    return np.stack([center - off * u, center + off * u], axis=1)


def collision_audit(
    trajectories: list[Trajectory],
    vehicles: dict[int, VehicleSpec],
    d_safe: float,
) -> tuple[np.ndarray, list[tuple[int, tuple[int, int], float]]]:
    """Per-step minimum pairwise clearance and the violation list.

    Clearance is the smallest distance between the two vehicles' audit
    disc centers minus ``d_safe``; negative values are violations.
    """
    if len(trajectories) < 2:
        steps = trajectories[0].horizon + 1 if trajectories else 0
        return np.full(steps, np.inf), []
    horizon = min(t.horizon for t in trajectories)
    discs = {
        t.vehicle_id: _disc_centers(t.states[: horizon + 1], vehicles[t.vehicle_id])
        for t in trajectories
    }
    ids = sorted(discs)
    clearance = np.full(horizon + 1, np.inf)
    violations: list[tuple[int, tuple[int, int], float]] = []
    for a_pos, va in enumerate(ids):
        for vb in ids[a_pos + 1 :]:
            da, db = discs[va], discs[vb]
            # all four disc-center pairings per step
            diff = da[:, :, None, :] - db[:, None, :, :]
            dist = np.linalg.norm(diff, axis=-1).min(axis=(1, 2))
            margin = dist - d_safe
            clearance = np.minimum(clearance, margin)
            for tau in np.flatnonzero(margin < 0):
                violations.append((int(tau), (va, vb), float(margin[tau])))
    return clearance, violations
