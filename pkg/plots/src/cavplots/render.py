"""Static figures from run artifacts: scene snapshots, input profiles,
and cost-convergence curves."""

from __future__ import annotations

import math
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np
from matplotlib.patches import Polygon

from cavplots.io import RunArtifacts, load_iterations, load_run

VEHICLE_COLORS = ["#d62728", "#1f77b4", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf"]


def _color(vid: int) -> str:
    return VEHICLE_COLORS[(vid - 1) % len(VEHICLE_COLORS)]


def _footprint(x: float, y: float, theta: float, info) -> np.ndarray:
    # trajectory states are rear-axle poses; shift to the footprint center
    cx = x + info.rear_axle_offset * math.cos(theta)
    cy = y + info.rear_axle_offset * math.sin(theta)
    u = np.array([math.cos(theta), math.sin(theta)])
    n = np.array([-u[1], u[0]])
    hl, hw = info.length / 2.0, info.width / 2.0
    c = np.array([cx, cy])
    return np.array([c + hl * u + hw * n, c + hl * u - hw * n,
                     c - hl * u - hw * n, c - hl * u + hw * n])


def _draw_graph(ax, graph: dict) -> None:
    pos = {v["id"]: (v["x"], v["y"]) for v in graph["vertices"]}
    for e in graph["edges"]:
        (x1, y1), (x2, y2) = pos[e["tail"]], pos[e["head"]]
        ax.plot([x1, x2], [y1, y2], color="0.82", lw=0.8, zorder=1)
    xs = [p[0] for p in pos.values()]
    ys = [p[1] for p in pos.values()]
    ax.scatter(xs, ys, s=6, color="0.6", zorder=2)


def _state_at(traj: np.ndarray, t: float) -> np.ndarray | None:
    times = traj[:, 1]
    if t < times[0] - 1e-9 or t > times[-1] + 1e-9:
        return None
    k = int(np.searchsorted(times, t, side="right")) - 1
    k = min(max(k, 0), traj.shape[0] - 2)
    lam = (t - times[k]) / max(times[k + 1] - times[k], 1e-12)
    return (1 - lam) * traj[k] + lam * traj[k + 1]


def render_snapshots(
    run_dir: str | Path, times: list[float], out_dir: str | Path | None = None
) -> list[Path]:
    """One scene image per requested time: road graph, footprints, trails."""
    run = load_run(run_dir)
    out_dir = Path(out_dir) if out_dir else Path(run_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for t in times:
        fig, ax = plt.subplots(figsize=(8, 5))
        _draw_graph(ax, run.graph)
        for vid, traj in sorted(run.trajectories.items()):
            color = _color(vid)
            past = traj[traj[:, 1] <= t + 1e-9]
            if past.shape[0]:
                ax.plot(past[:, 2], past[:, 3], color=color, lw=1.4,
                        alpha=0.7, zorder=3)
            state = _state_at(traj, t)
            if state is not None:
                corners = _footprint(state[2], state[3], state[4], run.vehicles[vid])
                ax.add_patch(Polygon(corners, closed=True, facecolor=color,
                                     edgecolor="black", lw=0.8, alpha=0.9, zorder=4))
                ax.annotate(str(vid), (state[2], state[3]), color="white",
                            ha="center", va="center", fontsize=8, zorder=5)
        ax.set_aspect("equal")
        ax.set_title(f"{run.summary['scenario']}  t = {t:.1f} s")
        ax.set_xlabel("x [m]")
        ax.set_ylabel("y [m]")
        path = out_dir / f"snapshot_t{t:0.1f}.png"
        fig.savefig(path, dpi=130, bbox_inches="tight")
        plt.close(fig)
        written.append(path)
    return written


def render_profiles(run_dir: str | Path, out_dir: str | Path | None = None) -> Path:
    """Velocity, acceleration, and steering time series, one panel each."""
    run = load_run(run_dir)
    out_dir = Path(out_dir) if out_dir else Path(run_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    fig, axes = plt.subplots(3, 1, figsize=(8, 8), sharex=True)
    for vid, traj in sorted(run.trajectories.items()):
        color = _color(vid)
        label = f"vehicle {vid}"
        axes[0].plot(traj[:, 1], traj[:, 5], color=color, label=label)
        inputs = traj[~np.isnan(traj[:, 7])]
        axes[1].plot(inputs[:, 1], inputs[:, 7], color=color)
        axes[2].plot(inputs[:, 1], inputs[:, 6], color=color)
    axes[0].set_ylabel("velocity [m/s]")
    axes[1].set_ylabel("acceleration [m/s$^2$]")
    axes[2].set_ylabel("steering [rad]")
    axes[2].set_xlabel("t [s]")
    axes[0].legend(loc="upper right", fontsize=8)
    fig.suptitle(f"{run.summary['scenario']}: control profiles")
    path = out_dir / "profiles.png"
    fig.savefig(path, dpi=130, bbox_inches="tight")
    plt.close(fig)
    return path


def render_convergence(run_dir: str | Path, out_dir: str | Path | None = None) -> Path:
    """Average cost after each solver step across the sweeps."""
    records = load_iterations(run_dir)
    run = load_run(run_dir)
    n = len(run.trajectories)
    out_dir = Path(out_dir) if out_dir else Path(run_dir)
    potentials = [float(r["potential"]) / max(n, 1) for r in records]
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(range(1, len(potentials) + 1), potentials, marker="o", ms=3)
    ax.set_xlabel("solver step")
    ax.set_ylabel("average cost")
    ax.set_title(f"{run.summary['scenario']}: convergence")
    path = out_dir / "convergence.png"
    fig.savefig(path, dpi=130, bbox_inches="tight")
    plt.close(fig)
    return path
