"""Run artifact files: every output the batch driver produces.

All writers are atomic (temp file in the target directory, then rename)
so partially-written artifacts never appear under their final names.
"""

from __future__ import annotations

import csv
import io
import json
import os
import tempfile
from pathlib import Path

import numpy as np

from cavgame.conflict_geometry import CrucialPair
from cavgame.game import GameState, IterationRecord
from cavgame.milp_model import Decision
from cavgame.trajectory import Trajectory
from cavgame.waypoint_graph import WayPointGraph


def atomic_write_text(path: Path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_json(path: Path, payload) -> None:
    atomic_write_text(path, json.dumps(payload, indent=1, sort_keys=True) + "\n")


def write_graph(path: Path, graph: WayPointGraph) -> None:
    atomic_write_text(path, graph.to_json())


def write_pairs(path: Path, pairs: list[CrucialPair]) -> None:
    write_json(path, [p.to_json_dict() for p in pairs])


def _csv_text(header: list[str], rows) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf)
    writer.writerow(header)
    writer.writerows(rows)
    return buf.getvalue()


def write_iteration_log(path: Path, log: list[IterationRecord]) -> None:
    rows = [
        (
            r.sweep,
            r.vehicle,
            f"{r.j_before:.9f}",
            f"{r.j_after:.9f}",
            f"{r.delta:.9f}",
            int(r.accepted),
            int(r.feasible),
            int(r.repair),
            f"{r.potential:.9f}",
            r.collisions,
        )
        for r in log
    ]
    atomic_write_text(
        path,
        _csv_text(
            [
                "sweep",
                "vehicle",
                "j_before",
                "j_after",
                "delta",
                "accepted",
                "feasible",
                "repair",
                "potential",
                "collisions",
            ],
            rows,
        ),
    )


def decision_payload(dec: Decision) -> dict:
    return {
        "vehicle": dec.vehicle_id,
        "path_edges": list(dec.path_edges),
        "path_vertices": list(dec.path_vertices),
        "times": {str(k): v for k, v in sorted(dec.t.items())},
        "velocity_slack_over": {str(k): v for k, v in sorted(dec.s_over.items())},
        "velocity_slack_under": {str(k): v for k, v in sorted(dec.s_under.items())},
        "band": {str(k): v for k, v in sorted(dec.region.items())},
    }


def write_decisions(path: Path, state: GameState) -> None:
    write_json(
        path, [decision_payload(state.decisions[v]) for v in sorted(state.decisions)]
    )


def write_trajectory(path: Path, traj: Trajectory) -> None:
    rows = []
    for tau in range(traj.states.shape[0]):
        x, y, th, v = traj.states[tau]
        if tau < traj.horizon:
            d, a = traj.inputs[tau]
        else:
            d, a = float("nan"), float("nan")
        rows.append(
            (
                tau,
                f"{tau * traj.tau_s:.4f}",
                f"{x:.6f}",
                f"{y:.6f}",
                f"{th:.6f}",
                f"{v:.6f}",
                f"{d:.6f}",
                f"{a:.6f}",
            )
        )
    atomic_write_text(
        path, _csv_text(["tau", "t", "p_x", "p_y", "theta", "v", "delta", "a"], rows)
    )


def write_audit(
    path: Path,
    clearance: np.ndarray,
    violations: list[tuple[int, tuple[int, int], float]],
    tau_s: float,
) -> None:
    vmap: dict[int, list] = {}
    for tau, pair, margin in violations:
        vmap.setdefault(tau, []).append((pair, margin))
    rows = []
    for tau, margin in enumerate(clearance):
        pairs_here = vmap.get(tau, [])
        rows.append(
            (
                tau,
                f"{tau * tau_s:.4f}",
                "inf" if np.isinf(margin) else f"{margin:.6f}",
                ";".join(f"{a}-{b}:{m:.4f}" for (a, b), m in pairs_here),
            )
        )
    atomic_write_text(
        path, _csv_text(["tau", "t", "min_clearance", "violations"], rows)
    )
