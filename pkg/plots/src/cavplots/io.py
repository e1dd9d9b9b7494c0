"""Readers for the batch driver's run artifacts.

This package consumes only the documented CSV/JSON files of a completed
run directory; it never imports the solver package.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np


class MissingArtifactError(FileNotFoundError):
    """A required artifact file is absent from the run directory."""


def _require(path: Path) -> Path:
    if not path.is_file():
        raise MissingArtifactError(f"expected artifact not found: {path}")
    return path


@dataclass
class VehicleInfo:
    id: int
    length: float
    width: float
    rear_axle_offset: float


@dataclass
class RunArtifacts:
    run_dir: Path
    summary: dict
    graph: dict
    vehicles: dict[int, VehicleInfo]
    trajectories: dict[int, np.ndarray]  # columns: tau, t, x, y, theta, v, delta, a
    tau_s: float


def load_run(run_dir: str | Path) -> RunArtifacts:
    run_dir = Path(run_dir)
    summary = json.loads(_require(run_dir / "summary.json").read_text())
    files = summary["artifacts"]
    graph = json.loads(_require(run_dir / files["graph"]).read_text())
    scenario = json.loads(_require(run_dir / files["scenario"]).read_text())

    defaults = scenario.get("defaults", {})
    vehicles: dict[int, VehicleInfo] = {}
    for v in scenario["vehicles"]:
        vehicles[v["id"]] = VehicleInfo(
            id=v["id"],
            length=v.get("length", defaults.get("length", 3.526)),
            width=v.get("width", defaults.get("width", 1.673)),
            rear_axle_offset=v.get(
                "center_to_rear_axle", defaults.get("center_to_rear_axle", 1.2025)
            ),
        )

    traj_files = files.get("trajectories")
    if not traj_files:
        raise MissingArtifactError(
            f"run at {run_dir} has no trajectory artifacts (did it converge?)"
        )
    trajectories: dict[int, np.ndarray] = {}
    for vid, rel in traj_files.items():
        rows = []
        with open(_require(run_dir / rel)) as fh:
            for rec in csv.DictReader(fh):
                rows.append(
                    [
                        float(rec["tau"]),
                        float(rec["t"]),
                        float(rec["p_x"]),
                        float(rec["p_y"]),
                        float(rec["theta"]),
                        float(rec["v"]),
                        float(rec["delta"]),
                        float(rec["a"]),
                    ]
                )
        trajectories[int(vid)] = np.asarray(rows)
    any_traj = next(iter(trajectories.values()))
    tau_s = float(any_traj[1, 1] - any_traj[0, 1]) if any_traj.shape[0] > 1 else 0.1
    return RunArtifacts(
        run_dir=run_dir,
        summary=summary,
        graph=graph,
        vehicles=vehicles,
        trajectories=trajectories,
        tau_s=tau_s,
    )


def load_iterations(run_dir: str | Path) -> list[dict]:
    path = _require(Path(run_dir) / "iterations.csv")
    with open(path) as fh:
        return list(csv.DictReader(fh))
