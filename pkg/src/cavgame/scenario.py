"""Scenario configuration: file schema, validation, perturbation, setup.

A scenario file fully determines a run: road geometry, vehicle fleet,
objective weights, comfort limits, solver parameters, ordering policy,
and the seeded random-number generator, so identical configs reproduce
identical experiments.
"""

from __future__ import annotations

import copy
import json
import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np
from jsonschema import Draft202012Validator

from cavgame.conflict_geometry import enumerate_crucial_pairs
from cavgame.game import GameProblem, OrderPolicy
from cavgame.milp_model import Limits, Weights, build_regions
from cavgame.trajectory import OcpParams
from cavgame.waypoint_graph import (
    RoadSpec,
    VehicleSpec,
    WayPointGraph,
    build_waypoint_graph,
    extend_with_start,
    subgraph_for_vehicle,
)

VELOCITY_FLOOR = 2.0  # m/s; perturbed initial speeds are clamped above zero

_NUM = {"type": "number"}
_POS = {"type": "number", "exclusiveMinimum": 0}

SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "additionalProperties": False,
    "required": ["schema_version", "name", "rng", "road", "vehicles"],
    "properties": {
        "schema_version": {"const": 1},
        "name": {"type": "string"},
        "comment": {"type": "string"},
        "rng": {
            "type": "object",
            "additionalProperties": False,
            "required": ["algorithm", "seed"],
            "properties": {
                "algorithm": {"const": "pcg64"},
                "seed": {"type": "integer", "minimum": 0},
            },
        },
        "road": {
            "type": "object",
            "additionalProperties": False,
            "required": ["lanes", "lane_width", "sample_spacing"],
            "properties": {
                "lanes": {
                    "type": "array",
                    "minItems": 1,
                    "items": {
                        "type": "array",
                        "minItems": 2,
                        "items": {
                            "type": "array",
                            "prefixItems": [_NUM, _NUM],
                            "minItems": 2,
                            "maxItems": 2,
                        },
                    },
                },
                "lane_width": _POS,
                "sample_spacing": _POS,
                "lane_adjacency": {
                    "type": "array",
                    "items": {
                        "type": "array",
                        "prefixItems": [
                            {"type": "integer", "minimum": 0},
                            {"type": "integer", "minimum": 0},
                        ],
                        "minItems": 2,
                        "maxItems": 2,
                    },
                },
                "direction": {"type": "array", "items": {"enum": [1, -1]}},
            },
        },
        "vehicles": {
            "type": "array",
            "minItems": 1,
            "items": {
                "type": "object",
                "additionalProperties": False,
                "required": ["id", "start", "heading", "v_ini", "destinations"],
                "properties": {
                    "id": {"type": "integer", "minimum": 1},
                    "start": {
                        "type": "array",
                        "prefixItems": [_NUM, _NUM],
                        "minItems": 2,
                        "maxItems": 2,
                    },
                    "heading": _NUM,
                    "v_ini": _POS,
                    "v_ref": _POS,
                    "length": _POS,
                    "width": _POS,
                    "wheelbase": _POS,
                    "center_to_rear_axle": {"type": "number", "minimum": 0},
                    "start_attach_count": {"type": "integer", "minimum": 1},
                    "destinations": {
                        "type": "object",
                        "additionalProperties": False,
                        "properties": {
                            "lane_ends": {
                                "type": "array",
                                "items": {"type": "integer", "minimum": 0},
                            },
                            "vertices": {
                                "type": "array",
                                "items": {"type": "integer", "minimum": 0},
                            },
                        },
                    },
                },
            },
        },
        "defaults": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "length": _POS,
                "width": _POS,
                "wheelbase": _POS,
                "center_to_rear_axle": {"type": "number", "minimum": 0},
                "start_attach_count": {"type": "integer", "minimum": 1},
            },
        },
        "velocity_band": {
            "type": "array",
            "prefixItems": [_POS, _POS],
            "minItems": 2,
            "maxItems": 2,
        },
        "weights": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "alpha_t": {"type": "number", "minimum": 0},
                "alpha_v": {"type": "number", "minimum": 0},
                "alpha_a": {"type": "number", "minimum": 0},
                "alpha_theta": {"type": "number", "minimum": 0},
            },
        },
        "limits": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "gamma_max": _POS,
                "gamma_min": {"type": "number", "exclusiveMaximum": 0},
                "eta_max": _POS,
                "a_max": _POS,
                "a_min": {"type": "number", "exclusiveMaximum": 0},
                "delta_max": _POS,
                "delta_min": {"type": "number", "exclusiveMaximum": 0},
                "d_safe": _POS,
            },
        },
        "velocity_regions": {"type": "integer", "minimum": 1},
        "epsilon": _POS,
        "big_m": _POS,
        "tau_s": _POS,
        "ocp": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "q_diag": {
                    "type": "array",
                    "items": {"type": "number", "minimum": 0},
                    "minItems": 4,
                    "maxItems": 4,
                },
                "r_diag": {
                    "type": "array",
                    "items": _POS,
                    "minItems": 2,
                    "maxItems": 2,
                },
            },
        },
        "order": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "kind": {"enum": ["default", "lod", "topsis"]},
                "beta_p": {"type": "number", "minimum": 0},
                "beta_v": {"type": "number", "minimum": 0},
                "collision_aware": {"type": "boolean"},
            },
        },
        "velocity_sigma": {"type": "number", "minimum": 0},
    },
}

_VALIDATOR = Draft202012Validator(SCHEMA)


class ScenarioFormatError(ValueError):
    """Config file violates the schema or a semantic invariant."""


@dataclass
class ScenarioConfig:
    """Validated, still-serializable view of a scenario file."""

    raw: dict

    @property
    def name(self) -> str:
        return self.raw["name"]

    @property
    def seed(self) -> int:
        return self.raw["rng"]["seed"]

    @property
    def velocity_band(self) -> tuple[float, float]:
        return tuple(self.raw.get("velocity_band", [0.6, 1.3]))

    @property
    def weights(self) -> Weights:
        return Weights(**{
            "alpha_t": self.raw.get("weights", {}).get("alpha_t", 0.1),
            "alpha_v": self.raw.get("weights", {}).get("alpha_v", 1.0),
            "alpha_a": self.raw.get("weights", {}).get("alpha_a", 0.5),
            "alpha_theta": self.raw.get("weights", {}).get("alpha_theta", 0.5),
        })

    @property
    def limits(self) -> Limits:
        return Limits(**self.raw.get("limits", {}))

    @property
    def k_regions(self) -> int:
        return self.raw.get("velocity_regions", 3)

    @property
    def epsilon(self) -> float:
        return self.raw.get("epsilon", 0.2)

    @property
    def big_m(self) -> float:
        return self.raw.get("big_m", 1e4)

    @property
    def tau_s(self) -> float:
        return self.raw.get("tau_s", 0.1)

    @property
    def velocity_sigma(self) -> float:
        return self.raw.get("velocity_sigma", 3.0)

    @property
    def ocp_params(self) -> OcpParams:
        ocp = self.raw.get("ocp", {})
        return OcpParams(
            q_diag=tuple(ocp.get("q_diag", (20.0, 20.0, 0.0, 0.0))),
            r_diag=tuple(ocp.get("r_diag", (20.0, 0.1))),
        )

    @property
    def order_policy(self) -> OrderPolicy:
        o = self.raw.get("order", {})
        return OrderPolicy(
            kind=o.get("kind", "default"),
            beta_p=o.get("beta_p", 0.5),
            beta_v=o.get("beta_v", 0.5),
            collision_aware=o.get("collision_aware", True),
        )

    @property
    def road(self) -> RoadSpec:
        r = self.raw["road"]
        return RoadSpec(
            lanes=tuple(tuple(tuple(p) for p in lane) for lane in r["lanes"]),
            lane_width=r["lane_width"],
            sample_spacing=r["sample_spacing"],
            lane_adjacency=tuple(tuple(p) for p in r.get("lane_adjacency", [])),
            direction=tuple(r.get("direction", [])),
        )

    def vehicle_specs(self) -> list[VehicleSpec]:
        lo, hi = self.velocity_band
        d = self.raw.get("defaults", {})
        out = []
        for v in self.raw["vehicles"]:
            v_ini = v["v_ini"]
            spec = VehicleSpec(
                id=v["id"],
                start_xy=tuple(v["start"]),
                heading=v["heading"],
                v_ini=v_ini,
                v_ref=v.get("v_ref", v_ini),
                v_min=lo * v_ini,
                v_max=hi * v_ini,
                length=v.get("length", d.get("length", 3.526)),
                width=v.get("width", d.get("width", 1.673)),
                wheelbase=v.get("wheelbase", d.get("wheelbase", 2.405)),
                center_to_rear_axle=v.get(
                    "center_to_rear_axle", d.get("center_to_rear_axle", 1.2025)
                ),
                start_attach_count=v.get(
                    "start_attach_count", d.get("start_attach_count", 2)
                ),
            )
            out.append(spec)
        return out

    def to_json_dict(self) -> dict:
        return copy.deepcopy(self.raw)


def _validate_semantics(raw: dict) -> None:
    ids = [v["id"] for v in raw["vehicles"]]
    if len(set(ids)) != len(ids):
        raise ScenarioFormatError("vehicles: duplicate ids")
    n_lanes = len(raw["road"]["lanes"])
    for pair in raw["road"].get("lane_adjacency", []):
        if pair[0] == pair[1] or max(pair) >= n_lanes:
            raise ScenarioFormatError(f"road.lane_adjacency: bad pair {pair}")
    direction = raw["road"].get("direction", [])
    if direction and len(direction) != n_lanes:
        raise ScenarioFormatError("road.direction: one entry per lane required")
    band = raw.get("velocity_band", [0.6, 1.3])
    if not band[0] < 1.0 <= band[1]:
        raise ScenarioFormatError("velocity_band must bracket the initial speed")
    for v in raw["vehicles"]:
        dest = v["destinations"]
        if not dest.get("lane_ends") and not dest.get("vertices"):
            raise ScenarioFormatError(f"vehicle {v['id']}: empty destinations")
        for li in dest.get("lane_ends", []):
            if li >= n_lanes:
                raise ScenarioFormatError(
                    f"vehicle {v['id']}: lane_ends references lane {li}"
                )


def parse_scenario(raw: dict) -> ScenarioConfig:
    errors = sorted(_VALIDATOR.iter_errors(raw), key=lambda e: e.json_path)
    if errors:
        msgs = "; ".join(f"{e.json_path}: {e.message}" for e in errors[:5])
        raise ScenarioFormatError(msgs)
    _validate_semantics(raw)
    cfg = ScenarioConfig(raw=copy.deepcopy(raw))
    cfg.road.validate()
    for veh in cfg.vehicle_specs():
        veh.validate()
    return cfg


def load_scenario(path: str | Path) -> ScenarioConfig:
    with open(path) as fh:
        raw = json.load(fh)
    return parse_scenario(raw)


def dump_scenario(config: ScenarioConfig, path: str | Path) -> None:
    Path(path).write_text(json.dumps(config.to_json_dict(), indent=1) + "\n")


def bundled_scenario_path(name: str) -> Path:
    candidate = resources.files("cavgame").joinpath("scenarios", f"{name}.json")
    if not candidate.is_file():
        raise FileNotFoundError(f"no bundled scenario named {name!r}")
    return Path(str(candidate))


def make_rng(config: ScenarioConfig, seed: int | None = None) -> np.random.Generator:
    actual = config.seed if seed is None else seed
    return np.random.Generator(np.random.PCG64(actual))


def perturb_velocities(config: ScenarioConfig, seed: int | None = None) -> ScenarioConfig:
    """Gaussian-perturbed initial speeds with rescaled bands.

    Each vehicle's initial speed receives an independent draw with the
    configured sigma (clamped above zero); the reference speed follows the
    perturbed value and velocity bounds are recomputed from the band.
    """
    rng = make_rng(config, seed)
    raw = config.to_json_dict()
    sigma = config.velocity_sigma
    for v in raw["vehicles"]:
        lam = float(rng.normal(0.0, sigma)) if sigma > 0 else 0.0
        v_new = max(v["v_ini"] + lam, VELOCITY_FLOOR)
        v["v_ini"] = v_new
        v["v_ref"] = v_new
    if seed is not None:
        raw["rng"]["seed"] = seed
    return parse_scenario(raw)


def _arc_progress(road: RoadSpec, point: tuple[float, float]) -> float:
    """Arc-length station of the nearest point on the nearest lane."""
    best = (math.inf, 0.0)
    p = np.asarray(point, dtype=float)
    for li in range(len(road.lanes)):
        pts = road.oriented_lane(li)
        arc = 0.0
        for a, b in zip(pts, pts[1:]):
            a = np.asarray(a, float)
            b = np.asarray(b, float)
            ab = b - a
            seg = float(np.linalg.norm(ab))
            t = float(np.clip(np.dot(p - a, ab) / (seg * seg), 0.0, 1.0))
            d = float(np.linalg.norm(p - (a + t * ab)))
            if d < best[0]:
                best = (d, arc + t * seg)
            arc += seg
    return best[1]


@dataclass
class ProblemSetup:
    """Everything a run needs: the game problem plus shared parameters."""

    config: ScenarioConfig
    problem: GameProblem
    graph: WayPointGraph
    epsilon: float
    tau_s: float
    ocp_params: OcpParams
    order_policy: OrderPolicy


def _resolve_destinations(
    graph: WayPointGraph, road: RoadSpec, dest_spec: dict
) -> frozenset[int]:
    ids: set[int] = set(dest_spec.get("vertices", []))
    for li in dest_spec.get("lane_ends", []):
        lane_pts = road.oriented_lane(li)
        end = lane_pts[-1]
        for v in graph.vertices:
            if math.dist((v.x, v.y), tuple(end)) <= 1e-6:
                ids.add(v.id)
                break
        else:
            raise ScenarioFormatError(f"lane {li}: end point has no waypoint")
    return frozenset(ids)


def build_setup(config: ScenarioConfig) -> ProblemSetup:
    """Construct the full game problem from a validated config."""
    road = config.road
    graph = build_waypoint_graph(road)
    vehicles = config.vehicle_specs()
    raw_vehicles = {v["id"]: v for v in config.raw["vehicles"]}
    for veh in vehicles:
        veh.destinations = _resolve_destinations(
            graph, road, raw_vehicles[veh.id]["destinations"]
        )
        graph = extend_with_start(graph, veh, road)
    subgraphs = {v.id: subgraph_for_vehicle(graph, v) for v in vehicles}
    vdict = {v.id: v for v in vehicles}
    pairs = enumerate_crucial_pairs(graph, subgraphs, vdict)
    problem = GameProblem(
        graph=graph,
        vehicles=vdict,
        subgraphs=subgraphs,
        regions={v.id: build_regions(v, config.k_regions) for v in vehicles},
        pairs_by_vehicle={
            v.id: [p for p in pairs if p.i == v.id] for v in vehicles
        },
        weights=config.weights,
        limits=config.limits,
        big_m=config.big_m,
        progress={v.id: _arc_progress(road, v.start_xy) for v in vehicles},
    )
    return ProblemSetup(
        config=config,
        problem=problem,
        graph=graph,
        epsilon=config.epsilon,
        tau_s=config.tau_s,
        ocp_params=config.ocp_params,
        order_policy=config.order_policy,
    )
