"""Batch experiment driver: single runs, randomized studies, model comparison.

Artifacts land in an output directory per run; summaries are deterministic
for a given scenario and seed (wall-clock numbers go to a separate timing
file so repeated runs produce byte-identical summaries).
"""

from __future__ import annotations

import argparse
import json
import multiprocessing
import sys
import time
from pathlib import Path

import numpy as np

from cavgame import artifacts
from cavgame.comparison import run_comparison
from cavgame.game import (
    GameState,
    OrderPolicy,
    certify_epsilon_mine,
    collision_counts,
    cost_of,
    initial_state,
    potential,
    sequential_gauss_seidel,
)
from cavgame.scenario import (
    ProblemSetup,
    ScenarioConfig,
    build_setup,
    dump_scenario,
    load_scenario,
    parse_scenario,
    perturb_velocities,
)
from cavgame.trajectory import collision_audit, trajectory_for_vehicle, trim_to_common_horizon


def _policy(setup: ProblemSetup, order_flag: str | None) -> OrderPolicy:
    policy = setup.order_policy
    if order_flag:
        policy = OrderPolicy(
            kind=order_flag,
            beta_p=policy.beta_p,
            beta_v=policy.beta_v,
            collision_aware=policy.collision_aware,
        )
    return policy


def _spawn_seeds(master: int, count: int) -> list[int]:
    ss = np.random.SeedSequence(master)
    return [int(child.generate_state(1)[0]) for child in ss.spawn(count)]


def execute_run(
    config: ScenarioConfig,
    seed: int,
    order_flag: str | None = None,
    eps: float | None = None,
    max_sweeps: int = 20,
    init_mode: str = "random-feasible",
    perturb: bool = True,
):
    """One full pipeline pass; returns everything the writers need."""
    perturb_seed, init_seed = _spawn_seeds(seed, 2)
    cfg = perturb_velocities(config, perturb_seed) if perturb else config
    setup = build_setup(cfg)
    problem = setup.problem
    epsilon = eps if eps is not None else setup.epsilon
    policy = _policy(setup, order_flag)

    t0 = time.perf_counter()
    state = initial_state(problem, init_mode, seed=np.random.default_rng(init_seed))
    initial_costs = {
        vid: cost_of(problem, vid, dec) for vid, dec in state.decisions.items()
    }
    done = sequential_gauss_seidel(problem, state, epsilon, policy, max_sweeps)
    solve_wall = time.perf_counter() - t0
    cert = certify_epsilon_mine(problem, done, epsilon)

    trajectories = []
    audit = None
    if done.converged:
        for vid in problem.vehicle_ids:
            trajectories.append(
                trajectory_for_vehicle(
                    done.decisions[vid],
                    problem.vehicles[vid],
                    problem.graph,
                    setup.ocp_params,
                    problem.limits,
                    setup.tau_s,
                )
            )
        trajectories = trim_to_common_horizon(trajectories)
        audit = collision_audit(
            trajectories,
            problem.vehicles,
            problem.limits.d_safe,
        )
    return {
        "config": cfg,
        "setup": setup,
        "problem": problem,
        "state": done,
        "certify": cert,
        "initial_costs": initial_costs,
        "trajectories": trajectories,
        "audit": audit,
        "wall": solve_wall,
        "epsilon": epsilon,
        "order": policy.kind,
        "seed": seed,
    }


def _summary_payload(run: dict) -> dict:
    problem = run["problem"]
    done: GameState = run["state"]
    final_costs = {
        vid: cost_of(problem, vid, dec) for vid, dec in done.decisions.items()
    }
    n = len(final_costs)
    files = {
        "graph": "graph.json",
        "scenario": "scenario_resolved.json",
        "iterations": "iterations.csv",
        "decisions": "decisions.json",
        "timings": "timings.json",
    }
    if run["trajectories"]:
        files["trajectories"] = {
            str(t.vehicle_id): f"trajectory_{t.vehicle_id}.csv"
            for t in run["trajectories"]
        }
        files["audit"] = "audit.csv"
    return {
        "scenario": run["config"].name,
        "seed": run["seed"],
        "order": run["order"],
        "epsilon": run["epsilon"],
        "initial_average_cost": sum(run["initial_costs"].values()) / n,
        "final_average_cost": sum(final_costs.values()) / n,
        "per_vehicle_costs": {str(k): v for k, v in sorted(final_costs.items())},
        "sweeps": done.sweeps,
        "converged": done.converged,
        "certified": run["certify"].certified,
        "collisions": {str(k): v for k, v in sorted(run["certify"].collisions.items())},
        "artifacts": files,
    }


def write_run_artifacts(run: dict, out_dir: Path, dump_pairs: bool = False) -> dict:
    out_dir.mkdir(parents=True, exist_ok=True)
    problem = run["problem"]
    artifacts.write_graph(out_dir / "graph.json", problem.graph)
    dump_scenario(run["config"], out_dir / "scenario_resolved.json")
    artifacts.write_iteration_log(out_dir / "iterations.csv", run["state"].log)
    artifacts.write_decisions(out_dir / "decisions.json", run["state"])
    if dump_pairs:
        all_pairs = [p for vid in problem.vehicle_ids for p in problem.pairs_by_vehicle[vid]]
        artifacts.write_pairs(out_dir / "crucial_pairs.json", all_pairs)
    for traj in run["trajectories"]:
        artifacts.write_trajectory(out_dir / f"trajectory_{traj.vehicle_id}.csv", traj)
    if run["audit"] is not None:
        clearance, violations = run["audit"]
        artifacts.write_audit(out_dir / "audit.csv", clearance, violations, run["setup"].tau_s)
    artifacts.write_json(out_dir / "timings.json", {"solve_wall_s": run["wall"]})
    summary = _summary_payload(run)
    artifacts.write_json(out_dir / "summary.json", summary)
    return summary


def cmd_run(args) -> int:
    try:
        config = load_scenario(args.scenario)
        seed = args.seed if args.seed is not None else config.seed
        run = execute_run(
            config,
            seed,
            order_flag=args.order,
            eps=args.eps,
            max_sweeps=args.max_sweeps,
            init_mode=args.init,
            perturb=not args.no_perturb,
        )
    except Exception as exc:  # scenario or solver failure: report and signal
        print(f"error: {exc}", file=sys.stderr)
        return 2
    summary = write_run_artifacts(run, Path(args.out_dir), dump_pairs=args.dump_pairs)
    audit_line = ""
    if run["audit"] is not None:
        audit_line = f" audit_violations={len(run['audit'][1])}"
    print(
        f"{summary['scenario']}: sweeps={summary['sweeps']} "
        f"avg cost {summary['initial_average_cost']:.3f} -> {summary['final_average_cost']:.3f} "
        f"converged={summary['converged']} certified={summary['certified']}{audit_line}"
    )
    print(f"artifacts written to {args.out_dir}")
    return 0


def _study_one(payload) -> dict:
    raw, seed, order_flag, eps, max_sweeps = payload
    config = parse_scenario(raw)
    t0 = time.perf_counter()
    try:
        run = execute_run(
            config, seed, order_flag=order_flag, eps=eps, max_sweeps=max_sweeps
        )
    except Exception as exc:
        return {"seed": seed, "success": False, "error": str(exc)}
    wall = time.perf_counter() - t0
    problem = run["problem"]
    done = run["state"]
    final_costs = [cost_of(problem, v, d) for v, d in done.decisions.items()]
    return {
        "seed": seed,
        "success": bool(done.converged and run["certify"].certified),
        "converged": bool(done.converged),
        "sweeps": done.sweeps,
        "wall_s": wall,
        "t_aver_s": run["state"].solve_time / max(done.sweeps, 1),
        "j_aver": sum(final_costs) / len(final_costs),
        "initial_average_cost": sum(run["initial_costs"].values()) / len(final_costs),
    }


def cmd_study(args) -> int:
    try:
        config = load_scenario(args.scenario)
    except Exception as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    master = args.seed if args.seed is not None else config.seed
    seeds = _spawn_seeds(master, args.runs)
    payloads = [
        (config.to_json_dict(), s, args.order, args.eps, args.max_sweeps)
        for s in seeds
    ]
    if args.jobs > 1:
        with multiprocessing.Pool(args.jobs) as pool:
            records = pool.map(_study_one, payloads)
    else:
        records = [_study_one(p) for p in payloads]
    ok = [r for r in records if "error" not in r]
    n_success = sum(r["success"] for r in ok)
    total_wall = sum(r["wall_s"] for r in ok)
    t_aver = sum(r["t_aver_s"] for r in ok) / max(len(ok), 1)
    j_vals = [r["j_aver"] for r in ok if r["success"]]
    j_aver = sum(j_vals) / len(j_vals) if j_vals else float("nan")
    table = {
        "scenario": config.name,
        "order": args.order or config.order_policy.kind,
        "runs": args.runs,
        "computing_time_s": total_wall / max(len(ok), 1),
        "t_aver_s": t_aver,
        "j_aver": j_aver,
        "success_rate": f"{n_success}/{args.runs}",
        "records": records,
    }
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    artifacts.write_json(out_dir / "study.json", table)
    print(
        f"{config.name} [{table['order']}]  runs={args.runs}  "
        f"time/run={table['computing_time_s']:.2f}s  T_aver={t_aver:.2f}s  "
        f"J_aver={j_aver:.2f}  success={table['success_rate']}"
    )
    return 0


def cmd_compare(args) -> int:
    try:
        config = load_scenario(args.scenario)
        seed = args.seed if args.seed is not None else config.seed
        run = execute_run(config, seed, order_flag=args.order, max_sweeps=args.max_sweeps)
    except Exception as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    result = run_comparison(
        run["problem"], run["state"], run["wall"], node_limit=args.node_limit
    )
    payload = {
        "scenario": config.name,
        "seed": seed,
        "mipg": {
            "total_cost": result.mipg_cost,
            "wall_s": result.mipg_wall,
            "converged": run["state"].converged,
        },
        "joint_milp": {
            "total_cost": result.joint_cost,
            "wall_s": result.joint_wall,
            "status": result.joint.status,
            "nodes": result.joint.nodes_explored,
            "gap": result.joint.gap,
            "seeded_with_equilibrium": result.seeded,
        },
    }
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    artifacts.write_json(out_dir / "comparison.json", payload)
    print(
        f"{config.name}: joint MILP cost={result.joint_cost:.3f} ({result.joint.status}, "
        f"{result.joint_wall:.1f}s)  vs  MIPG cost={result.mipg_cost:.3f} "
        f"({result.mipg_wall:.1f}s)"
    )
    return 0


def cmd_plot_export(args) -> int:
    out_dir = Path(args.out_dir)
    summary_path = out_dir / "summary.json"
    if not summary_path.is_file():
        print(f"error: no summary.json in {out_dir}", file=sys.stderr)
        return 2
    summary = json.loads(summary_path.read_text())
    files = summary["artifacts"]
    manifest = {
        "run_dir": str(out_dir.resolve()),
        "scenario": summary["scenario"],
        "graph": files["graph"],
        "scenario_file": files["scenario"],
        "iterations": files["iterations"],
        "decisions": files["decisions"],
        "trajectories": files.get("trajectories", {}),
        "audit": files.get("audit"),
        "summary": "summary.json",
    }
    artifacts.write_json(out_dir / "manifest.json", manifest)
    print(f"manifest written to {out_dir / 'manifest.json'}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cavgame",
        description="Cooperative multi-vehicle decision-making experiments",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--scenario", required=True, help="scenario config JSON")
        p.add_argument("--order", choices=["default", "lod", "topsis"], default=None)
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--eps", type=float, default=None)
        p.add_argument("--max-sweeps", type=int, default=20)
        p.add_argument("--out-dir", default="out")

    p_run = sub.add_parser("run", help="single experiment with full artifacts")
    common(p_run)
    p_run.add_argument(
        "--init", choices=["random-feasible", "independent-optimum"],
        default="random-feasible",
    )
    p_run.add_argument("--no-perturb", action="store_true")
    p_run.add_argument("--dump-pairs", action="store_true")
    p_run.set_defaults(func=cmd_run)

    p_study = sub.add_parser("study", help="randomized multi-run study")
    common(p_study)
    p_study.add_argument("--runs", type=int, default=25)
    p_study.add_argument("--jobs", type=int, default=1)
    p_study.set_defaults(func=cmd_study)

    p_cmp = sub.add_parser("compare", help="joint MILP vs equilibrium search")
    common(p_cmp)
    p_cmp.add_argument("--node-limit", type=int, default=2_000_000)
    p_cmp.set_defaults(func=cmd_compare)

    p_plot = sub.add_parser("plot-export", help="write a manifest for the plot tool")
    p_plot.add_argument("--out-dir", default="out")
    p_plot.set_defaults(func=cmd_plot_export)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
