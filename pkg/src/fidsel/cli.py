"""Command-line pipeline: fit, select, solve, simulate, sensitivity, compare,
serve, export.

Exit codes: 0 success, 1 usage error, 2 data error, 3 fit hit the iteration
cap without converging. Every run writes a ``run_manifest.json`` next to its
outputs so it can be reproduced exactly from (inputs, seed).
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import asdict
from datetime import datetime, timezone
from pathlib import Path

from . import __version__, demo, model_io, plots
from .model_io import DataFormatError
from .policy import (
    BeliefGrid,
    QueueParams,
    RewardWeights,
    build_belief_mdp,
    discretize_observations,
    load_policy,
    policy_structure_report,
    save_policy,
    value_iteration,
)
from .service import ServiceConfig, run_service
from .simulate import (
    BASELINE_KINDS,
    SimConfig,
    TablePolicy,
    baseline_policy,
    compare_groups,
    read_scores_csv,
    run_batch,
    sensitivity_sweep,
    write_comparison_csv,
    write_episode_log,
    write_scores_csv,
    write_sensitivity_csv,
)
from .workload import Action, DEFAULT_CHANNEL_STEPS, EmConfig, em_fit, information_criteria, select_model

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NO_CONVERGENCE = 3


class UsageError(Exception):
    pass


class CliParser(argparse.ArgumentParser):
    # argparse exits with 2 on bad flags; the documented usage code is 1
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _utcnow() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def _write_manifest(outdir: Path, subcommand: str, config: dict, inputs: list[str],
                    outputs: list[str], seed, started: str) -> None:
    manifest = {
        "tool": "fidsel",
        "version": __version__,
        "subcommand": subcommand,
        "config": config,
        "inputs": sorted(str(p) for p in inputs),
        "outputs": sorted(str(p) for p in outputs),
        "seed": seed,
        "started_at": started,
        "finished_at": _utcnow(),
    }
    (outdir / "run_manifest.json").write_text(model_io.dumps_canonical(manifest))


def _outdir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _em_config(args) -> EmConfig:
    return EmConfig(
        restarts=args.restarts, max_iters=args.max_iters, tol=args.tol,
        variance_floor=args.variance_floor, seed=args.seed,
    )


def _add_em_flags(p: argparse.ArgumentParser):
    p.add_argument("--restarts", type=int, default=EmConfig.restarts)
    p.add_argument("--max-iters", type=int, default=EmConfig.max_iters)
    p.add_argument("--tol", type=float, default=EmConfig.tol)
    p.add_argument("--variance-floor", type=float, default=EmConfig.variance_floor)


def _add_queue_reward_flags(p: argparse.ArgumentParser):
    q = QueueParams()
    w = RewardWeights()
    p.add_argument("--arrival-rate", "--lambda", dest="arrival_rate", type=float,
                   default=q.arrival_rate, help="task arrivals per second")
    p.add_argument("--max-queue", type=int, default=q.max_length)
    p.add_argument("--t-high", type=float, default=q.duration_high)
    p.add_argument("--t-normal", type=float, default=q.duration_normal)
    p.add_argument("--wait-epoch", type=float, default=None)
    p.add_argument("--alpha1", type=float, default=w.alpha1)
    p.add_argument("--alpha2", type=float, default=w.alpha2)
    p.add_argument("--alpha3", type=float, default=w.alpha3)
    p.add_argument("--delegation-accuracy", type=float, default=w.delegation_accuracy)
    p.add_argument("--grid-step", type=float, default=0.1)


def _queue_params(args) -> QueueParams:
    return QueueParams(
        arrival_rate=args.arrival_rate, max_length=args.max_queue,
        duration_high=args.t_high, duration_normal=args.t_normal,
        wait_epoch=args.wait_epoch,
    )


def _weights(args) -> RewardWeights:
    return RewardWeights(alpha1=args.alpha1, alpha2=args.alpha2, alpha3=args.alpha3,
                         delegation_accuracy=args.delegation_accuracy)


def _resolve_policy(args, model, params, weights, grid):
    """--policy is either a policy JSON path or the literal 'optimal'."""
    if args.policy == "optimal":
        action_set = (Action.N, Action.H, Action.D) if args.actions == 3 else (Action.N, Action.H)
        table = discretize_observations(model, DEFAULT_CHANNEL_STEPS)
        mdp = build_belief_mdp(model, table, params, weights, action_set, grid)
        return value_iteration(mdp, gamma=args.gamma, tol=1e-6).policy, []
    policy = load_policy(args.policy)
    if abs(policy.grid_step - grid.step) > 1e-12 or policy.max_length != params.max_length:
        raise DataFormatError(
            f"incompatible artifacts: policy has grid_step={policy.grid_step}, "
            f"L={policy.max_length}; run configured grid_step={grid.step}, "
            f"L={params.max_length}"
        )
    return policy, [args.policy]


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------


def cmd_fit(args) -> int:
    started = _utcnow()
    outdir = _outdir(args)
    if args.k < 1:
        raise UsageError("--k must be a positive integer")
    dataset = model_io.read_traces(args.dataset)
    report = em_fit(dataset, args.k, _em_config(args))
    model_path = outdir / "model.json"
    model_io.save_model(report.model, model_path)
    aic, bic = information_criteria(report)
    report_path = outdir / "fit_report.json"
    report_path.write_text(
        model_io.dumps_canonical(
            {
                "num_states": args.k,
                "loglik": report.loglik,
                "loglik_trace": report.loglik_trace,
                "num_params": report.num_params,
                "num_trajectories": report.num_trajectories,
                "converged": report.converged,
                "warnings": report.warnings,
                "aic": aic,
                "bic": bic,
            }
        )
    )
    outputs = [model_path, report_path]
    if not args.no_plots:
        outputs.append(plots.save_loglik_trace(report.restart_traces, outdir / "loglik_trace.png"))
    _write_manifest(outdir, "fit", {"k": args.k, **_em_dict(args)}, [args.dataset],
                    outputs, args.seed, started)
    print(f"fitted K={args.k}: loglik={report.loglik:.3f} aic={aic:.3f} bic={bic:.3f} "
          f"converged={report.converged}")
    for w in report.warnings:
        print(f"warning: {w}", file=sys.stderr)
    return EXIT_OK if report.converged else EXIT_NO_CONVERGENCE


def _em_dict(args) -> dict:
    return {
        "restarts": args.restarts, "max_iters": args.max_iters, "tol": args.tol,
        "variance_floor": args.variance_floor,
    }


SELECT_HEADER = f"{'K':>3} {'AIC':>14} {'BIC':>14} {'logLik':>14} {'params':>7} {'converged':>10}"


def cmd_select(args) -> int:
    started = _utcnow()
    outdir = _outdir(args)
    dataset = model_io.read_traces(args.dataset)
    result = select_model(dataset, args.k, _em_config(args), criterion=args.criterion,
                          normalized=args.normalized)
    print(SELECT_HEADER)
    for row in result.table:
        # table criteria already carry the requested normalization
        print(f"{row['k']:>3} {row['aic']:>14.4f} {row['bic']:>14.4f} {row['loglik']:>14.4f} "
              f"{row['num_params']:>7} {str(row['converged']):>10}")
    for k, err in result.errors.items():
        print(f"K={k} failed: {err}", file=sys.stderr)
    print(f"selected K={result.best_k} by {args.criterion}")

    model_path = outdir / "selected_model.json"
    model_io.save_model(result.reports[result.best_k].model, model_path)
    csv_path = outdir / "criteria.csv"
    with open(csv_path, "w") as fh:
        fh.write("k,aic,bic,loglik,num_params,converged\n")
        for row in result.table:
            fh.write(f"{row['k']},{row['aic']:.6f},{row['bic']:.6f},{row['loglik']:.6f},"
                     f"{row['num_params']},{row['converged']}\n")
    outputs = [model_path, csv_path]
    if not args.no_plots:
        outputs.append(plots.save_criteria_bars(result.table, outdir / "criteria.png"))
    _write_manifest(
        outdir, "select",
        {"k": args.k, "criterion": args.criterion, "normalized": args.normalized,
         **_em_dict(args)},
        [args.dataset], outputs, args.seed, started,
    )
    return EXIT_OK


def cmd_solve(args) -> int:
    started = _utcnow()
    if not 0.0 <= args.gamma < 1.0:
        raise UsageError("--gamma must lie in [0, 1)")
    try:
        grid = BeliefGrid(args.grid_step)
    except ValueError as exc:
        raise UsageError(str(exc))
    outdir = _outdir(args)
    model = model_io.load_model(args.model)
    params = _queue_params(args)
    weights = _weights(args)
    action_set = (Action.N, Action.H, Action.D) if args.actions == 3 else (Action.N, Action.H)
    table = discretize_observations(model, DEFAULT_CHANNEL_STEPS)
    mdp = build_belief_mdp(model, table, params, weights, action_set, grid)
    result = value_iteration(mdp, gamma=args.gamma, tol=args.tol)
    policy_path = outdir / "policy.json"
    save_policy(result.policy, policy_path)
    report = policy_structure_report(result.policy)
    report_path = outdir / "structure_report.txt"
    report_path.write_text(report.render_text())
    outputs = [policy_path, report_path]
    if not args.no_plots:
        outputs.append(plots.save_policy_heatmap(result.policy, outdir / "policy.png"))
    _write_manifest(
        outdir, "solve",
        {"actions": args.actions, "gamma": args.gamma, "grid_step": args.grid_step,
         "tol": args.tol, "params": asdict(params), "weights": asdict(weights)},
        [args.model], outputs, None, started,
    )
    print(f"solved {args.actions}-action policy in {result.iterations} iterations "
          f"(converged={result.converged})")
    print(report.render_text())
    return EXIT_OK


def cmd_simulate(args) -> int:
    started = _utcnow()
    outdir = _outdir(args)
    model = model_io.load_model(args.model)
    params = _queue_params(args)
    weights = _weights(args)
    grid = BeliefGrid(args.grid_step)
    policy, extra_inputs = _resolve_policy(args, model, params, weights, grid)
    config = SimConfig(
        ground_truth=model, params=params, weights=weights, grid=grid,
        tasks_per_episode=args.tasks, episodes=args.episodes, seed=args.seed,
        initial_queue=args.initial_queue, missed_cue_prob=args.missed_cue_prob,
    )
    runs = {"optimal": run_batch(config, TablePolicy(policy), collect_logs=args.logs > 0)}
    for kind in args.baseline:
        runs[kind] = run_batch(config, baseline_policy(kind), collect_logs=args.logs > 0)

    scores = {name: r.scores for name, r in runs.items()}
    comparisons = {}
    print(f"{'policy':15s} {'mean':>10} {'sd':>10} {'d':>7} {'welch p':>12}")
    base = runs["optimal"]
    print(f"{'optimal':15s} {base.mean:>10.2f} {base.sd:>10.2f} {'-':>7} {'-':>12}")
    for kind in args.baseline:
        c = compare_groups(base.scores, runs[kind].scores)
        comparisons[f"optimal_vs_{kind}"] = c
        print(f"{kind:15s} {runs[kind].mean:>10.2f} {runs[kind].sd:>10.2f} "
              f"{c.cohen_d:>7.3f} {c.p_value:>12.3e}")

    scores_path = outdir / "scores.csv"
    write_scores_csv(scores, scores_path)
    outputs = [scores_path]
    if comparisons:
        cmp_path = outdir / "comparison.csv"
        write_comparison_csv(comparisons, cmp_path)
        outputs.append(cmp_path)
    for name, r in runs.items():
        for i, log in enumerate(r.logs[: args.logs]):
            log_path = outdir / f"episode_{name}_{i:03d}.jsonl"
            write_episode_log(log, log_path)
            outputs.append(log_path)
    if not args.no_plots:
        outputs.append(plots.save_score_boxplot(scores, outdir / "scores_boxplot.png"))
    _write_manifest(
        outdir, "simulate",
        {"episodes": args.episodes, "tasks": args.tasks, "baseline": args.baseline,
         "policy": args.policy, "actions": args.actions, "gamma": args.gamma,
         "initial_queue": args.initial_queue, "missed_cue_prob": args.missed_cue_prob,
         "params": asdict(params), "weights": asdict(weights)},
        [args.model, *extra_inputs], outputs, args.seed, started,
    )
    return EXIT_OK


def cmd_sensitivity(args) -> int:
    started = _utcnow()
    outdir = _outdir(args)
    model = model_io.load_model(args.model)
    params = _queue_params(args)
    weights = _weights(args)
    grid = BeliefGrid(args.grid_step)
    policy, extra_inputs = _resolve_policy(args, model, params, weights, grid)
    config = SimConfig(
        ground_truth=model, params=params, weights=weights, grid=grid,
        tasks_per_episode=args.tasks, episodes=args.episodes, seed=args.seed,
        initial_queue=args.initial_queue, missed_cue_prob=args.missed_cue_prob,
    )
    sweep = []
    for v in sorted(set(args.transition_pct) | {0.0}) if args.transition_pct else []:
        sweep.append(("transition_pct", float(v)))
    for v in sorted(set(args.reaction_sigma) | {0.0}) if args.reaction_sigma else []:
        sweep.append(("reaction_sigma", float(v)))
    if not sweep:
        raise UsageError("give at least one of --transition-pct / --reaction-sigma")
    rows = sensitivity_sweep(config, TablePolicy(policy), sweep)
    print(f"{'kind':16s} {'value':>8} {'mean score':>12} {'abs % change':>13}")
    for r in rows:
        print(f"{r.kind:16s} {r.value:>8.1f} {r.mean_score:>12.2f} "
              f"{r.abs_pct_reward_change:>13.4f}")
    csv_path = outdir / "sensitivity.csv"
    write_sensitivity_csv(rows, csv_path)
    outputs = [csv_path]
    if not args.no_plots:
        outputs.append(plots.save_sensitivity_chart(rows, outdir / "sensitivity.png"))
    _write_manifest(
        outdir, "sensitivity",
        {"transition_pct": args.transition_pct, "reaction_sigma": args.reaction_sigma,
         "episodes": args.episodes, "tasks": args.tasks, "policy": args.policy,
         "params": asdict(params)},
        [args.model, *extra_inputs], outputs, args.seed, started,
    )
    return EXIT_OK


def _single_group(path: str, name: str | None):
    groups = read_scores_csv(path)
    if name is not None:
        if name not in groups:
            raise DataFormatError(f"{path}: no policy column named {name!r}")
        return groups[name]
    if len(groups) != 1:
        raise DataFormatError(
            f"{path} holds {sorted(groups)}; pick one with --policy-a/--policy-b"
        )
    return next(iter(groups.values()))


def cmd_compare(args) -> int:
    a = _single_group(args.scores_a, args.policy_a)
    b = _single_group(args.scores_b, args.policy_b)
    c = compare_groups(a, b)
    print(f"group a: mean={c.mean_a:.2f} sd={c.sd_a:.2f} n={c.n_a}")
    print(f"group b: mean={c.mean_b:.2f} sd={c.sd_b:.2f} n={c.n_b}")
    print(f"cohen_d={c.cohen_d:.4f} t={c.t_statistic:.4f} p={c.p_value:.6g}")
    if args.out:
        outdir = _outdir(args)
        started = _utcnow()
        cmp_path = outdir / "comparison.csv"
        write_comparison_csv({"a_vs_b": c}, cmp_path)
        _write_manifest(outdir, "compare", {"policy_a": args.policy_a, "policy_b": args.policy_b},
                        [args.scores_a, args.scores_b], [cmp_path], None, started)
    return EXIT_OK


def cmd_serve(args) -> int:
    config = ServiceConfig.from_file(args.config)
    run_service(config, host=args.host)
    return EXIT_OK


def cmd_export(args) -> int:
    started = _utcnow()
    outdir = _outdir(args)
    paths = demo.export_demo_bundle(outdir, seed=args.seed, num_traces=args.traces,
                                    static_dir=args.static_dir)
    if not args.no_plots:
        for n in (2, 3):
            paths[f"heatmap{n}"] = plots.save_policy_heatmap(
                demo.solve_demo_policy(n), outdir / f"policy_{n}action.png"
            )
    _write_manifest(outdir, "export", {"traces": args.traces}, [],
                    list(paths.values()), args.seed, started)
    for name, p in sorted(paths.items()):
        print(f"{name}: {p}")
    return EXIT_OK


def show_config() -> int:
    q = QueueParams()
    w = RewardWeights()
    em = EmConfig()
    doc = {
        "version": __version__,
        "em": {k: v for k, v in asdict(em).items()},
        "queue": asdict(q),
        "rewards": asdict(w),
        "grid_step": 0.1,
        "gamma": demo.DEMO_GAMMA,
        "channel_steps": list(DEFAULT_CHANNEL_STEPS),
        "demo_queue": asdict(demo.demo_queue_params()),
        "exit_codes": {"ok": EXIT_OK, "usage": EXIT_USAGE, "data": EXIT_DATA,
                       "no_convergence": EXIT_NO_CONVERGENCE},
    }
    print(model_io.dumps_canonical(doc), end="")
    return EXIT_OK


def build_parser() -> CliParser:
    parser = CliParser(prog="fidsel", description=__doc__)
    parser.add_argument("--version", action="version", version=f"fidsel {__version__}")
    parser.add_argument("--show-config", action="store_true",
                        help="print every default as JSON and exit")
    sub = parser.add_subparsers(dest="command")

    p = sub.add_parser("fit", help="train the workload model on a trace dataset")
    p.add_argument("--dataset", required=True)
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="fit_out")
    p.add_argument("--no-plots", action="store_true")
    _add_em_flags(p)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("select", help="fit several state counts and pick by AIC/BIC")
    p.add_argument("--dataset", required=True)
    p.add_argument("--k", type=int, nargs="+", required=True)
    p.add_argument("--criterion", choices=("aic", "bic"), default="aic")
    p.add_argument("--normalized", action="store_true",
                   help="report criteria divided by the number of trajectories")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="select_out")
    p.add_argument("--no-plots", action="store_true")
    _add_em_flags(p)
    p.set_defaults(func=cmd_select)

    p = sub.add_parser("solve", help="build and solve the belief MDP for a model")
    p.add_argument("--model", required=True)
    p.add_argument("--actions", type=int, choices=(2, 3), default=2)
    p.add_argument("--gamma", type=float, default=demo.DEMO_GAMMA)
    p.add_argument("--tol", type=float, default=1e-6)
    p.add_argument("--out", default="solve_out")
    p.add_argument("--no-plots", action="store_true")
    _add_queue_reward_flags(p)
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("simulate", help="batch episodes: optimal policy vs baselines")
    p.add_argument("--model", required=True)
    p.add_argument("--policy", default="optimal",
                   help="policy JSON path, or 'optimal' to solve now")
    p.add_argument("--actions", type=int, choices=(2, 3), default=2)
    p.add_argument("--gamma", type=float, default=demo.DEMO_GAMMA)
    p.add_argument("--baseline", nargs="*", default=list(BASELINE_KINDS),
                   choices=BASELINE_KINDS)
    p.add_argument("--episodes", type=int, default=200)
    p.add_argument("--tasks", type=int, default=48)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--initial-queue", type=int, default=1)
    p.add_argument("--missed-cue-prob", type=float, default=0.02)
    p.add_argument("--logs", type=int, default=0,
                   help="write the first N episode logs per policy")
    p.add_argument("--out", default="simulate_out")
    p.add_argument("--no-plots", action="store_true")
    _add_queue_reward_flags(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("sensitivity", help="score robustness to model perturbations")
    p.add_argument("--model", required=True)
    p.add_argument("--policy", default="optimal")
    p.add_argument("--actions", type=int, choices=(2, 3), default=2)
    p.add_argument("--gamma", type=float, default=demo.DEMO_GAMMA)
    p.add_argument("--transition-pct", type=float, nargs="*", default=[])
    p.add_argument("--reaction-sigma", type=float, nargs="*", default=[])
    p.add_argument("--episodes", type=int, default=200)
    p.add_argument("--tasks", type=int, default=48)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--initial-queue", type=int, default=1)
    p.add_argument("--missed-cue-prob", type=float, default=0.02)
    p.add_argument("--out", default="sensitivity_out")
    p.add_argument("--no-plots", action="store_true")
    _add_queue_reward_flags(p)
    p.set_defaults(func=cmd_sensitivity)

    p = sub.add_parser("compare", help="Welch t-test and Cohen's d for two score files")
    p.add_argument("--scores-a", required=True)
    p.add_argument("--scores-b", required=True)
    p.add_argument("--policy-a", default=None)
    p.add_argument("--policy-b", default=None)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("serve", help="run the live session service")
    p.add_argument("--config", required=True)
    p.add_argument("--host", default="127.0.0.1")
    p.set_defaults(func=cmd_serve)

    p = sub.add_parser("export", help="write the bundled demo artifacts")
    p.add_argument("--out", default="demo_out")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--traces", type=int, default=200)
    p.add_argument("--static-dir", default=None,
                   help="console asset dir to serve at /console (relative to --out)")
    p.add_argument("--no-plots", action="store_true")
    p.set_defaults(func=cmd_export)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.show_config:
            return show_config()
        if not getattr(args, "command", None):
            parser.print_help()
            return EXIT_USAGE
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataFormatError, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except ValueError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except KeyboardInterrupt:
        return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
