"""Command-line entry point: ``tierflow {validate,run,simulate,report,sweep}``.

Exit codes: 0 success, 1 invalid configuration or arguments, 2 backend
failure in at least one trajectory, 3 internal error.
"""

from __future__ import annotations

import argparse
import logging
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import yaml

from . import metrics
from .backends import BackendFailure, default_registry, load_lookup_fixture
from .config import ResolvedConfig, fixture_path, load_config_file, resolve
from .controller import ConfigError, run_trajectory
from .escalation import LinearBounded, Sigmoid, Static
from .simulator import (
    AlwaysLarge,
    AlwaysSmall,
    Collab,
    RandomPolicy,
    WorldModel,
    policy_from_dict,
    run_experiment,
)
from .trajectory import Termination, atomic_write_text, read_trajectory_log, write_trajectory_log

log = logging.getLogger("tierflow")

EXIT_OK, EXIT_VALIDATION, EXIT_BACKEND, EXIT_INTERNAL = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def __init__(self, *args, **kwargs):
        kwargs.setdefault("allow_abbrev", False)
        super().__init__(*args, **kwargs)

    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _csv_list(kind):
    def parse(text: str):
        return [kind(x) for x in text.split(",") if x.strip()]

    return parse


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", help="YAML run configuration file")
    common.add_argument("-v", "--verbose", action="store_true", help="print the resolved config (secrets redacted)")
    g = common.add_argument_group("run settings")
    g.add_argument("--max-iterations", type=int)
    g.add_argument("--warmup-budget", type=int, help="large-tier warm-up steps (K_L)")
    g.add_argument("--malformed-policy", choices=["TreatAsFalse", "RetryOnceThenFalse"])
    g.add_argument("--answer-marker")
    g.add_argument("--lenient-progress", action="store_const", const=True,
                   help="accept TRUE/FALSE in any letter case")
    s = common.add_argument_group("budget schedule")
    s.add_argument("--schedule", choices=["static", "linear", "sigmoid"])
    s.add_argument("--b0", type=int, help="base intervention budget")
    s.add_argument("--k", type=int, help="linear growth per escalation level")
    s.add_argument("--bmax", type=int, help="budget cap")
    s.add_argument("--alpha", type=float, help="sigmoid rate")
    s.add_argument("--beta", type=float, help="sigmoid midpoint level")
    b = common.add_argument_group("backends")
    b.add_argument("--backend-mode", choices=["separate", "single"])
    b.add_argument("--small-url")
    b.add_argument("--small-model")
    b.add_argument("--small-script", help="JSON script file for a scripted small tier")
    b.add_argument("--large-url")
    b.add_argument("--large-model")
    b.add_argument("--large-script", help="JSON script file for a scripted large tier")
    b.add_argument("--lookup-fixture", help="JSON key/value file backing the lookup tool")
    x = common.add_argument_group("execution")
    x.add_argument("--seed", type=int)
    x.add_argument("--workers", type=int)
    x.add_argument("--out", default="runs", help="output base directory")
    x.add_argument("--run-id", help="run directory name (default: timestamp-confighash)")

    sim = _Parser(add_help=False)
    sim.add_argument("--world", help="world YAML file (default: bundled benchmark world)")
    sim.add_argument("--trials", type=int)
    sim.add_argument("--max-steps", type=int)

    parser = _Parser(prog="tierflow", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    sub.add_parser("validate", parents=[common], help="check a configuration")
    p_run = sub.add_parser("run", parents=[common], help="run trajectories against model backends")
    p_run.add_argument("tasks", help="text file with one task per line")
    sub.add_parser("simulate", parents=[common, sim], help="compare policies in the simulator")
    p_rep = sub.add_parser("report", parents=[common], help="compute metrics from trajectory logs")
    p_rep.add_argument("logs", nargs="+", help="trajectory log files or directories; one summary each")
    p_rep.add_argument("--baseline", help="label of the summary used as speedup baseline")
    p_rep.add_argument("--quality", help="external score file keyed by trajectory id (JSON or CSV)")
    p_rep.add_argument("--exclude-warmup", action="store_true", help="drop warm-up steps from switching ratio")
    p_sw = sub.add_parser("sweep", parents=[common, sim], help="grid over schedule parameters")
    p_sw.add_argument("--k-values", type=_csv_list(int), help="comma-separated k grid")
    p_sw.add_argument("--alpha-values", type=_csv_list(float))
    p_sw.add_argument("--beta-values", type=_csv_list(float))
    p_sw.add_argument("--bmax-values", type=_csv_list(int))
    return parser


def resolve_args(args: argparse.Namespace) -> ResolvedConfig:
    from .config import FLAG_KEYS

    overrides = {name: getattr(args, name) for name in FLAG_KEYS if hasattr(args, name)}
    cfg = resolve(load_config_file(args.config), overrides)
    if args.verbose:
        sys.stderr.write(yaml.safe_dump(cfg.as_dict(redact=True), sort_keys=True))
    return cfg


def _run_dir(args, cfg: ResolvedConfig) -> Path:
    run_id = args.run_id or f"{time.strftime('%Y%m%d-%H%M%S')}-{cfg.config_hash}"
    path = Path(args.out) / run_id
    path.mkdir(parents=True, exist_ok=True)
    atomic_write_text(path / "config.yaml", yaml.safe_dump(cfg.as_dict(redact=True), sort_keys=True))
    return path


def _write_reports(out: Path, summaries: list) -> None:
    metrics.export_report(summaries, out / "report.csv", "csv")
    metrics.export_report(summaries, out / "report.jsonl", "jsonl")
    points = metrics.pareto_points(summaries)
    metrics.write_series(
        out / "pareto.csv",
        [(p.label, p.speedup, p.quality, int(p.dominated)) for p in points],
        header=("label", "speedup", "quality", "dominated"),
    )


def _print_table(summaries) -> None:
    print(f"{'policy':<16}{'success':>9}{'steps':>8}{'latency':>10}{'speedup':>9}{'switch':>9}{'switch%':>9}{'L-tok':>8}")
    for s in summaries:
        sp = "-" if s.speedup_vs_baseline is None else f"{s.speedup_vs_baseline:.3f}"
        sw = "-" if s.switching_ratio is None else f"{s.switching_ratio:.4f}"
        pct = "-" if s.switching_ratio is None else f"{100 * s.switching_ratio:.2f}"
        lt = "-" if s.large_token_ratio is None else f"{s.large_token_ratio:.3f}"
        print(f"{s.label:<16}{s.success_rate:>9.3f}{s.mean_steps:>8.2f}{s.mean_latency:>10.2f}{sp:>9}{sw:>9}{pct:>9}{lt:>8}")


# -- commands ------------------------------------------------------------


def cmd_validate(args, cfg: ResolvedConfig) -> int:
    print(f"config ok (hash {cfg.config_hash})")
    return EXIT_OK


def cmd_run(args, cfg: ResolvedConfig) -> int:
    try:
        tasks = [line.strip() for line in Path(args.tasks).read_text(encoding="utf-8").splitlines() if line.strip()]
    except OSError as exc:
        raise ConfigError("tasks", f"cannot read {args.tasks}: {exc}") from exc
    out = _run_dir(args, cfg)
    if not tasks:
        log.warning("tasks file %s is empty; nothing to run", args.tasks)
        return EXIT_OK
    table = load_lookup_fixture(cfg.lookup_fixture) if cfg.lookup_fixture else {}
    traj_dir = out / "trajectories"

    def one(item):
        i, task = item
        tid = f"task-{i:04d}"
        backends = (cfg.small.build("SMALL"), cfg.large.build("LARGE"))
        traj = run_trajectory(cfg.run, backends, task, trajectory_id=tid, tools=default_registry(table))
        write_trajectory_log(traj_dir / f"{tid}.jsonl", [traj], cfg.config_hash)
        return traj

    failed = False
    done = []
    with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
        for traj in pool.map(one, enumerate(tasks, 1)):
            done.append(traj)
            failed |= traj.termination is Termination.BACKEND_FAILURE
            answer = "" if traj.final_answer is None else f" answer={traj.final_answer!r}"
            print(f"{traj.id} {traj.termination.value} steps={len(traj.steps)} latency={traj.total_latency:.3f}{answer}",
                  flush=True)
    _write_reports(out, [metrics.summarize("run", done)])
    return EXIT_BACKEND if failed else EXIT_OK


def _load_world(path) -> WorldModel:
    try:
        return WorldModel.from_dict(load_config_file(path or fixture_path("default_world.yaml")))
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError("world", f"invalid world definition: {exc}") from exc


def _default_policies(cfg: ResolvedConfig) -> list:
    return [
        AlwaysSmall(),
        AlwaysLarge(),
        RandomPolicy(0.5),
        Collab(Static(cfg.run.schedule.base), cfg.run.warmup_budget, "collab-static"),
        Collab(cfg.run.schedule, cfg.run.warmup_budget, "collab"),
    ]


def cmd_simulate(args, cfg: ResolvedConfig) -> int:
    seed = cfg.require_seed()
    sim = cfg.raw["simulate"]
    world = _load_world(sim["world"])
    policies = [policy_from_dict(p) for p in sim["policies"]] if sim["policies"] else _default_policies(cfg)
    result = run_experiment(world, policies, sim["n_trials"], seed, sim["max_steps"], cfg.workers,
                            keep_trajectories=True)
    out = _run_dir(args, cfg)
    summaries = result.ordered()
    _write_reports(out, summaries)
    for label, trajs in result.trajectories.items():
        series = metrics.per_step_tps(trajs[0])
        metrics.write_series(out / f"series_{label}.csv",
                             [(i + 1, t, c) for i, (t, c) in enumerate(zip(series.tps, series.staircase))],
                             header=("step", "tps", "cumulative_latency"))
    _print_table(summaries)
    print(f"wrote {out}")
    return EXIT_OK


def sweep_policies(cfg: ResolvedConfig) -> list:
    grid = cfg.raw["sweep"]
    sched = cfg.run.schedule
    b0 = sched.base
    bmax_values = grid["bmax"] or [getattr(sched, "cap", 8)]
    warm = cfg.run.warmup_budget
    policies = [AlwaysSmall(), AlwaysLarge(), Collab(Static(b0), warm, f"static-b0={b0}")]
    for bmax in bmax_values:
        for k in grid["k"]:
            policies.append(Collab(LinearBounded(b0, int(k), int(bmax)), warm, f"linear-k={k}-bmax={bmax}"))
        alphas, betas = grid["alpha"], grid["beta"]
        if alphas or betas:
            for a in alphas or [getattr(sched, "rate", 1.0)]:
                for b in betas or [getattr(sched, "midpoint", 2.0)]:
                    policies.append(Collab(Sigmoid(b0, int(bmax), float(a), float(b)), warm,
                                           f"sigmoid-a={a}-b={b}-bmax={bmax}"))
    return policies


def cmd_sweep(args, cfg: ResolvedConfig) -> int:
    seed = cfg.require_seed()
    sim = cfg.raw["simulate"]
    world = _load_world(sim["world"])
    try:
        policies = sweep_policies(cfg)
    except ValueError as exc:
        raise ConfigError(getattr(exc, "key", "sweep"), str(exc)) from exc
    result = run_experiment(world, policies, sim["n_trials"], seed, sim["max_steps"], cfg.workers)
    out = _run_dir(args, cfg)
    summaries = result.ordered()
    _write_reports(out, summaries)
    rows = []
    for p in policies:
        if isinstance(p, Collab) and isinstance(p.schedule, LinearBounded):
            s = result.summaries[p.label]
            rows.append((p.schedule.growth, p.schedule.cap, s.speedup_vs_baseline, s.quality_score, s.switching_ratio))
    metrics.write_series(out / "ksweep.csv", rows, header=("k", "bmax", "speedup", "quality", "switching_ratio"))
    _print_table(summaries)
    print(f"wrote {out}")
    return EXIT_OK


def _collect_logs(path: Path) -> list:
    if path.is_dir():
        trajs = []
        for f in sorted(path.rglob("*.jsonl")):
            trajs.extend(read_trajectory_log(f))
        return trajs
    return read_trajectory_log(path)


def cmd_report(args, cfg: ResolvedConfig) -> int:
    groups = {}
    for p in args.logs:
        path = Path(p)
        label = path.name if path.is_dir() else path.stem
        groups[label] = _collect_logs(path)
    scores = metrics.load_quality_scores(args.quality) if args.quality else None
    base = None
    if args.baseline:
        if args.baseline not in groups:
            raise ConfigError("baseline", f"no log group labelled {args.baseline!r}; have {sorted(groups)}")
        base = sum(t.total_latency for t in groups[args.baseline])
    summaries = [
        metrics.summarize(label, trajs, base, scores, exclude_warmup=args.exclude_warmup)
        for label, trajs in groups.items()
    ]
    out = _run_dir(args, cfg)
    _write_reports(out, summaries)
    _print_table(summaries)
    print(f"wrote {out}")
    return EXIT_OK


COMMANDS = {
    "validate": cmd_validate,
    "run": cmd_run,
    "simulate": cmd_simulate,
    "report": cmd_report,
    "sweep": cmd_sweep,
}


def main(argv=None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        args = build_parser().parse_args(argv)
        cfg = resolve_args(args)
        return COMMANDS[args.command](args, cfg)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except ConfigError as exc:
        print(f"invalid configuration: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except BackendFailure as exc:
        print(f"backend failure: {exc}", file=sys.stderr)
        return EXIT_BACKEND
    except Exception as exc:  # noqa: BLE001
        log.exception("internal error")
        print(f"internal error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
