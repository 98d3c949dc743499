"""``ann`` command line.

Exit status: 0 on success, 1 when some task failed to run or be judged,
2 on configuration or input errors. Everything printed is also written to the
run directory.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Any

from .config import ProjectConfig, build_session, load_config, parse_config
from .errors import AnnError, ConfigInvalid, PathExists
from .forward import TaskInstance
from .graph import validate_block
from .project import init_project, inspect_run
from .serialize import load_network, save_network
from .training import load_tasks

EXIT_OK, EXIT_TASK_FAILURES, EXIT_CONFIG = 0, 1, 2

_TOGGLE_NAMES = {"momentum": "momentum", "perf": "performance_validation", "backward": "backward"}


def _common(p: argparse.ArgumentParser, *, training: bool = False) -> None:
    p.add_argument("--config", help="project config file (JSON)")
    p.add_argument("--network", help="network file; overrides the config")
    p.add_argument("--backend", choices=("live", "scripted"))
    p.add_argument("--script", help="scripted-oracle rules file or builtin:<name>")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help="run directory (must be new or empty)")
    if training:
        p.add_argument("--epochs", type=int)
        p.add_argument(
            "--toggle-off", action="append", default=[], choices=sorted(_TOGGLE_NAMES),
            help="disable a training feature; repeatable",
        )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ann", description="Train and run layered agent-team networks.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("init", help="scaffold a new project")
    p.add_argument("path")
    p.add_argument("--template", choices=("starter", "arithmetic"), default="starter")

    p = sub.add_parser("run", help="one forward pass on a single task")
    _common(p)
    p.add_argument("--task", required=True, help="task prompt")
    p.add_argument("--data", help="task data passed to the first layer")
    p.add_argument("--ground-truth", help="judge the final output against this answer")
    p.add_argument("--task-id", default="task")

    p = sub.add_parser("train", help="run the training loop")
    _common(p, training=True)

    p = sub.add_parser("eval", help="evaluate a network without training")
    _common(p)
    p.add_argument("--split", choices=("validation", "train"), default="validation")

    p = sub.add_parser("inspect", help="show pool growth and block lineage of a run")
    p.add_argument("run_dir")
    p.add_argument("--json", action="store_true", help="print machine-readable output")
    return parser


# -- configuration -----------------------------------------------------------


def _abs(value: str) -> str:
    return value if value.startswith("builtin:") else str(Path(value).resolve())


def resolve_config(args: argparse.Namespace) -> ProjectConfig:
    """The config file, if any, with command-line overrides applied."""
    if args.config:
        base = load_config(args.config)
        obj, base_dir = base.model_dump(), base.base_dir
    elif args.network:
        obj, base_dir = {"network": _abs(args.network)}, Path.cwd()
    else:
        raise ConfigInvalid(["--config or --network is required"])
    if args.network:
        obj["network"] = _abs(args.network)
    backend = obj.setdefault("backend", {})
    if args.backend:
        backend["kind"] = args.backend
    if args.script:
        backend["script"] = _abs(args.script)
        backend.setdefault("kind", "scripted")
    if args.seed is not None:
        obj["seed"] = args.seed
    if getattr(args, "epochs", None) is not None:
        obj["epochs"] = args.epochs
    for name in getattr(args, "toggle_off", []):
        obj.setdefault("toggles", {})[_TOGGLE_NAMES[name]] = False
    return parse_config(obj, base_dir)


def _run_dir(args: argparse.Namespace, cfg: ProjectConfig, command: str) -> Path:
    if args.out:
        out = Path(args.out)
        if out.exists() and any(out.iterdir()):
            raise PathExists(f"run directory {out} is not empty")
        out.mkdir(parents=True, exist_ok=True)
        return out
    runs = cfg.path(cfg.runs_dir)
    runs.mkdir(parents=True, exist_ok=True)
    n = 1
    while (runs / f"{command}-{n}").exists():
        n += 1
    out = runs / f"{command}-{n}"
    out.mkdir()
    return out


def _load_network(cfg: ProjectConfig):
    path = cfg.path(cfg.network)
    try:
        network = load_network(path)
    except FileNotFoundError:
        raise ConfigInvalid([f"network: {path} not found"]) from None
    except (ValueError, KeyError, TypeError) as e:
        raise ConfigInvalid([f"network: {path}: {e}"]) from None
    problems = []
    for layer in network.layers:
        for block in layer.pool:
            others = [b for b in layer.pool if b.block_id != block.block_id]
            report = validate_block(block, others)
            problems += [f"network: layer {layer.layer_index} {block.name}: {f.check.value}: {f.detail}"
                         for f in report.failures]
    if problems:
        raise ConfigInvalid(problems)
    return network


def _load_split(cfg: ProjectConfig, which: str) -> list[TaskInstance]:
    value = getattr(cfg, which)
    if not value:
        raise ConfigInvalid([f"{which}: no dataset configured"])
    try:
        return load_tasks(cfg.path(value))
    except FileNotFoundError:
        raise ConfigInvalid([f"{which}: {cfg.path(value)} not found"]) from None
    except (ValueError, KeyError, TypeError) as e:
        raise ConfigInvalid([f"{which}: {e}"]) from None


def _write_json(path: Path, obj: Any) -> None:
    path.write_text(json.dumps(obj, indent=2, ensure_ascii=False, sort_keys=True) + "\n", encoding="utf-8")


# -- commands ----------------------------------------------------------------


def cmd_init(args: argparse.Namespace) -> int:
    layout = init_project(args.path, args.template)
    print(f"created project in {layout.root}")
    return EXIT_OK


def cmd_run(args: argparse.Namespace) -> int:
    cfg = resolve_config(args)
    network = _load_network(cfg)
    session = build_session(cfg)
    out = _run_dir(args, cfg, "run")
    task = TaskInstance(args.task_id, args.task, args.data, args.ground_truth)
    summary: dict[str, Any] = {"task_id": task.task_id}
    try:
        traj = session.forward.run_forward(network, task)
    except AnnError as e:
        summary["error"] = f"{type(e).__name__}: {e}"
        _write_json(out / "run.json", summary)
        print(f"forward pass failed: {summary['error']}", file=sys.stderr)
        return EXIT_TASK_FAILURES
    traj.save(out)
    for lr in traj.layer_records:
        block = network.layers[lr.layer_index].block(lr.selected_block_id)
        print(f"layer {lr.layer_index}: {block.name} ({len(lr.node_records)} node(s))")
    for ev in traj.events:
        print(f"routing fallback at layer {ev.layer_index}: {ev.reason} -> block {ev.chosen_block_id}")
    print(f"final output: {traj.final_output}")
    summary.update(
        final_output=traj.final_output,
        blocks=[lr.selected_block_id for lr in traj.layer_records],
        routing_fallbacks=len(traj.events),
    )
    status = EXIT_OK
    if task.ground_truth is not None:
        outcome = session.judge.evaluate(task, traj.final_output)
        summary["evaluation"] = outcome.to_dict()
        print(f"judged: {'pass' if outcome.passed else 'fail'}")
        if outcome.error:
            status = EXIT_TASK_FAILURES
    _write_json(out / "run.json", summary)
    return status


def cmd_train(args: argparse.Namespace) -> int:
    cfg = resolve_config(args)
    network = _load_network(cfg)
    train, validation = _load_split(cfg, "train"), _load_split(cfg, "validation")
    session = build_session(cfg)
    out = _run_dir(args, cfg, "train")
    trainer = session.trainer(out)
    final, history = trainer.train(network, train, validation)
    save_network(final, out / "final.network.json")
    print(f"{'epoch':>5} {'train':>8} {'valid':>8} {'pools':>12} {'acc':>4} {'rej':>4}")
    for m in history:
        print(f"{m.epoch:>5} {m.train_metric:>8.4f} {m.validation_metric:>8.4f} "
              f"{str(m.pool_sizes):>12} {m.accepted_updates:>4} {m.rejected_updates:>4}")
    print(f"run directory: {out}")
    return EXIT_TASK_FAILURES if any(m.task_failures for m in history) else EXIT_OK


def cmd_eval(args: argparse.Namespace) -> int:
    cfg = resolve_config(args)
    network = _load_network(cfg)
    tasks = _load_split(cfg, args.split)
    session = build_session(cfg)
    out = _run_dir(args, cfg, "eval")
    trainer = session.trainer(out)
    outcomes = trainer.evaluate_outcomes(network, tasks)
    from .evaluation import dataset_metric

    metric = dataset_metric(outcomes)
    failures = sum(1 for o in outcomes if o.error)
    _write_json(
        out / "eval.json",
        {
            "split": args.split,
            "metric": metric,
            "task_failures": failures,
            "outcomes": {t.task_id: o.to_dict() for t, o in zip(tasks, outcomes)},
        },
    )
    print(f"{args.split} metric: {metric:.4f} over {len(tasks)} task(s); {failures} failure(s)")
    return EXIT_TASK_FAILURES if failures else EXIT_OK


def cmd_inspect(args: argparse.Namespace) -> int:
    try:
        info = inspect_run(args.run_dir)
    except FileNotFoundError as e:
        raise ConfigInvalid([str(e)]) from None
    if args.json:
        print(json.dumps(info, indent=2, sort_keys=True))
        return EXIT_OK
    print("pool growth")
    print(f"{'epoch':>5} {'pools':>14} {'revision':>8} {'accepted':>8} {'rejected':>8}")
    for h in info["history"]:
        print(f"{h['epoch']:>5} {str(h['pool_sizes']):>14} {h['revision']:>8} "
              f"{h['accepted_updates']:>8} {h['rejected_updates']:>8}")
    print(f"\nblock lineage ({len(info['lineage'])} accepted)")
    for e in info["lineage"]:
        edges = ", ".join(f"{a}->{b}" for a, b in e["edges"]) or "-"
        print(f"step {e['step']:>3}  layer {e['layer_index']}  {e['name']} <- {e['parent']}  "
              f"nodes {e['nodes']}  edges {edges}")
    return EXIT_OK


COMMANDS = {"init": cmd_init, "run": cmd_run, "train": cmd_train, "eval": cmd_eval, "inspect": cmd_inspect}


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return COMMANDS[args.command](args)
    except ConfigInvalid as e:
        print("configuration error:", file=sys.stderr)
        for problem in e.problems:
            print(f"  {problem}", file=sys.stderr)
        return EXIT_CONFIG
    except PathExists as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
