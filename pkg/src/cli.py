#!/usr/bin/env python3
# Copyright 2026 The randgrasp authors
# See LICENSE file for licensing details.

"""Command-line entry points: generate, train, eval, preview, ablate, stats.

Exit codes: 0 success, 1 runtime failure, 2 usage error.
"""

import argparse
import logging
import sys
import time
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional

from pydantic import BaseModel, Field

import evalharness
from dataset import DatasetReader, dataset_stats, dump_stats, episode_seed, generate
from net import load_checkpoint, save_checkpoint, train
from randgrasp_config import (
    ENGINE_VERSION,
    NetConfig,
    RandgraspError,
    RandomisationConfig,
    TestCondition,
    TrainConfig,
    budget_for,
    config_digest,
    dump_document,
)
from render import render_scene, write_ppm
from scene import load_randomisation_config, sample_scene

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_USAGE = 2
CONFIG_DIR = Path(__file__).parent / "configs"
DEFAULT_CONFIG = CONFIG_DIR / "default.cfg"
EVAL_CONFIG = CONFIG_DIR / "eval.cfg"
MANIFEST_SUFFIX = ".manifest.yaml"
MANIFEST_HEADER = "RANDGRASP-MANIFEST v1"
REPORT_HEADER = "RANDGRASP-REPORT v1"
PROFILES = ("desk", "paper")


class UsageError(Exception):
    """Invalid command-line input detected after parsing."""


class RunManifest(BaseModel):
    """Provenance record written next to every artifact a command produces."""

    command: str
    argv: List[str]
    engine_version: str = ENGINE_VERSION
    profile: str = "desk"
    configs: Dict[str, Any] = Field(default_factory=dict)
    config_hashes: Dict[str, str] = Field(default_factory=dict)
    seeds: Dict[str, int] = Field(default_factory=dict)
    inputs: Dict[str, str] = Field(default_factory=dict)
    artifacts: Dict[str, str] = Field(default_factory=dict)
    started_at: str
    duration_s: float = 0.0


def manifest_path(artifact: Path) -> Path:
    artifact = Path(artifact)
    return artifact.with_name(artifact.name + MANIFEST_SUFFIX)


class _Run:
    """Collects manifest fields while a command executes."""

    def __init__(self, args: argparse.Namespace, argv: List[str]):
        self.started = time.monotonic()
        self.manifest = RunManifest(
            command=args.command,
            argv=argv,
            profile=args.profile,
            started_at=datetime.now(timezone.utc).isoformat(timespec="seconds"),
        )

    def config(self, name: str, model: BaseModel) -> None:
        self.manifest.configs[name] = model.model_dump(mode="json")
        self.manifest.config_hashes[name] = config_digest(model).hex()

    def write(self, artifact: Path) -> Path:
        self.manifest.duration_s = round(time.monotonic() - self.started, 3)
        path = manifest_path(artifact)
        path.write_text(dump_document(self.manifest, MANIFEST_HEADER))
        logger.info("wrote manifest %s", path)
        return path


def _existing(path: Optional[str], what: str) -> Path:
    if path is None or not Path(path).exists():
        raise UsageError(f"{what} {path!r} does not exist")
    return Path(path)


def _randomisation(path: Optional[str], default: Path, profile: str) -> RandomisationConfig:
    cfg = load_randomisation_config(_existing(path, "config") if path else default)
    resolution = NetConfig.for_profile(profile).input_resolution
    return cfg.model_copy(update={"image_resolution": resolution})


def cmd_generate(args: argparse.Namespace, run: _Run) -> int:
    cfg = _randomisation(args.config, DEFAULT_CONFIG, args.profile)
    if args.episodes < 1 or args.workers < 1:
        raise UsageError("episodes and workers must be positive")
    out = Path(args.out)
    summary = generate(cfg, args.episodes, args.workers, args.seed, out)
    run.config("randomisation", cfg)
    run.manifest.seeds["master"] = args.seed
    run.manifest.inputs["config"] = str(args.config)
    run.manifest.artifacts["dataset"] = str(out)
    run.write(out)
    print(
        f"{out}: {summary.episodes} episodes, {summary.steps} steps "
        f"({summary.attempts} attempts, {summary.discarded} discarded)"
    )
    return EXIT_OK


def cmd_train(args: argparse.Namespace, run: _Run) -> int:
    dataset = _existing(args.dataset, "dataset")
    net_cfg = NetConfig.for_profile(
        args.profile,
        use_lstm=not args.no_lstm,
        use_auxiliary=not args.no_auxiliary,
        use_joint_angles=not args.no_joint_angles,
    )
    train_cfg = TrainConfig(
        learning_rate=args.lr,
        batch_size=args.batch_size,
        epochs=args.epochs,
        steps=args.steps,
        seed=args.seed,
        prefetch=args.prefetch,
    )
    resume = load_checkpoint(_existing(args.resume, "checkpoint")) if args.resume else None
    out = Path(args.out)
    with DatasetReader(dataset) as reader:
        dataset_hash = reader.config_hash.hex()
    result = train(
        dataset, net_cfg, train_cfg, resume=resume, manifest=manifest_path(out).name
    )
    save_checkpoint(result.checkpoint, out)
    run.config("net", net_cfg)
    run.config("train", train_cfg)
    run.manifest.config_hashes["dataset"] = dataset_hash
    run.manifest.seeds["train"] = args.seed
    run.manifest.inputs["dataset"] = str(dataset)
    if args.resume:
        run.manifest.inputs["resume"] = str(args.resume)
    run.manifest.artifacts["checkpoint"] = str(out)
    run.write(out)
    final = result.loss_curve[-1] if result.loss_curve else float("nan")
    print(f"{out}: {len(result.loss_curve)} steps, final loss {final:.5f}")
    return EXIT_OK


def _controller_reference(args: argparse.Namespace) -> str:
    if args.oracle:
        return "oracle"
    if args.zero:
        return "zero"
    return str(_existing(args.checkpoint, "checkpoint"))


def cmd_eval(args: argparse.Namespace, run: _Run) -> int:
    controller = _controller_reference(args)
    cfg = _randomisation(args.config, EVAL_CONFIG, args.profile)
    report = evalharness.run_grid(
        controller,
        eval_seed=args.eval_seed,
        cfg=cfg,
        condition=TestCondition(args.condition),
        max_steps=args.max_steps,
        workers=args.workers,
        frame_dir=args.frames,
    )
    print(f"{'Cube vicinity':>14} {'Cube grasped':>13} {'Full task':>10}")
    print(
        f"{report.cube_vicinity:13.1f}% {report.cube_grasped:12.1f}% {report.full_task:9.1f}%"
        f"   ({report.trials} trials)"
    )
    if args.out:
        out = Path(args.out)
        out.write_text(dump_document(report, REPORT_HEADER))
        run.config("evaluation", cfg)
        run.manifest.seeds["eval"] = args.eval_seed
        run.manifest.inputs["controller"] = controller
        run.manifest.artifacts["report"] = str(out)
        run.write(out)
    return EXIT_OK


def cmd_preview(args: argparse.Namespace, run: _Run) -> int:
    cfg = _randomisation(args.config, DEFAULT_CONFIG, args.profile)
    if args.count < 1:
        raise UsageError("count must be positive")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for index in range(args.count):
        scene = sample_scene(cfg, episode_seed(args.seed, index))
        path = out / f"scene_{index:03d}.ppm"
        write_ppm(render_scene(scene), path)
        run.manifest.artifacts[f"scene_{index:03d}"] = str(path)
    run.config("randomisation", cfg)
    run.manifest.seeds["master"] = args.seed
    run.manifest.inputs["config"] = str(args.config)
    run.write(out)
    print(f"{out}: {args.count} scenes")
    return EXIT_OK


def cmd_ablate(args: argparse.Namespace, run: _Run) -> int:
    budget = budget_for(args.budget)
    rows = tuple(r.strip() for r in args.rows.split(",") if r.strip())
    unknown = [r for r in rows if r not in evalharness.ROW_NAMES]
    if unknown or not rows:
        names = ", ".join(evalharness.ROW_NAMES)
        raise UsageError(f"unknown rows {unknown}; choose from {names}")
    try:
        conditions = tuple(TestCondition(c.strip()) for c in args.conditions.split(","))
    except ValueError as e:
        raise UsageError(str(e)) from None
    if args.profile != budget.profile:
        budget = budget.model_copy(update={"profile": args.profile})
    matrix = evalharness.MatrixConfig(
        rows=rows,
        conditions=conditions,
        train_config=load_randomisation_config(
            _existing(args.config, "config") if args.config else DEFAULT_CONFIG
        ),
        eval_config=load_randomisation_config(
            _existing(args.eval_config, "config") if args.eval_config else EVAL_CONFIG
        ),
        seed=args.seed,
        eval_seed=args.eval_seed,
        sweep=not args.no_sweep,
    )
    workdir = Path(args.out)
    result = evalharness.run_ablation_matrix(matrix, budget, workdir)
    print(evalharness.format_table(result))
    document = workdir / "ablation.yaml"
    document.write_text(dump_document(result, REPORT_HEADER))
    run.config("matrix", matrix)
    run.config("budget", budget)
    run.manifest.seeds.update(master=args.seed, eval=args.eval_seed)
    run.manifest.artifacts["report"] = str(document)
    run.write(document)
    failed = [row.train for row in result.rows if row.error]
    return EXIT_FAILURE if failed and len(failed) == len(result.rows) else EXIT_OK


def cmd_stats(args: argparse.Namespace, run: _Run) -> int:
    stats = dataset_stats(_existing(args.dataset, "dataset"))
    text = dump_stats(stats)
    if args.out:
        Path(args.out).write_text(text)
    else:
        print(text, end="")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="randgrasp", description="Domain-randomised pick-and-drop data, training and trials."
    )
    parser.add_argument(
        "--profile", choices=PROFILES, default="desk", help="resolution/depth preset"
    )
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    def command(name: str, handler: Callable, summary: str) -> argparse.ArgumentParser:
        p = sub.add_parser(name, help=summary)
        p.set_defaults(handler=handler)
        return p

    p = command("generate", cmd_generate, "record scripted demonstrations")
    p.add_argument("-c", "--config", required=True, help="randomisation config")
    p.add_argument("-n", "--episodes", type=int, default=100)
    p.add_argument("-j", "--workers", type=int, default=1)
    p.add_argument("-s", "--seed", type=int, default=0)
    p.add_argument("-o", "--out", required=True, help="dataset file")

    p = command("train", cmd_train, "fit a controller on a dataset")
    p.add_argument("-d", "--dataset", required=True)
    p.add_argument("-o", "--out", required=True, help="checkpoint file")
    p.add_argument("--steps", type=int, default=None, help="optimizer steps (overrides epochs)")
    p.add_argument("--epochs", type=int, default=1)
    p.add_argument("--batch-size", type=int, default=16)
    p.add_argument("--lr", type=float, default=1e-4)
    p.add_argument("-s", "--seed", type=int, default=0)
    p.add_argument("--prefetch", action="store_true")
    p.add_argument("--resume", help="checkpoint to continue from")
    p.add_argument("--no-lstm", action="store_true")
    p.add_argument("--no-auxiliary", action="store_true")
    p.add_argument("--no-joint-angles", action="store_true")

    p = command("eval", cmd_eval, "run the 32-trial grid")
    who = p.add_mutually_exclusive_group(required=True)
    who.add_argument("--oracle", action="store_true", help="scripted demonstrator")
    who.add_argument("--zero", action="store_true", help="inert controller")
    who.add_argument("--checkpoint", help="trained controller")
    p.add_argument("-c", "--config", help="evaluation randomisation config")
    p.add_argument("--eval-seed", type=int, default=0)
    p.add_argument(
        "--condition", choices=[c.value for c in TestCondition], default="standard"
    )
    p.add_argument("--max-steps", type=int, default=evalharness.MAX_STEPS)
    p.add_argument("-j", "--workers", type=int, default=1)
    p.add_argument("--frames", help="directory for per-step frames")
    p.add_argument("-o", "--out", help="report document")

    p = command("preview", cmd_preview, "render sampled scenes")
    p.add_argument("-c", "--config", required=True)
    p.add_argument("-n", "--count", type=int, default=9)
    p.add_argument("-s", "--seed", type=int, default=0)
    p.add_argument("-o", "--out", required=True, help="output directory")

    p = command("ablate", cmd_ablate, "run the ablation matrix")
    p.add_argument("--rows", default=",".join(evalharness.ROW_NAMES))
    p.add_argument("--budget", choices=("tiny", "desk", "paper"), default="desk")
    p.add_argument("--conditions", default="standard")
    p.add_argument("-c", "--config", help="training randomisation config")
    p.add_argument("--eval-config", help="evaluation randomisation config")
    p.add_argument("-s", "--seed", type=int, default=0)
    p.add_argument("--eval-seed", type=int, default=1)
    p.add_argument("--no-sweep", action="store_true")
    p.add_argument("-o", "--out", default="ablation", help="working directory")

    p = command("stats", cmd_stats, "summarize a dataset")
    p.add_argument("-d", "--dataset", required=True)
    p.add_argument("-o", "--out", help="write YAML here instead of standard output")
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_USAGE if e.code else EXIT_OK
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    run = _Run(args, argv)
    try:
        return args.handler(args, run)
    except UsageError as e:
        parser.print_usage(sys.stderr)
        print(f"{parser.prog} {args.command}: error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (RandgraspError, OSError) as e:
        logger.error("%s failed: %s", args.command, e)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
