"""Command-line entry point: ``ardloop synth|run|eval|report``.

Exit codes: 0 ok, 2 configuration error, 3 runtime precondition error,
4 missing or incomplete artifacts.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

from ardloop.core import DimensionError, l2_normalize
from ardloop.io import (
    ArtifactError,
    ConfigError,
    atomic_write_text,
    csv_text,
    read_config,
    read_dataset,
    section_to_dataclass,
    write_dataset,
    write_json,
)
from ardloop.learner import LearnerConfig, embed_all, load_model, save_model
from ardloop.orchestrator import (
    EXTRA_COLUMNS,
    ITERATION_COLUMNS,
    CheckpointError,
    RunConfig,
    SelfTrainingRun,
    load_checkpoint,
    reid_metrics,
)
from ardloop.sampling import SamplerConfig
from ardloop.synthworld import WorldConfig, generate, split_one_example, split_ratio

log = logging.getLogger("ardloop")

EXIT_CONFIG = 2
EXIT_RUNTIME = 3
EXIT_ARTIFACT = 4

DATASET_FORMAT = "ardloop-dataset"
REPORT_TRACE_COLUMNS = ["iteration", "phase", "k", "selected", "train_size", "pseudo_acc", "rank1", "map"]
REPORT_PER_K_COLUMNS = ["k", "iterations", "count_entry", "count_exit", "first_iteration", "last_iteration", "map_exit"]


class CliError(Exception):
    def __init__(self, message, code):
        super().__init__(message)
        self.code = code


# -- config loading --------------------------------------------------------


def load_world_config(path) -> WorldConfig:
    parser = read_config(path)
    if not parser.has_section("world"):
        raise ConfigError("missing section [world]")
    return section_to_dataclass(parser, "world", WorldConfig, required=("n_identities", "seed"))


def load_run_config(path) -> tuple[RunConfig, dict]:
    """Parse a run config into a ``RunConfig`` plus the split settings."""
    parser = read_config(path)
    if not parser.has_section("run"):
        raise ConfigError("missing section [run]")
    split = {"split": "one-example", "split_ratio": 0.2}
    for key in ("split", "split_ratio"):
        if parser.has_option("run", key):
            split[key] = parser.get("run", key).strip()
            parser.remove_option("run", key)
    if split["split"] not in ("one-example", "ratio"):
        raise ConfigError(f"run.split must be 'one-example' or 'ratio', got {split['split']!r}")
    try:
        split["split_ratio"] = float(split["split_ratio"])
    except ValueError:
        raise ConfigError(f"bad value for 'run.split_ratio': {split['split_ratio']!r}") from None
    learner = section_to_dataclass(parser, "learner", LearnerConfig)
    sampler = section_to_dataclass(parser, "sampler", SamplerConfig)
    cfg = section_to_dataclass(
        parser, "run", RunConfig, required=("strategy",),
        overrides={"learner": learner, "sampler": sampler},
    )
    return cfg, split


def make_split(dataset, cfg: RunConfig, split: dict):
    if split["split"] == "ratio":
        return split_ratio(dataset, split["split_ratio"], cfg.seed)
    return split_one_example(dataset, cfg.seed)


# -- commands --------------------------------------------------------------


def cmd_synth(args) -> None:
    cfg = load_world_config(args.config)
    tracklets = generate(cfg)
    out = Path(args.out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise CliError(f"cannot create {out}: {exc}", EXIT_CONFIG) from exc
    manifest = {
        "format": DATASET_FORMAT,
        "version": 1,
        "world": cfg.to_dict(),
        "seed": cfg.seed,
        "counts": {
            "tracklets": len(tracklets),
            "identities": cfg.n_identities,
            "cameras": cfg.n_cameras,
            "distractors": cfg.distractor_count,
        },
    }
    write_dataset(out, tracklets, manifest)
    print(f"wrote {len(tracklets)} tracklets to {out}")


def iterations_csv(records) -> str:
    return csv_text(ITERATION_COLUMNS, [r.row() for r in records])


def iterations_extra_csv(records) -> str:
    cols = ["iteration"] + EXTRA_COLUMNS
    return csv_text(cols, [r.row(cols) for r in records])


def write_run_outputs(out: Path, runner: SelfTrainingRun, split: dict) -> dict:
    res = runner.result()
    atomic_write_text(out / "iterations.csv", iterations_csv(res.records))
    atomic_write_text(out / "iterations_extra.csv", iterations_extra_csv(res.records))
    save_model(res.model, out / "model.bin", out / "model.json")
    last = res.records[-1]
    summary = {
        "reason": res.reason,
        "strategy": runner.cfg.strategy,
        "split": split,
        "config": runner.cfg.to_dict(),
        "n_labeled": len(res.labelbook.labeled),
        "n_unlabeled": runner.M,
        "n_pseudo_final": len(res.labelbook.pseudo),
        "selection_iterations": sum(r.phase == "select" for r in res.records),
        "k_visited": [str(k) for k in runner.state.ard.visited] if runner.state.ard else [],
        "initial_pseudo_acc": res.initial_accuracy,
        "final_pseudo_acc": res.final_accuracy,
        "final": {"train_size": last.train_size, "rank1": last.rank1, "map": last.map},
    }
    write_json(out / "result.json", summary)
    return summary


def cmd_run(args) -> None:
    cfg, split = load_run_config(args.run_config)
    if args.no_timing:
        cfg = replace(cfg, record_timing=False)
    dataset = read_dataset(args.dataset_dir)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    try:
        if args.resume:
            runner = load_checkpoint(args.resume, dataset, cfg=cfg)
        else:
            runner = SelfTrainingRun(dataset, make_split(dataset, cfg, split), cfg)
        ckpt_dir = out / "checkpoints" if args.checkpoint_every else None
        runner.run_to_end(args.checkpoint_every, ckpt_dir)
    except CheckpointError as exc:
        raise CliError(str(exc), EXIT_ARTIFACT) from exc
    except (ValueError, DimensionError) as exc:
        raise CliError(str(exc), EXIT_RUNTIME) from exc
    summary = write_run_outputs(out, runner, split)
    print(f"{summary['reason']}: {summary['selection_iterations']} selection iterations, "
          f"rank1={summary['final']['rank1']}, map={summary['final']['map']}")


def cmd_eval(args) -> None:
    dataset = read_dataset(args.dataset_dir)
    model_path = Path(args.model)
    header_path = model_path.with_suffix(".json")
    if not model_path.is_file() or not header_path.is_file():
        raise ArtifactError(f"model files {model_path} / {header_path} not found")
    try:
        model = load_model(model_path, header_path)
        emb = embed_all(model, dataset)
    except (ValueError, DimensionError) as exc:
        raise CliError(f"cannot evaluate: {exc}", EXIT_RUNTIME) from exc
    if args.normalize:
        emb = l2_normalize(emb)
    probe_camera = None
    if args.split != "default":
        if not args.split.startswith("cam"):
            raise CliError(f"--split must be 'default' or camN, got {args.split!r}", EXIT_CONFIG)
        probe_camera = int(args.split[3:])
    try:
        metrics = reid_metrics(emb, dataset, probe_camera)
    except ValueError as exc:
        raise CliError(str(exc), EXIT_RUNTIME) from exc
    if not metrics:
        raise CliError("no probe has a cross-camera match; nothing to evaluate", EXIT_RUNTIME)
    out = Path(args.out) if args.out else model_path.parent / "metrics.json"
    write_json(out, {k: metrics[k] for k in ("rank1", "rank5", "rank10", "rank20", "map")})
    print(json.dumps(metrics, sort_keys=True))


def _read_iterations(run_dir: Path) -> list[dict]:
    path = run_dir / "iterations.csv"
    if not path.is_file() or not (run_dir / "result.json").is_file():
        raise ArtifactError(f"{run_dir} is not a completed run (iterations.csv/result.json missing)")
    with path.open(newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or reader.fieldnames != ITERATION_COLUMNS:
            raise ArtifactError(f"{path} has unexpected columns {reader.fieldnames}")
        rows = list(reader)
    if not rows:
        raise ArtifactError(f"{path} has no rows")
    extra = run_dir / "iterations_extra.csv"
    if extra.is_file():
        with extra.open(newline="") as fh:
            by_iter = {r["iteration"]: r for r in csv.DictReader(fh)}
        for r in rows:
            r.update(by_iter.get(r["iteration"], {}))
    return rows


def per_k_summary(rows: list[dict]) -> list[list]:
    """One row per k value visited by selection iterations, in visiting order."""
    out = []
    for r in rows:
        if r.get("phase", "select") != "select" or r["k"] == "":
            continue
        if out and out[-1][0] == r["k"]:
            cur = out[-1]
            cur[1] += 1
            cur[3] = int(r["selected"])
            cur[5] = int(r["iteration"])
            cur[6] = r["map"]
        else:
            out.append([r["k"], 1, int(r["selected"]), int(r["selected"]), int(r["iteration"]), int(r["iteration"]), r["map"]])
    return out


def cmd_report(args) -> None:
    run_dir = Path(args.run_dir)
    rows = _read_iterations(run_dir)
    out = Path(args.out) if args.out else run_dir / "report"
    per_k = per_k_summary(rows)
    atomic_write_text(out / "per_k.csv", csv_text(REPORT_PER_K_COLUMNS, per_k))
    trace = [[r.get(c, "") for c in REPORT_TRACE_COLUMNS] for r in rows]
    atomic_write_text(out / "trace.csv", csv_text(REPORT_TRACE_COLUMNS, trace))
    print(f"{len(per_k)} k values, {len(rows)} iterations -> {out}")


# -- entry point -----------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ardloop", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic dataset directory")
    p.add_argument("config", help="INI file with a [world] section")
    p.add_argument("out_dir")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("run", help="run the self-training loop on a dataset")
    p.add_argument("dataset_dir")
    p.add_argument("run_config", help="INI file with [run], [learner], [sampler] sections")
    p.add_argument("out_dir")
    p.add_argument("--checkpoint-every", type=int, default=0, metavar="N")
    p.add_argument("--resume", metavar="CHECKPOINT")
    p.add_argument("--no-timing", action="store_true", help="write 0 in the seconds column")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("eval", help="compute rank-k and mAP for a saved model")
    p.add_argument("dataset_dir")
    p.add_argument("model", help="path to model.bin (model.json alongside)")
    p.add_argument("--split", default="default", help="probe camera as camN (default: lowest camera)")
    p.add_argument("--normalize", action="store_true")
    p.add_argument("--out", help="metrics.json path (default: next to the model)")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("report", help="write per-k and per-iteration CSV summaries of a run")
    p.add_argument("run_dir")
    p.add_argument("--out", help="output directory (default: RUN_DIR/report)")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.WARNING - 10 * min(args.verbose, 2),
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ArtifactError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ARTIFACT
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return 0


if __name__ == "__main__":
    sys.exit(main())
