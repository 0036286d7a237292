"""Command-line entry point wiring the pipeline stages together.

Commands: build-corpus | generate | embed | train | evaluate |
report-balance | all. Configuration comes from a TOML file (``--config``,
or the CORPUSFORGE_CONFIG environment variable, or ./corpusforge.toml),
with individual flags overriding file values. Logs go to stderr, machine
outputs to the configured paths.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

from . import embedding_store, evaluation, orchestrator, prompt_corpus, tagger
from .config import CONFIG_ENV_VAR, ConfigError, PipelineConfig
from .protocol import STUB_ENDPOINT, BackendClient

__all__ = ["main", "run_command"]

log = logging.getLogger("corpusforge")

STAGES = ("build-corpus", "generate", "embed", "train", "evaluate")


class StageError(RuntimeError):
    """A pipeline stage could not run; the message is user-facing."""


def _client(cfg: PipelineConfig) -> BackendClient:
    return BackendClient(
        endpoint=cfg.endpoint,
        timeout=cfg.timeout_s,
        retry_budget=cfg.retry_budget,
        max_in_flight=cfg.max_in_flight,
    )


def _is_fresh(output: Path, *inputs: Path) -> bool:
    """True when `output` exists and is at least as new as every input."""
    if not output.exists():
        return False
    out_mtime = output.stat().st_mtime
    return all(inp.exists() and inp.stat().st_mtime <= out_mtime for inp in inputs)


def stage_build_corpus(cfg: PipelineConfig) -> None:
    if not cfg.metadata.exists():
        raise StageError(f"metadata not found: {cfg.metadata}")
    result = prompt_corpus.parse_metadata(cfg.metadata)
    for reject in result.rejected:
        log.warning(
            "rejected metadata row %d (id=%s): %s",
            reject.line,
            reject.source_id,
            reject.reason,
        )
    corpus = prompt_corpus.balance_corpus(result.records, cfg.target_per_class)
    cfg.corpus.parent.mkdir(parents=True, exist_ok=True)
    prompt_corpus.save_corpus(corpus, cfg.corpus)
    log.info(
        "corpus written: %d prompts (%d per class, %d rows rejected) -> %s",
        len(corpus),
        cfg.target_per_class,
        len(result.rejected),
        cfg.corpus,
    )


def stage_generate(
    cfg: PipelineConfig, resume: bool = True, throttle_ms: int = 0
) -> None:
    if not cfg.corpus.exists():
        raise StageError(f"corpus not found: {cfg.corpus} (run build-corpus first)")
    corpus = prompt_corpus.load_corpus(cfg.corpus)
    if resume and cfg.manifest.exists():
        manifest = orchestrator.load_manifest(cfg.manifest)
        log.info(
            "resuming manifest %s: %d done, %d pending, %d failed",
            cfg.manifest,
            len(manifest.by_status(orchestrator.STATUS_DONE)),
            len(manifest.by_status(orchestrator.STATUS_PENDING)),
            len(manifest.by_status(orchestrator.STATUS_FAILED)),
        )
    else:
        manifest = orchestrator.plan_generation(corpus, cfg.clip_spec, cfg.seed_base)
    cfg.manifest.parent.mkdir(parents=True, exist_ok=True)
    orchestrator.run_generation(
        manifest,
        _client(cfg),
        cfg.audio_dir,
        cfg.manifest,
        corpus,
        throttle_s=throttle_ms / 1000.0,
    )


def stage_embed(cfg: PipelineConfig) -> None:
    if not cfg.manifest.exists():
        raise StageError(f"manifest not found: {cfg.manifest} (run generate first)")
    manifest = orchestrator.load_manifest(cfg.manifest)
    embedding_set = embedding_store.extract_embeddings(
        manifest, _client(cfg), cfg.audio_dir
    )
    cfg.embeddings.parent.mkdir(parents=True, exist_ok=True)
    embedding_store.save_embeddings(embedding_set, cfg.embeddings)
    log.info(
        "embeddings written: %d records of dim %d -> %s",
        len(embedding_set),
        embedding_set.dim,
        cfg.embeddings,
    )


def stage_train(cfg: PipelineConfig) -> None:
    if not cfg.embeddings.exists():
        raise StageError(f"embeddings not found: {cfg.embeddings} (run embed first)")
    embedding_set = embedding_store.load_embeddings(cfg.embeddings)
    params, report = tagger.train(embedding_set, cfg.train)
    cfg.model.parent.mkdir(parents=True, exist_ok=True)
    tagger.save_params(params, cfg.model)
    cfg.report_dir.mkdir(parents=True, exist_ok=True)
    (cfg.report_dir / "train_report.json").write_text(
        report.to_json() + "\n", encoding="utf-8"
    )
    best = next(
        (e for e in report.epochs if e.epoch == report.best_epoch), None
    )
    log.info(
        "model written: best epoch %d/%d (val loss %.4f, val accuracy %.4f) -> %s",
        report.best_epoch,
        report.stopped_epoch,
        best.val_loss if best else float("nan"),
        best.val_accuracy if best else float("nan"),
        cfg.model,
    )


def _benchmark_set(cfg: PipelineConfig) -> embedding_store.EmbeddingSet:
    if cfg.benchmark is not None:
        if not cfg.benchmark.exists():
            raise StageError(f"benchmark embeddings not found: {cfg.benchmark}")
        return embedding_store.load_embeddings(cfg.benchmark)
    # No benchmark configured: fall back to the validation split, rebuilt
    # with the same seed the training stage used.
    if not cfg.embeddings.exists():
        raise StageError(f"embeddings not found: {cfg.embeddings} (run embed first)")
    embedding_set = embedding_store.load_embeddings(cfg.embeddings)
    _, val_set = tagger.training_split(embedding_set, cfg.train)
    log.info("no benchmark configured; evaluating on the validation split")
    return val_set


def stage_evaluate(cfg: PipelineConfig) -> None:
    if not cfg.model.exists():
        raise StageError(f"model not found: {cfg.model} (run train first)")
    params = tagger.load_params(cfg.model)
    benchmark = _benchmark_set(cfg)
    report = evaluation.evaluate(params, benchmark)
    cfg.report_dir.mkdir(parents=True, exist_ok=True)
    (cfg.report_dir / "evaluation.json").write_text(
        report.to_json() + "\n", encoding="utf-8"
    )
    (cfg.report_dir / "evaluation.txt").write_text(
        report.text_table(), encoding="utf-8"
    )
    sys.stdout.write(report.text_table())
    empty = [
        prompt_corpus.GenreTag(i).label
        for i, n in enumerate(report.n_per_class)
        if n == 0
    ]
    if empty:
        raise StageError(f"classes with zero evaluation records: {', '.join(empty)}")


def stage_report_balance(cfg: PipelineConfig) -> None:
    if not cfg.manifest.exists():
        raise StageError(f"manifest not found: {cfg.manifest} (run generate first)")
    manifest = orchestrator.load_manifest(cfg.manifest)
    counts = manifest.counts_by_status()
    header = f"{'Genre':<12} {'done':>6} {'pending':>8} {'failed':>7}"
    lines = [header]
    for genre in prompt_corpus.GenreTag:
        lines.append(
            f"{genre.label:<12} {counts['done'][genre]:>6} "
            f"{counts['pending'][genre]:>8} {counts['failed'][genre]:>7}"
        )
    sys.stdout.write("\n".join(lines) + "\n")
    done = counts["done"]
    if len(set(done)) > 1:
        log.warning(
            "class imbalance among done clips: %s (class weights will compensate)",
            {prompt_corpus.GenreTag(i).label: n for i, n in enumerate(done)},
        )


def stage_all(cfg: PipelineConfig, resume: bool, throttle_ms: int) -> None:
    eval_json = cfg.report_dir / "evaluation.json"

    if _is_fresh(cfg.corpus, cfg.metadata):
        log.info("all: corpus up to date, skipping build-corpus")
    else:
        stage_build_corpus(cfg)

    manifest_fresh = _is_fresh(cfg.manifest, cfg.corpus)
    if manifest_fresh:
        manifest = orchestrator.load_manifest(cfg.manifest)
        manifest_fresh = not manifest.by_status(orchestrator.STATUS_PENDING)
    if manifest_fresh:
        log.info("all: manifest complete and up to date, skipping generate")
    else:
        stage_generate(cfg, resume=resume, throttle_ms=throttle_ms)

    if _is_fresh(cfg.embeddings, cfg.manifest):
        log.info("all: embeddings up to date, skipping embed")
    else:
        stage_embed(cfg)

    if _is_fresh(cfg.model, cfg.embeddings):
        log.info("all: model up to date, skipping train")
    else:
        stage_train(cfg)

    eval_inputs = [cfg.model] + ([cfg.benchmark] if cfg.benchmark else [])
    if _is_fresh(eval_json, *eval_inputs):
        log.info("all: evaluation up to date, skipping evaluate")
    else:
        stage_evaluate(cfg)


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="corpusforge",
        description="Build prompt corpora, generate clips, embed, train, evaluate.",
    )
    parser.add_argument("--config", help="TOML config path")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")

    def add(name: str, help_text: str) -> argparse.ArgumentParser:
        cmd = sub.add_parser(name, help=help_text)
        cmd.add_argument("--config", help="TOML config path")
        cmd.add_argument("--endpoint", help="backend base URL")
        cmd.add_argument(
            "--backend",
            choices=[STUB_ENDPOINT],
            help="use the built-in deterministic backend doubles",
        )
        cmd.add_argument("--max-in-flight", type=int)
        cmd.add_argument("--retry-budget", type=int)
        cmd.add_argument("--seed-base", type=int)
        cmd.add_argument("--out-dir", help="audio output directory")
        cmd.add_argument("--target-per-class", type=int)
        cmd.add_argument(
            "--resume",
            action=argparse.BooleanOptionalAction,
            default=True,
            help="reuse an existing manifest, skipping done clips",
        )
        cmd.add_argument(
            "--throttle-ms",
            type=int,
            default=0,
            help="pause before each generate request",
        )
        return cmd

    add("build-corpus", "parse metadata and write the balanced prompt corpus")
    add("generate", "generate audio clips for the corpus via the backend")
    add("embed", "extract embeddings for every done clip")
    add("train", "train the genre tagger on stored embeddings")
    add("evaluate", "evaluate the trained tagger and write reports")
    add("report-balance", "show per-class clip counts by status")
    add("all", "run every stage in order, skipping up-to-date stages")
    return parser


def _load_config(args: argparse.Namespace) -> PipelineConfig:
    path = args.config or os.environ.get(CONFIG_ENV_VAR) or "corpusforge.toml"
    if Path(path).exists():
        cfg = PipelineConfig.load(path)
    elif args.config or os.environ.get(CONFIG_ENV_VAR):
        raise ConfigError(f"config file not found: {path}")
    else:
        cfg = PipelineConfig(base_dir=Path.cwd())

    if getattr(args, "backend", None):
        cfg.endpoint = STUB_ENDPOINT
    elif getattr(args, "endpoint", None):
        cfg.endpoint = args.endpoint
    if getattr(args, "max_in_flight", None) is not None:
        cfg.max_in_flight = args.max_in_flight
    if getattr(args, "retry_budget", None) is not None:
        cfg.retry_budget = args.retry_budget
    if getattr(args, "seed_base", None) is not None:
        cfg.seed_base = args.seed_base
    if getattr(args, "out_dir", None):
        cfg.audio_dir = Path(args.out_dir).absolute()
    if getattr(args, "target_per_class", None) is not None:
        cfg.target_per_class = args.target_per_class
    return cfg


def run_command(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    if not args.command:
        parser.print_usage(sys.stderr)
        return 2

    try:
        cfg = _load_config(args)
    except ConfigError as exc:
        log.error("%s", exc)
        return 1

    try:
        if args.command == "build-corpus":
            stage_build_corpus(cfg)
        elif args.command == "generate":
            stage_generate(cfg, resume=args.resume, throttle_ms=args.throttle_ms)
        elif args.command == "embed":
            stage_embed(cfg)
        elif args.command == "train":
            stage_train(cfg)
        elif args.command == "evaluate":
            stage_evaluate(cfg)
        elif args.command == "report-balance":
            stage_report_balance(cfg)
        elif args.command == "all":
            stage_all(cfg, resume=args.resume, throttle_ms=args.throttle_ms)
    except Exception as exc:  # CLI boundary: name the stage, exit 1
        log.error("stage '%s' failed: %s", args.command, exc)
        return 1
    return 0


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(
        stream=sys.stderr,
        level=logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )
    return run_command(argv)


if __name__ == "__main__":
    sys.exit(main())
