"""Declarative pipeline configuration (TOML file plus flag overrides).

All relative paths in the file resolve against the config file's directory,
so a config travels with its workspace. Seeds are explicit values; nothing
in the pipeline draws entropy silently.
"""

from __future__ import annotations

import sys
from dataclasses import dataclass, field
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .orchestrator import ClipSpec
from .tagger import TrainConfig

__all__ = ["PipelineConfig", "ConfigError", "CONFIG_ENV_VAR"]

CONFIG_ENV_VAR = "CORPUSFORGE_CONFIG"


class ConfigError(ValueError):
    pass


@dataclass
class PipelineConfig:
    """Everything one pipeline run needs: paths, backend, clip, training."""

    base_dir: Path = field(default_factory=Path.cwd)

    # paths
    metadata: Path = Path("metadata.csv")
    corpus: Path = Path("out/corpus.jsonl")
    manifest: Path = Path("out/manifest.jsonl")
    audio_dir: Path = Path("out/audio")
    embeddings: Path = Path("out/embeddings.emb")
    model: Path = Path("out/model.tag")
    report_dir: Path = Path("out/reports")
    benchmark: Path | None = None  # embedding file; None: use validation split

    # backend client
    endpoint: str = "stub"
    timeout_s: float = 30.0
    retry_budget: int = 3
    max_in_flight: int = 4

    clip_spec: ClipSpec = field(default_factory=ClipSpec)
    target_per_class: int = 10
    train: TrainConfig = field(default_factory=TrainConfig)

    # seeds
    seed_base: int = 1234

    def __post_init__(self) -> None:
        self.base_dir = Path(self.base_dir)
        for name in (
            "metadata",
            "corpus",
            "manifest",
            "audio_dir",
            "embeddings",
            "model",
            "report_dir",
        ):
            setattr(self, name, self._resolve(getattr(self, name)))
        if self.benchmark is not None:
            self.benchmark = self._resolve(self.benchmark)

    def _resolve(self, path: str | Path) -> Path:
        path = Path(path)
        return path if path.is_absolute() else self.base_dir / path

    @classmethod
    def load(cls, path: str | Path) -> "PipelineConfig":
        path = Path(path)
        try:
            with path.open("rb") as fh:
                raw = tomllib.load(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"invalid TOML in {path}: {exc}") from exc

        paths = raw.get("paths", {})
        backend = raw.get("backend", {})
        clip = raw.get("clip", {})
        corpus = raw.get("corpus", {})
        train = raw.get("train", {})
        seeds = raw.get("seeds", {})
        known = {"paths", "backend", "clip", "corpus", "train", "seeds"}
        unknown = set(raw) - known
        if unknown:
            raise ConfigError(f"unknown config sections: {sorted(unknown)}")

        kwargs: dict = {"base_dir": path.parent}
        for name in (
            "metadata",
            "corpus",
            "manifest",
            "audio_dir",
            "embeddings",
            "model",
            "report_dir",
        ):
            if name in paths:
                kwargs[name] = Path(paths[name])
        if paths.get("benchmark"):
            kwargs["benchmark"] = Path(paths["benchmark"])

        if "endpoint" in backend:
            kwargs["endpoint"] = str(backend["endpoint"])
        if "timeout_s" in backend:
            kwargs["timeout_s"] = float(backend["timeout_s"])
        if "retry_budget" in backend:
            kwargs["retry_budget"] = int(backend["retry_budget"])
        if "max_in_flight" in backend:
            kwargs["max_in_flight"] = int(backend["max_in_flight"])

        try:
            kwargs["clip_spec"] = ClipSpec(
                duration_s=float(clip.get("duration_s", 10.0)),
                sample_rate_hz=int(clip.get("sample_rate_hz", 32000)),
                channels=int(clip.get("channels", 1)),
            )
            kwargs["train"] = TrainConfig(
                batch_size=int(train.get("batch_size", 32)),
                max_epochs=int(train.get("max_epochs", 100)),
                patience=int(train.get("patience", 5)),
                validation_fraction=float(train.get("validation_fraction", 0.10)),
                class_weights=train.get("class_weights") or None,
                rng_seed=int(seeds.get("training", 0)),
            )
        except ValueError as exc:
            raise ConfigError(f"invalid config value: {exc}") from exc

        if "target_per_class" in corpus:
            kwargs["target_per_class"] = int(corpus["target_per_class"])
        if "generation" in seeds:
            kwargs["seed_base"] = int(seeds["generation"])
        return cls(**kwargs)
