"""Track-metadata parsing and genre-conditioned prompt corpus construction.

Reads a CSV export of track metadata (``id,genre,description``), validates it
against the closed five-genre taxonomy, and expands the records into a
class-balanced corpus of text prompts of the form
``"A {genre} track. {description}."``.
"""

from __future__ import annotations

import csv
import enum
import json
import re
import unicodedata
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

__all__ = [
    "GenreTag",
    "TrackMetadata",
    "Prompt",
    "PromptCorpus",
    "RejectedRow",
    "MetadataParseResult",
    "MetadataError",
    "CorpusError",
    "normalize_description",
    "parse_metadata",
    "build_prompt",
    "balance_corpus",
    "save_corpus",
    "load_corpus",
]

N_GENRES = 5


class GenreTag(enum.IntEnum):
    """The closed five-class genre taxonomy, with a fixed 0-4 index."""

    ELECTRONICA = 0
    FUNK = 1
    ORCHESTRAL = 2
    POP = 3
    ROCK = 4

    @property
    def label(self) -> str:
        """Canonical display name, e.g. ``"Electronica"``."""
        return self.name.capitalize()

    @classmethod
    def from_label(cls, label: str) -> "GenreTag":
        try:
            return cls[label.strip().upper()]
        except KeyError:
            raise ValueError(f"unknown genre: {label!r}") from None

    @classmethod
    def labels(cls) -> list[str]:
        return [g.label for g in cls]


class MetadataError(ValueError):
    """A metadata file is structurally invalid (bad header, duplicate ids)."""


class CorpusError(ValueError):
    """A corpus-level constraint was violated (empty class, bad target)."""


_WS_RUN = re.compile(r"\s+")


def normalize_description(raw: str) -> str:
    """Trim, collapse whitespace runs, and drop control characters."""
    collapsed = _WS_RUN.sub(" ", raw).strip()
    return "".join(c for c in collapsed if unicodedata.category(c) != "Cc")


@dataclass(frozen=True)
class TrackMetadata:
    """One validated library record: opaque id, genre tag, description."""

    source_id: str
    genre: GenreTag
    description: str


@dataclass(frozen=True)
class Prompt:
    """A genre-conditioned text prompt derived from one track record."""

    prompt_id: str
    text: str
    genre: GenreTag
    replication_index: int


@dataclass(frozen=True)
class RejectedRow:
    line: int
    source_id: str | None
    reason: str


@dataclass
class MetadataParseResult:
    records: list[TrackMetadata]
    rejected: list[RejectedRow]


_EXPECTED_HEADER = ["id", "genre", "description"]


def parse_metadata(path: str | Path) -> MetadataParseResult:
    """Parse a metadata CSV into validated records plus per-row rejections.

    Rows with an unknown genre or an empty description are collected in
    ``rejected`` rather than silently dropped. A duplicate source id aborts
    the parse, since downstream prompt ids would collide.
    """
    path = Path(path)
    with path.open("r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            return MetadataParseResult(records=[], rejected=[])
        if [c.strip() for c in header] != _EXPECTED_HEADER:
            raise MetadataError(
                f"expected header {_EXPECTED_HEADER}, got {header} in {path}"
            )

        records: list[TrackMetadata] = []
        rejected: list[RejectedRow] = []
        seen_ids: set[str] = set()
        for row in reader:
            if not row:
                continue
            line = reader.line_num
            if len(row) != 3:
                rejected.append(RejectedRow(line, None, "wrong field count"))
                continue
            source_id, genre_raw, desc_raw = row
            source_id = source_id.strip()
            if not source_id:
                rejected.append(RejectedRow(line, None, "empty id"))
                continue
            if source_id in seen_ids:
                raise MetadataError(f"duplicate source id: {source_id!r}")
            try:
                genre = GenreTag.from_label(genre_raw)
            except ValueError:
                rejected.append(RejectedRow(line, source_id, "unknown genre"))
                continue
            description = normalize_description(desc_raw)
            if not description:
                rejected.append(RejectedRow(line, source_id, "empty description"))
                continue
            seen_ids.add(source_id)
            records.append(TrackMetadata(source_id, genre, description))
    return MetadataParseResult(records=records, rejected=rejected)


_TERMINAL_PUNCTUATION = (".", "!", "?")


def build_prompt(meta: TrackMetadata, replication_index: int) -> Prompt:
    """Render the literal prompt template for one record.

    A description already ending in terminal punctuation does not receive a
    second period. No grammatical article correction is applied.
    """
    if replication_index < 0:
        raise ValueError("replication_index must be >= 0")
    text = f"A {meta.genre.label} track. {meta.description}"
    if not meta.description.endswith(_TERMINAL_PUNCTUATION):
        text += "."
    return Prompt(
        prompt_id=f"{meta.source_id}#{replication_index}",
        text=text,
        genre=meta.genre,
        replication_index=replication_index,
    )


@dataclass
class PromptCorpus:
    """An ordered prompt list with per-genre counts (equal after balancing)."""

    prompts: list[Prompt]
    class_counts: list[int]

    def __post_init__(self) -> None:
        counts = [0] * N_GENRES
        seen: set[str] = set()
        for p in self.prompts:
            counts[p.genre] += 1
            if p.prompt_id in seen:
                raise CorpusError(f"duplicate prompt id: {p.prompt_id!r}")
            seen.add(p.prompt_id)
        if counts != list(self.class_counts):
            raise CorpusError(
                f"class_counts {self.class_counts} inconsistent with prompts {counts}"
            )

    def __len__(self) -> int:
        return len(self.prompts)


def balance_corpus(
    records: Sequence[TrackMetadata], target_per_class: int
) -> PromptCorpus:
    """Expand records into exactly ``target_per_class`` prompts per genre.

    Replication is round-robin over each class's records in input order, so
    a class with records ``[a, b]`` and target 5 yields ``a#0, b#0, a#1,
    b#1, a#2``. Output is ordered by class index, then by that round-robin
    sequence, which makes the corpus deterministic for a given input.
    """
    by_class: list[list[TrackMetadata]] = [[] for _ in range(N_GENRES)]
    for rec in records:
        by_class[rec.genre].append(rec)

    missing = [GenreTag(i).label for i in range(N_GENRES) if not by_class[i]]
    if missing:
        raise CorpusError(f"classes with no records: {', '.join(missing)}")
    for i, class_records in enumerate(by_class):
        if len(class_records) > target_per_class:
            raise CorpusError(
                f"target_per_class={target_per_class} is below the initial "
                f"count {len(class_records)} for class {GenreTag(i).label}; "
                "downsampling is not supported"
            )

    prompts: list[Prompt] = []
    for class_records in by_class:
        n = len(class_records)
        for i in range(target_per_class):
            prompts.append(build_prompt(class_records[i % n], i // n))
    return PromptCorpus(prompts=prompts, class_counts=[target_per_class] * N_GENRES)


def save_corpus(corpus: PromptCorpus, path: str | Path) -> None:
    """Write the corpus as JSON Lines (UTF-8, LF), one prompt per line."""
    path = Path(path)
    with path.open("w", encoding="utf-8", newline="\n") as fh:
        for p in corpus.prompts:
            fh.write(
                json.dumps(
                    {
                        "prompt_id": p.prompt_id,
                        "text": p.text,
                        "genre": p.genre.label,
                        "replication_index": p.replication_index,
                    },
                    ensure_ascii=False,
                )
            )
            fh.write("\n")


def load_corpus(path: str | Path) -> PromptCorpus:
    prompts: list[Prompt] = []
    with Path(path).open("r", encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            obj = json.loads(line)
            prompts.append(
                Prompt(
                    prompt_id=obj["prompt_id"],
                    text=obj["text"],
                    genre=GenreTag.from_label(obj["genre"]),
                    replication_index=int(obj["replication_index"]),
                )
            )
    counts = [0] * N_GENRES
    for p in prompts:
        counts[p.genre] += 1
    return PromptCorpus(prompts=prompts, class_counts=counts)
