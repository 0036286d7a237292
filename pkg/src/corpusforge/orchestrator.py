"""Batch clip generation against a backend, with retries and resumability.

The manifest is the source of truth for a run: one record per prompt with
seed, status, attempt count, and checksum. It is checkpointed to disk
(write-to-temp-then-rename) after every state change, so a killed run can
resume without regenerating finished clips.
"""

from __future__ import annotations

import json
import logging
import os
import time
from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import dataclass, field
from pathlib import Path
from urllib.parse import quote
from zlib import crc32

from .audio import AudioFormatError, decode_wav
from .prompt_corpus import GenreTag, PromptCorpus
from .protocol import BackendClient, PermanentBackendError, call_with_retries

__all__ = [
    "ClipSpec",
    "ClipRecord",
    "DatasetManifest",
    "OrchestratorError",
    "fnv1a_64",
    "clip_seed",
    "plan_generation",
    "run_generation",
    "validate_clip",
    "serialize_manifest",
    "save_manifest",
    "load_manifest",
]

log = logging.getLogger(__name__)

UINT64_MASK = 0xFFFFFFFFFFFFFFFF
_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3

STATUS_PENDING = "pending"
STATUS_DONE = "done"
STATUS_FAILED = "failed"


class OrchestratorError(RuntimeError):
    pass


def fnv1a_64(data: bytes) -> int:
    """64-bit FNV-1a hash."""
    h = _FNV_OFFSET
    for byte in data:
        h ^= byte
        h = (h * _FNV_PRIME) & UINT64_MASK
    return h


def clip_seed(seed_base: int, prompt_id: str) -> int:
    """Per-clip generation seed: FNV-1a over seed_base (big-endian) || id."""
    base = (seed_base & UINT64_MASK).to_bytes(8, "big")
    return fnv1a_64(base + prompt_id.encode("utf-8"))


@dataclass(frozen=True)
class ClipSpec:
    """Requested clip format; defaults follow the 10 s mono 32 kHz dataset."""

    duration_s: float = 10.0
    sample_rate_hz: int = 32000
    channels: int = 1

    def __post_init__(self) -> None:
        if self.duration_s <= 0:
            raise ValueError("duration_s must be > 0")
        if self.sample_rate_hz <= 0:
            raise ValueError("sample_rate_hz must be > 0")
        if self.channels < 1:
            raise ValueError("channels must be >= 1")

    @property
    def n_frames(self) -> int:
        return round(self.duration_s * self.sample_rate_hz)


@dataclass
class ClipRecord:
    clip_id: str
    prompt_id: str
    genre: GenreTag
    seed: int
    audio_path: str
    status: str = STATUS_PENDING
    attempts: int = 0
    checksum: int | None = None
    error: str | None = None


@dataclass
class DatasetManifest:
    clip_spec: ClipSpec
    records: list[ClipRecord] = field(default_factory=list)
    backend_identity: str = ""

    def __post_init__(self) -> None:
        ids = [rec.clip_id for rec in self.records]
        if len(set(ids)) != len(ids):
            raise OrchestratorError("duplicate clip ids in manifest")

    def by_status(self, status: str) -> list[ClipRecord]:
        return [rec for rec in self.records if rec.status == status]

    def counts_by_status(self) -> dict[str, list[int]]:
        """Per-genre record counts keyed by status, for balance reporting."""
        counts = {
            STATUS_PENDING: [0] * len(GenreTag),
            STATUS_DONE: [0] * len(GenreTag),
            STATUS_FAILED: [0] * len(GenreTag),
        }
        for rec in self.records:
            counts[rec.status][rec.genre] += 1
        return counts


def plan_generation(
    corpus: PromptCorpus, spec: ClipSpec, seed_base: int
) -> DatasetManifest:
    """One pending record per prompt, with a deterministic per-prompt seed."""
    if len(corpus) == 0:
        raise OrchestratorError("cannot plan generation for an empty corpus")
    records = []
    for prompt in corpus.prompts:
        records.append(
            ClipRecord(
                clip_id=prompt.prompt_id,
                prompt_id=prompt.prompt_id,
                genre=prompt.genre,
                seed=clip_seed(seed_base, prompt.prompt_id),
                audio_path=quote(prompt.prompt_id, safe="") + ".wav",
            )
        )
    if len({rec.seed for rec in records}) != len(records):
        raise OrchestratorError("seed collision in plan; choose a different seed_base")
    return DatasetManifest(clip_spec=spec, records=records)


def validate_clip(wav_bytes: bytes, spec: ClipSpec) -> None:
    """Reject audio that does not meet the requested clip format.

    Sample rate and channel count must match exactly; duration may be off
    by at most one sample frame.
    """
    try:
        info = decode_wav(wav_bytes)
    except AudioFormatError as exc:
        raise PermanentBackendError(f"spec violation: {exc}") from exc
    if info.sample_rate_hz != spec.sample_rate_hz:
        raise PermanentBackendError(
            f"spec violation: sample rate {info.sample_rate_hz}, "
            f"requested {spec.sample_rate_hz}"
        )
    if info.channels != spec.channels:
        raise PermanentBackendError(
            f"spec violation: {info.channels} channels, requested {spec.channels}"
        )
    if abs(info.n_frames - spec.n_frames) > 1:
        raise PermanentBackendError(
            f"spec violation: {info.n_frames} frames, requested {spec.n_frames} (+/-1)"
        )


def run_generation(
    manifest: DatasetManifest,
    client: BackendClient,
    output_dir: str | Path,
    manifest_path: str | Path,
    corpus: PromptCorpus,
    throttle_s: float = 0.0,
) -> DatasetManifest:
    """Generate audio for every pending record; done records are untouched.

    At most ``client.max_in_flight`` requests are outstanding at once.
    Exhausted retries mark the record failed rather than aborting the run.
    ``corpus`` must be the corpus the manifest was planned from; it supplies
    the prompt text for each record. ``throttle_s`` adds a pause before each
    request, to pace a rate-limited backend.
    """
    pending = manifest.by_status(STATUS_PENDING)
    if not pending:
        return manifest

    text_by_id = {p.prompt_id: p.text for p in corpus.prompts}
    missing = [rec.prompt_id for rec in pending if rec.prompt_id not in text_by_id]
    if missing:
        raise OrchestratorError(
            f"manifest does not match corpus; unknown prompt ids: {missing[:5]}"
        )

    identity, _, err = call_with_retries(client, client.health)
    if identity is None:
        raise OrchestratorError(f"backend health check failed: {err}")
    if (
        manifest.backend_identity
        and manifest.backend_identity != identity
        and manifest.by_status(STATUS_DONE)
    ):
        raise OrchestratorError(
            f"refusing to resume: existing clips were generated by "
            f"{manifest.backend_identity!r} but the backend reports {identity!r}"
        )
    manifest.backend_identity = identity

    output_dir = Path(output_dir)
    output_dir.mkdir(parents=True, exist_ok=True)
    save_manifest(manifest, manifest_path)
    spec = manifest.clip_spec

    def generate_one(record: ClipRecord) -> tuple[int | None, int, str | None]:
        if throttle_s > 0:
            time.sleep(throttle_s)

        def attempt() -> int:
            wav_bytes = client.generate(text_by_id[record.prompt_id], record.seed, spec)
            validate_clip(wav_bytes, spec)
            (output_dir / record.audio_path).write_bytes(wav_bytes)
            return crc32(wav_bytes)

        return call_with_retries(client, attempt)

    with ThreadPoolExecutor(max_workers=client.max_in_flight) as pool:
        futures = {pool.submit(generate_one, rec): rec for rec in pending}
        for fut in as_completed(futures):
            record = futures[fut]
            checksum, attempts, error = fut.result()
            record.attempts = attempts
            if checksum is not None:
                record.status = STATUS_DONE
                record.checksum = checksum
                record.error = None
            else:
                record.status = STATUS_FAILED
                record.error = error
                log.warning("clip %s failed: %s", record.clip_id, error)
            save_manifest(manifest, manifest_path)

    done = len(manifest.by_status(STATUS_DONE))
    failed = len(manifest.by_status(STATUS_FAILED))
    log.info("generation finished: %d done, %d failed", done, failed)
    return manifest


def _record_to_json(record: ClipRecord) -> str:
    return json.dumps(
        {
            "clip_id": record.clip_id,
            "prompt_id": record.prompt_id,
            "genre": record.genre.label,
            "seed": record.seed,
            "audio_path": record.audio_path,
            "status": record.status,
            "attempts": record.attempts,
            "checksum": record.checksum,
            "error": record.error,
        },
        ensure_ascii=False,
    )


def serialize_manifest(manifest: DatasetManifest) -> str:
    """Manifest as JSON Lines: a header line, then one record per line."""
    header = json.dumps(
        {
            "clip_spec": {
                "duration_s": manifest.clip_spec.duration_s,
                "sample_rate_hz": manifest.clip_spec.sample_rate_hz,
                "channels": manifest.clip_spec.channels,
            },
            "backend_identity": manifest.backend_identity,
        },
        ensure_ascii=False,
    )
    lines = [header] + [_record_to_json(rec) for rec in manifest.records]
    return "\n".join(lines) + "\n"


def save_manifest(manifest: DatasetManifest, path: str | Path) -> None:
    """Atomic checkpoint: write to a temp file, then rename over the target."""
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(serialize_manifest(manifest), encoding="utf-8", newline="\n")
    os.replace(tmp, path)


def load_manifest(path: str | Path) -> DatasetManifest:
    with Path(path).open("r", encoding="utf-8") as fh:
        lines = [line for line in fh if line.strip()]
    if not lines:
        raise OrchestratorError(f"{path}: empty manifest")
    header = json.loads(lines[0])
    spec = ClipSpec(
        duration_s=header["clip_spec"]["duration_s"],
        sample_rate_hz=header["clip_spec"]["sample_rate_hz"],
        channels=header["clip_spec"]["channels"],
    )
    records = []
    for line in lines[1:]:
        obj = json.loads(line)
        records.append(
            ClipRecord(
                clip_id=obj["clip_id"],
                prompt_id=obj["prompt_id"],
                genre=GenreTag.from_label(obj["genre"]),
                seed=int(obj["seed"]),
                audio_path=obj["audio_path"],
                status=obj["status"],
                attempts=int(obj["attempts"]),
                checksum=obj["checksum"],
                error=obj["error"],
            )
        )
    return DatasetManifest(
        clip_spec=spec, records=records, backend_identity=header["backend_identity"]
    )
