"""Labeled 768-d embedding vectors: extraction, binary persistence, doubles.

File format (little-endian throughout):

  magic "EMB1" | version u16 | dim u32 | count u64 | manifest_crc u32
  per record:  clip_id_len u16, clip_id utf-8, genre u8, dim x f32
  footer:      CRC32 (u32) of every byte before it

Floats are stored as raw IEEE-754 bits, so round-trips are bit-exact,
including subnormals and negative zero.
"""

from __future__ import annotations

import hashlib
import logging
import struct
import zlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .prompt_corpus import N_GENRES, GenreTag
from .protocol import BackendClient, call_with_retries

__all__ = [
    "EmbeddingRecord",
    "EmbeddingSet",
    "EmbeddingStoreError",
    "EmbeddingFormatError",
    "EmbeddingIntegrityError",
    "EmbeddingDimensionError",
    "EMBEDDING_DIM",
    "save_embeddings",
    "load_embeddings",
    "extract_embeddings",
    "mock_embed",
    "cluster_mean",
]

log = logging.getLogger(__name__)

EMBEDDING_DIM = 768

_MAGIC = b"EMB1"
_VERSION = 1
_HEADER = struct.Struct("<4sHIQI")  # magic, version, dim, count, manifest crc


class EmbeddingStoreError(RuntimeError):
    """Embedding extraction or persistence failed."""


class EmbeddingFormatError(EmbeddingStoreError):
    """File does not carry the expected magic or version."""


class EmbeddingIntegrityError(EmbeddingStoreError):
    """Checksum mismatch: the file bytes were corrupted."""


class EmbeddingDimensionError(EmbeddingStoreError):
    """The backend served vectors of the wrong dimension."""


@dataclass(frozen=True)
class EmbeddingRecord:
    """One clip's feature vector plus its genre label."""

    clip_id: str
    genre: GenreTag
    vector: np.ndarray  # 1-D float32

    def __post_init__(self) -> None:
        vec = np.asarray(self.vector, dtype=np.float32)
        if vec.ndim != 1:
            raise ValueError(f"vector must be 1-D, got shape {vec.shape}")
        if not np.all(np.isfinite(vec)):
            raise ValueError(f"non-finite components in vector for {self.clip_id!r}")
        object.__setattr__(self, "vector", vec)


@dataclass
class EmbeddingSet:
    """Homogeneous collection of embedding records with unique clip ids."""

    records: list[EmbeddingRecord]
    dim: int = EMBEDDING_DIM
    source_manifest_checksum: int = 0

    def __post_init__(self) -> None:
        seen: set[str] = set()
        for rec in self.records:
            if rec.vector.shape[0] != self.dim:
                raise ValueError(
                    f"record {rec.clip_id!r} has dim {rec.vector.shape[0]}, "
                    f"set dim is {self.dim}"
                )
            if rec.clip_id in seen:
                raise ValueError(f"duplicate clip id: {rec.clip_id!r}")
            seen.add(rec.clip_id)

    def __len__(self) -> int:
        return len(self.records)

    def class_counts(self) -> list[int]:
        counts = [0] * N_GENRES
        for rec in self.records:
            counts[rec.genre] += 1
        return counts

    def to_arrays(self) -> tuple[np.ndarray, np.ndarray]:
        """Stack into (features, labels) arrays for training."""
        if not self.records:
            return (
                np.zeros((0, self.dim), dtype=np.float32),
                np.zeros(0, dtype=np.int64),
            )
        x = np.stack([rec.vector for rec in self.records])
        y = np.array([int(rec.genre) for rec in self.records], dtype=np.int64)
        return x, y


def save_embeddings(embedding_set: EmbeddingSet, path: str | Path) -> None:
    """Serialize to the checksummed binary format described above."""
    chunks = [
        _HEADER.pack(
            _MAGIC,
            _VERSION,
            embedding_set.dim,
            len(embedding_set.records),
            embedding_set.source_manifest_checksum,
        )
    ]
    for rec in embedding_set.records:
        cid = rec.clip_id.encode("utf-8")
        chunks.append(struct.pack("<H", len(cid)))
        chunks.append(cid)
        chunks.append(struct.pack("<B", int(rec.genre)))
        chunks.append(rec.vector.astype("<f4", copy=False).tobytes())
    body = b"".join(chunks)
    footer = struct.pack("<I", zlib.crc32(body))
    Path(path).write_bytes(body + footer)


def load_embeddings(path: str | Path) -> EmbeddingSet:
    """Read and verify an embedding file; checksum is checked first."""
    data = Path(path).read_bytes()
    if len(data) < _HEADER.size + 4:
        raise EmbeddingFormatError(f"{path}: file too short")
    body, footer = data[:-4], data[-4:]
    if struct.unpack("<I", footer)[0] != zlib.crc32(body):
        raise EmbeddingIntegrityError(f"{path}: checksum mismatch")
    magic, version, dim, count, manifest_crc = _HEADER.unpack_from(body, 0)
    if magic != _MAGIC:
        raise EmbeddingFormatError(f"{path}: bad magic {magic!r}")
    if version != _VERSION:
        raise EmbeddingFormatError(f"{path}: unsupported version {version}")

    offset = _HEADER.size
    records: list[EmbeddingRecord] = []
    try:
        for _ in range(count):
            (cid_len,) = struct.unpack_from("<H", body, offset)
            offset += 2
            clip_id = body[offset : offset + cid_len].decode("utf-8")
            offset += cid_len
            (genre_idx,) = struct.unpack_from("<B", body, offset)
            offset += 1
            vector = np.frombuffer(body, dtype="<f4", count=dim, offset=offset).copy()
            offset += 4 * dim
            records.append(EmbeddingRecord(clip_id, GenreTag(genre_idx), vector))
    except (struct.error, ValueError) as exc:
        raise EmbeddingFormatError(f"{path}: truncated or malformed body: {exc}")
    if offset != len(body):
        raise EmbeddingFormatError(f"{path}: {len(body) - offset} trailing bytes")
    return EmbeddingSet(records=records, dim=dim, source_manifest_checksum=manifest_crc)


def extract_embeddings(
    manifest,
    client: BackendClient,
    audio_dir: str | Path,
    expected_dim: int = EMBEDDING_DIM,
) -> EmbeddingSet:
    """Embed every done clip in the manifest via the backend's embed endpoint.

    Per-clip transient failures and non-finite vectors are skipped with a
    logged reason; a wrong embedding dimension aborts outright since it means
    the backend is misconfigured, not flaky.
    """
    from .orchestrator import serialize_manifest  # deferred: avoids cycle

    done = [rec for rec in manifest.records if rec.status == "done"]
    if not done:
        raise EmbeddingStoreError("nothing to embed: manifest has no done records")
    audio_dir = Path(audio_dir)

    def embed_one(record) -> list[float]:
        wav_bytes = (audio_dir / record.audio_path).read_bytes()
        vector, _attempts, error = call_with_retries(
            client, lambda: client.embed(wav_bytes)
        )
        if vector is None:
            raise EmbeddingStoreError(error or "embed failed")
        if len(vector) != expected_dim:
            raise EmbeddingDimensionError(
                f"backend returned dim {len(vector)}, expected {expected_dim}"
            )
        return vector

    records: list[EmbeddingRecord] = []
    with ThreadPoolExecutor(max_workers=client.max_in_flight) as pool:
        futures = [(rec, pool.submit(embed_one, rec)) for rec in done]
        for rec, fut in futures:
            try:
                vector = fut.result()
            except EmbeddingDimensionError:
                raise
            except (EmbeddingStoreError, OSError) as exc:
                log.warning("skipping clip %s: %s", rec.clip_id, exc)
                continue
            arr = np.asarray(vector, dtype=np.float32)
            if not np.all(np.isfinite(arr)):
                log.warning("skipping clip %s: non-finite embedding", rec.clip_id)
                continue
            records.append(EmbeddingRecord(rec.clip_id, rec.genre, arr))

    manifest_crc = zlib.crc32(serialize_manifest(manifest).encode("utf-8"))
    return EmbeddingSet(
        records=records, dim=expected_dim, source_manifest_checksum=manifest_crc
    )


# Synthetic clusters: one unit axis per genre, 150 axes apart, shared
# isotropic spread. sigma small => linearly separable; large => overlapping.
CLUSTER_AXIS_STRIDE = 150


def cluster_mean(genre: GenreTag, dim: int = EMBEDDING_DIM) -> np.ndarray:
    axis = int(genre) * CLUSTER_AXIS_STRIDE
    if axis >= dim:
        raise ValueError(
            f"dim {dim} too small for cluster axes; need > {axis} for {genre.label}"
        )
    mean = np.zeros(dim, dtype=np.float32)
    mean[axis] = 1.0
    return mean


def mock_embed(
    clip_id: str,
    genre: GenreTag,
    seed: int,
    sigma: float = 0.05,
    dim: int = EMBEDDING_DIM,
) -> np.ndarray:
    """Deterministic draw from the genre's Gaussian cluster.

    The draw depends only on (clip_id, genre, seed), so repeated calls agree
    bit for bit. Used in place of a real embedder for desk-scale training.
    """
    digest = hashlib.sha256(
        f"{clip_id}\x1f{int(genre)}\x1f{seed}".encode("utf-8")
    ).digest()
    rng = np.random.default_rng(int.from_bytes(digest[:16], "little"))
    noise = rng.standard_normal(dim).astype(np.float32)
    return cluster_mean(genre, dim) + np.float32(sigma) * noise
