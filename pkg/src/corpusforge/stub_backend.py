"""Deterministic in-process doubles for the generation/embedding backend.

``stub_generate`` synthesizes seeded noise-shaped tones. The fundamental
frequency is keyed to the genre named in the prompt template, and
``StubBackend.embed`` recovers it from the audio, so a full pipeline run
against the stub produces linearly separable per-genre embeddings and a
model that actually learns something.
"""

from __future__ import annotations

import re
import zlib

import numpy as np

from .audio import decode_wav, encode_wav
from .embedding_store import EMBEDDING_DIM, cluster_mean
from .orchestrator import ClipSpec, fnv1a_64
from .prompt_corpus import GenreTag
from .protocol import PermanentBackendError

__all__ = ["stub_generate", "StubBackend", "GENRE_BASE_HZ"]

# Fundamentals 400 Hz apart with +/-80 Hz seed jitter: nearest-base lookup
# in the embedder can never cross a genre boundary.
GENRE_BASE_HZ = [250.0, 650.0, 1050.0, 1450.0, 1850.0]
_JITTER_HZ = 80.0
_HARMONIC_AMPS = (1.0, 0.35, 0.15)
_NOISE_AMP = 0.02
_EMBED_SIGMA = 0.05

_PROMPT_GENRE = re.compile(r"\AA (\w+) track\.")


def _prompt_genre(prompt: str) -> GenreTag | None:
    match = _PROMPT_GENRE.match(prompt)
    if match is None:
        return None
    try:
        return GenreTag.from_label(match.group(1))
    except ValueError:
        return None


def stub_generate(prompt: str, seed: int, spec: ClipSpec) -> bytes:
    """Deterministic WAV for (prompt, seed): tones plus a low noise floor."""
    rng = np.random.default_rng(
        fnv1a_64((seed & 0xFFFFFFFFFFFFFFFF).to_bytes(8, "big") + prompt.encode("utf-8"))
    )
    genre = _prompt_genre(prompt)
    if genre is not None:
        base_hz = GENRE_BASE_HZ[genre] + rng.uniform(-_JITTER_HZ, _JITTER_HZ)
    else:
        base_hz = rng.uniform(100.0, 2000.0)

    n = spec.n_frames
    t = np.arange(n) / spec.sample_rate_hz
    signal = np.zeros(n)
    for k, amp in enumerate(_HARMONIC_AMPS, start=1):
        freq = min(base_hz * k, spec.sample_rate_hz / 2 * 0.9)
        signal += amp * np.sin(2 * np.pi * freq * t + rng.uniform(0, 2 * np.pi))
    signal += _NOISE_AMP * rng.standard_normal(n)
    samples = np.round(signal / np.max(np.abs(signal)) * 0.8 * 32767).astype(np.int16)
    if spec.channels > 1:
        samples = np.repeat(samples, spec.channels)
    return encode_wav(samples, spec.sample_rate_hz, spec.channels)


class StubBackend:
    """In-process backend speaking the generate/embed/health interface."""

    identity = "stub"

    def __init__(self, dim: int = EMBEDDING_DIM):
        self.dim = dim

    def generate(self, prompt: str, seed: int, clip_spec: ClipSpec) -> bytes:
        if clip_spec.channels != 1:
            raise PermanentBackendError(
                f"generate: rejected with 422: stub supports mono only, "
                f"got channels={clip_spec.channels}"
            )
        return stub_generate(prompt, seed, clip_spec)

    def embed(self, wav_bytes: bytes) -> list[float]:
        """Cluster embedding keyed to the clip's dominant tone.

        The vector sits at the detected genre's cluster mean plus a small
        deterministic offset derived from the audio bytes, mirroring the
        geometry of :func:`corpusforge.embedding_store.mock_embed`.
        """
        info = decode_wav(wav_bytes)
        if info.channels != 1:
            raise PermanentBackendError("embed: rejected with 422: mono WAV required")
        samples = info.samples.astype(np.float64)
        spectrum = np.abs(np.fft.rfft(samples))
        spectrum[0] = 0.0  # ignore DC
        dominant_hz = np.argmax(spectrum) * info.sample_rate_hz / len(samples)
        genre = GenreTag(
            int(np.argmin([abs(dominant_hz - base) for base in GENRE_BASE_HZ]))
        )
        rng = np.random.default_rng(zlib.crc32(wav_bytes))
        vector = cluster_mean(genre, self.dim) + np.float32(
            _EMBED_SIGMA
        ) * rng.standard_normal(self.dim).astype(np.float32)
        return [float(v) for v in vector]

    def health(self) -> str:
        return self.identity
