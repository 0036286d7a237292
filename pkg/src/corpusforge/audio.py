"""PCM WAV container handling (RIFF/WAVE, signed 16-bit little-endian).

This is the only audio-format code in the package; no signal processing
happens here beyond packing and validating sample frames.
"""

from __future__ import annotations

import io
import wave

import numpy as np

__all__ = ["encode_wav", "decode_wav", "WavInfo", "AudioFormatError"]

SAMPLE_WIDTH_BYTES = 2  # PCM s16le


class AudioFormatError(ValueError):
    """Audio bytes do not parse as the expected PCM WAV container."""


class WavInfo:
    """Decoded WAV: sample rate, channel count, and int16 sample frames."""

    def __init__(self, sample_rate_hz: int, channels: int, samples: np.ndarray):
        self.sample_rate_hz = sample_rate_hz
        self.channels = channels
        self.samples = samples  # shape (n_frames,) for mono

    @property
    def n_frames(self) -> int:
        return int(self.samples.shape[0])


def encode_wav(samples: np.ndarray, sample_rate_hz: int, channels: int = 1) -> bytes:
    """Pack int16 samples into a WAV byte string."""
    if samples.dtype != np.int16:
        raise ValueError(f"expected int16 samples, got {samples.dtype}")
    buf = io.BytesIO()
    with wave.open(buf, "wb") as wf:
        wf.setnchannels(channels)
        wf.setsampwidth(SAMPLE_WIDTH_BYTES)
        wf.setframerate(sample_rate_hz)
        wf.writeframes(samples.tobytes())
    return buf.getvalue()


def decode_wav(data: bytes) -> WavInfo:
    """Parse WAV bytes, rejecting anything that is not PCM s16le."""
    try:
        with wave.open(io.BytesIO(data), "rb") as wf:
            channels = wf.getnchannels()
            rate = wf.getframerate()
            width = wf.getsampwidth()
            frames = wf.readframes(wf.getnframes())
    except (wave.Error, EOFError) as exc:
        raise AudioFormatError(f"not a readable WAV: {exc}") from exc
    if width != SAMPLE_WIDTH_BYTES:
        raise AudioFormatError(f"expected 16-bit PCM, got {8 * width}-bit")
    samples = np.frombuffer(frames, dtype="<i2")
    if channels > 1:
        samples = samples.reshape(-1, channels)
    return WavInfo(sample_rate_hz=rate, channels=channels, samples=samples)
