"""WAV input/output and clip cutting for listening-test audio."""

from __future__ import annotations

import wave
from dataclasses import dataclass
from pathlib import Path

import numpy as np

PCM_SCALE = 32768.0


class AudioFormatError(ValueError):
    """Raised when a file is not the PCM-16 mono WAV this pipeline consumes."""


@dataclass(frozen=True)
class AudioSignal:
    samples: np.ndarray  # float64 in [-1, 1]
    sample_rate_hz: int

    def __post_init__(self):
        if self.sample_rate_hz <= 0:
            raise ValueError(f"sample_rate_hz must be positive, got {self.sample_rate_hz}")
        if not np.all(np.isfinite(self.samples)):
            raise ValueError("audio samples must be finite")

    def __len__(self) -> int:
        return len(self.samples)

    @property
    def duration_s(self) -> float:
        return len(self.samples) / self.sample_rate_hz


def read_wav(path: str | Path) -> AudioSignal:
    """Read a PCM-16 mono WAV file, scaling samples by 1/32768."""
    try:
        with wave.open(str(path), "rb") as wf:
            n_channels = wf.getnchannels()
            sampwidth = wf.getsampwidth()
            comptype = wf.getcomptype()
            rate = wf.getframerate()
            n = wf.getnframes()
            if comptype != "NONE":
                raise AudioFormatError(f"unsupported compression type {comptype!r}: only PCM is supported")
            if n_channels != 1:
                raise AudioFormatError(f"unsupported channel count {n_channels}: only mono is supported")
            if sampwidth != 2:
                raise AudioFormatError(f"unsupported sample width {sampwidth} bytes: only 16-bit PCM is supported")
            raw = wf.readframes(n)
    except wave.Error as exc:
        raise AudioFormatError(f"unreadable WAV encoding in {path}: {exc}") from exc
    samples = np.frombuffer(raw, dtype="<i2").astype(np.float64) / PCM_SCALE
    return AudioSignal(samples=samples, sample_rate_hz=rate)


def write_wav(path: str | Path, signal: AudioSignal) -> None:
    """Write a PCM-16 mono WAV file (values clipped to [-1, 1])."""
    quantized = np.clip(np.round(signal.samples * PCM_SCALE), -32768, 32767).astype("<i2")
    with wave.open(str(path), "wb") as wf:
        wf.setnchannels(1)
        wf.setsampwidth(2)
        wf.setframerate(signal.sample_rate_hz)
        wf.writeframes(quantized.tobytes())


def cut_clip(
    signal: AudioSignal,
    start_sample: int,
    end_sample: int,
    context_ms: float = 150.0,
    fade_ms: float = 10.0,
) -> AudioSignal:
    """Cut [start, end) with surrounding context on each side and linear fades.

    Context is clamped to the signal boundaries; fades are applied inside the
    cut so clip edges never click.
    """
    if not 0 <= start_sample < end_sample <= len(signal):
        raise ValueError(f"invalid clip span [{start_sample}, {end_sample}) for {len(signal)} samples")
    ctx = int(round(context_ms * signal.sample_rate_hz / 1000.0))
    lo = max(0, start_sample - ctx)
    hi = min(len(signal), end_sample + ctx)
    clip = signal.samples[lo:hi].copy()
    fade = int(round(fade_ms * signal.sample_rate_hz / 1000.0))
    fade = min(fade, len(clip) // 2)
    if fade > 0:
        ramp = np.linspace(0.0, 1.0, fade, endpoint=False)
        clip[:fade] *= ramp
        clip[-fade:] *= ramp[::-1]
    return AudioSignal(samples=clip, sample_rate_hz=signal.sample_rate_hz)
