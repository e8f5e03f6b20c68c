"""13-dimensional MFCC front end and the SPG1 feature file format."""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .audio import AudioSignal

LOG_FLOOR = 1e-10
FEATURE_MAGIC = b"SPG1"


class EmptyOutputError(ValueError):
    """Signal too short to yield a single analysis frame."""


@dataclass(frozen=True)
class FeatureConfig:
    window_ms: float = 25.0
    hop_ms: float = 10.0
    n_mel_filters: int = 26
    n_coeffs: int = 13
    pre_emphasis: float = 0.97

    def __post_init__(self):
        if not self.window_ms >= self.hop_ms > 0:
            raise ValueError(f"need window_ms >= hop_ms > 0, got {self.window_ms}/{self.hop_ms}")
        if self.n_coeffs > self.n_mel_filters:
            raise ValueError(f"n_coeffs {self.n_coeffs} exceeds n_mel_filters {self.n_mel_filters}")
        if not 0.0 <= self.pre_emphasis < 1.0:
            raise ValueError(f"pre_emphasis must lie in [0, 1), got {self.pre_emphasis}")

    def window_samples(self, sample_rate_hz: int) -> int:
        return int(round(self.window_ms * sample_rate_hz / 1000.0))

    def hop_samples(self, sample_rate_hz: int) -> int:
        return int(round(self.hop_ms * sample_rate_hz / 1000.0))


@dataclass(frozen=True)
class FrameFeatureMatrix:
    rows: np.ndarray  # [T, n_coeffs]
    frame_centers: np.ndarray  # [T], sample offsets
    source_id: str

    def __post_init__(self):
        if self.rows.ndim != 2:
            raise ValueError(f"rows must be 2-D, got shape {self.rows.shape}")
        if len(self.frame_centers) != len(self.rows):
            raise ValueError("frame_centers length must match row count")
        if not np.all(np.isfinite(self.rows)):
            raise ValueError("feature values must be finite")
        if len(self.frame_centers) > 1:
            strides = np.diff(self.frame_centers)
            if not (np.all(strides > 0) and len(set(strides.tolist())) == 1):
                raise ValueError("frame_centers must increase with a constant stride")

    @property
    def n_frames(self) -> int:
        return len(self.rows)


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def fft_size_for(window_samples: int) -> int:
    n = 1
    while n < window_samples:
        n *= 2
    return n


def mel_filterbank(n_filters: int, n_fft: int, sample_rate_hz: int) -> np.ndarray:
    """Triangular filters on the mel scale, evaluated at rfft bin frequencies.

    Returns [n_filters, n_fft//2 + 1]. Filter k rises over (f_{k-1}, f_k] and
    falls over (f_k, f_{k+1}) where the edges are equally spaced in mel
    between 0 Hz and Nyquist.
    """
    edges_hz = mel_to_hz(np.linspace(0.0, hz_to_mel(sample_rate_hz / 2.0), n_filters + 2))
    bin_hz = np.arange(n_fft // 2 + 1) * (sample_rate_hz / n_fft)
    fb = np.zeros((n_filters, n_fft // 2 + 1))
    for k in range(n_filters):
        left, center, right = edges_hz[k], edges_hz[k + 1], edges_hz[k + 2]
        rising = (bin_hz - left) / (center - left)
        falling = (right - bin_hz) / (right - center)
        fb[k] = np.clip(np.minimum(rising, falling), 0.0, None)
    return fb


def dct_matrix(n_coeffs: int, n_inputs: int) -> np.ndarray:
    """Orthonormal DCT-II matrix [n_coeffs, n_inputs]."""
    n = np.arange(n_inputs)
    k = np.arange(n_coeffs)[:, None]
    mat = np.cos(np.pi * k * (2 * n + 1) / (2 * n_inputs)) * np.sqrt(2.0 / n_inputs)
    mat[0] /= np.sqrt(2.0)
    return mat


def compute_mfcc(signal: AudioSignal, cfg: FeatureConfig, source_id: str = "") -> FrameFeatureMatrix:
    """Pre-emphasis, Hamming window, magnitude FFT, mel filterbank, floored log, DCT-II."""
    sr = signal.sample_rate_hz
    win = cfg.window_samples(sr)
    hop = cfg.hop_samples(sr)
    x = signal.samples
    if len(x) < win:
        raise EmptyOutputError(f"signal of {len(x)} samples is shorter than one {win}-sample window")
    n_frames = 1 + (len(x) - win) // hop

    emphasized = np.empty_like(x)
    emphasized[0] = x[0]
    emphasized[1:] = x[1:] - cfg.pre_emphasis * x[:-1]

    idx = np.arange(win)[None, :] + hop * np.arange(n_frames)[:, None]
    frames = emphasized[idx] * np.hamming(win)

    n_fft = fft_size_for(win)
    magnitude = np.abs(np.fft.rfft(frames, n=n_fft, axis=1))
    fb = mel_filterbank(cfg.n_mel_filters, n_fft, sr)
    energies = np.maximum(magnitude @ fb.T, LOG_FLOOR)
    rows = np.log(energies) @ dct_matrix(cfg.n_coeffs, cfg.n_mel_filters).T

    centers = hop * np.arange(n_frames, dtype=np.int64) + win // 2
    return FrameFeatureMatrix(rows=rows, frame_centers=centers, source_id=source_id)


def write_features(path: str | Path, feats: FrameFeatureMatrix) -> None:
    """Binary layout: magic "SPG1", u32 T, u32 n_coeffs, T*n little-endian f32."""
    rows = np.ascontiguousarray(feats.rows, dtype="<f4")
    with open(path, "wb") as fh:
        fh.write(FEATURE_MAGIC)
        fh.write(struct.pack("<II", rows.shape[0], rows.shape[1]))
        fh.write(rows.tobytes())


def read_features(
    path: str | Path,
    source_id: str,
    window_samples: int,
    hop_samples: int,
) -> FrameFeatureMatrix:
    """Read an SPG1 file; frame centers are rebuilt from the framing config."""
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != FEATURE_MAGIC:
            raise ValueError(f"{path}: bad magic {magic!r}, expected {FEATURE_MAGIC!r}")
        n_frames, n_coeffs = struct.unpack("<II", fh.read(8))
        data = np.frombuffer(fh.read(4 * n_frames * n_coeffs), dtype="<f4")
    if data.size != n_frames * n_coeffs:
        raise ValueError(f"{path}: truncated payload ({data.size} of {n_frames * n_coeffs} values)")
    rows = data.reshape(n_frames, n_coeffs).astype(np.float64)
    centers = hop_samples * np.arange(n_frames, dtype=np.int64) + window_samples // 2
    return FrameFeatureMatrix(rows=rows, frame_centers=centers, source_id=source_id)


def append_feature_manifest(manifest_path: str | Path, source_id: str, path: str | Path, n_frames: int) -> None:
    with open(manifest_path, "a", encoding="utf-8") as fh:
        fh.write(f"{source_id}\t{path}\t{n_frames}\n")


def read_feature_manifest(manifest_path: str | Path) -> dict[str, str]:
    """Map source_id -> feature file path."""
    mapping: dict[str, str] = {}
    with open(manifest_path, encoding="utf-8") as fh:
        for line in fh:
            line = line.rstrip("\n")
            if not line:
                continue
            source_id, path, _n = line.split("\t")
            mapping[source_id] = path
    return mapping
