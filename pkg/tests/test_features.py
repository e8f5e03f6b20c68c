"""MFCC front end against a straight-line reference DSP chain.

The oracle below is a deliberately naive second implementation (direct DFT
sums, per-bin triangle evaluation, explicit DCT cosines) written before
looking at the library's output.
"""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sppg.audio import AudioSignal
from sppg.features import (FeatureConfig, FrameFeatureMatrix, EmptyOutputError,
                           LOG_FLOOR, append_feature_manifest, compute_mfcc,
                           dct_matrix, fft_size_for, hz_to_mel, mel_filterbank,
                           mel_to_hz, read_feature_manifest, read_features,
                           write_features)


# -- reference implementation (oracle) -------------------------------------


def oracle_mel(f):
    return 2595.0 * math.log10(1.0 + f / 700.0)


def oracle_mel_inv(m):
    return 700.0 * (10.0 ** (m / 2595.0) - 1.0)


def oracle_mfcc(samples, sr, cfg: FeatureConfig):
    win = round(cfg.window_ms * sr / 1000.0)
    hop = round(cfg.hop_ms * sr / 1000.0)
    n_fft = 1
    while n_fft < win:
        n_fft *= 2
    n_bins = n_fft // 2 + 1

    # pre-emphasis
    y = [samples[0]] + [samples[t] - cfg.pre_emphasis * samples[t - 1]
                        for t in range(1, len(samples))]
    # Hamming window coefficients
    ham = [0.54 - 0.46 * math.cos(2 * math.pi * n / (win - 1)) for n in range(win)]

    # mel filterbank, one triangle at a time
    top_mel = oracle_mel(sr / 2.0)
    edges = [oracle_mel_inv(top_mel * k / (cfg.n_mel_filters + 1))
             for k in range(cfg.n_mel_filters + 2)]
    fb = [[0.0] * n_bins for _ in range(cfg.n_mel_filters)]
    for k in range(cfg.n_mel_filters):
        lo, mid, hi = edges[k], edges[k + 1], edges[k + 2]
        for b in range(n_bins):
            f = b * sr / n_fft
            if lo < f <= mid:
                fb[k][b] = (f - lo) / (mid - lo)
            elif mid < f < hi:
                fb[k][b] = (hi - f) / (hi - mid)

    # orthonormal DCT-II
    m = cfg.n_mel_filters
    dct = [[math.sqrt((1.0 if i == 0 else 2.0) / m)
            * math.cos(math.pi * i * (2 * j + 1) / (2 * m))
            for j in range(m)] for i in range(cfg.n_coeffs)]

    n_frames = 1 + (len(samples) - win) // hop
    rows = []
    for frame in range(n_frames):
        chunk = [y[frame * hop + n] * ham[n] for n in range(win)]
        chunk = chunk + [0.0] * (n_fft - win)
        mags = []
        for b in range(n_bins):
            re = sum(chunk[n] * math.cos(2 * math.pi * b * n / n_fft) for n in range(n_fft))
            im = -sum(chunk[n] * math.sin(2 * math.pi * b * n / n_fft) for n in range(n_fft))
            mags.append(math.hypot(re, im))
        logs = [math.log(max(sum(fb[k][b] * mags[b] for b in range(n_bins)), LOG_FLOOR))
                for k in range(cfg.n_mel_filters)]
        rows.append([sum(dct[i][j] * logs[j] for j in range(m))
                     for i in range(cfg.n_coeffs)])
    return np.array(rows)


# -- oracle comparisons ------------------------------------------------------


def test_tone_matches_oracle(tone_16k):
    cfg = FeatureConfig()
    got = compute_mfcc(tone_16k, cfg, source_id="tone")
    want = oracle_mfcc(tone_16k.samples.tolist(), 16000, cfg)
    assert got.rows.shape == want.shape
    np.testing.assert_allclose(got.rows, want, atol=1e-6)


def test_noise_matches_oracle():
    rng = np.random.default_rng(11)
    samples = 0.2 * rng.standard_normal(1600)
    sig = AudioSignal(samples=samples, sample_rate_hz=16000)
    cfg = FeatureConfig()
    got = compute_mfcc(sig, cfg)
    want = oracle_mfcc(samples.tolist(), 16000, cfg)
    np.testing.assert_allclose(got.rows, want, atol=1e-6)


def test_oracle_agreement_other_geometry():
    # non-default window/hop and an 8 kHz rate exercise fft sizing
    rng = np.random.default_rng(3)
    samples = rng.uniform(-0.5, 0.5, 1200)
    sig = AudioSignal(samples=samples, sample_rate_hz=8000)
    cfg = FeatureConfig(window_ms=20.0, hop_ms=10.0, n_mel_filters=20, n_coeffs=10)
    got = compute_mfcc(sig, cfg)
    want = oracle_mfcc(samples.tolist(), 8000, cfg)
    np.testing.assert_allclose(got.rows, want, atol=1e-6)


# -- contract details --------------------------------------------------------


def test_frame_count_and_centers(tone_16k):
    feats = compute_mfcc(tone_16k, FeatureConfig())
    n = len(tone_16k.samples)
    assert feats.n_frames == 1 + (n - 400) // 160
    assert feats.frame_centers[0] == 200
    assert feats.frame_centers[1] == 360
    np.testing.assert_array_equal(np.diff(feats.frame_centers), 160)
    assert feats.rows.shape[1] == 13


def test_silence_is_constant_dct_of_log_floor():
    sig = AudioSignal(samples=np.zeros(1600), sample_rate_hz=16000)
    cfg = FeatureConfig()
    feats = compute_mfcc(sig, cfg)
    logs = np.full(cfg.n_mel_filters, np.log(LOG_FLOOR))
    expected_row = dct_matrix(cfg.n_coeffs, cfg.n_mel_filters) @ logs
    for row in feats.rows:
        np.testing.assert_allclose(row, expected_row, atol=1e-9)


def test_shift_invariance_by_one_hop():
    rng = np.random.default_rng(5)
    samples = 0.3 * rng.standard_normal(3200)
    cfg = FeatureConfig()
    a = compute_mfcc(AudioSignal(samples=samples, sample_rate_hz=16000), cfg)
    b = compute_mfcc(AudioSignal(samples=samples[160:], sample_rate_hz=16000), cfg)
    # frame 0 of the shifted signal differs: pre-emphasis has no predecessor
    np.testing.assert_allclose(b.rows[1:], a.rows[2: 1 + len(b.rows)], atol=1e-9)


def test_amplitude_scaling_moves_only_c0(tone_16k):
    cfg = FeatureConfig()
    base = compute_mfcc(tone_16k, cfg).rows
    scaled = compute_mfcc(
        AudioSignal(samples=1.7 * tone_16k.samples, sample_rate_hz=16000), cfg).rows
    np.testing.assert_allclose(scaled[:, 1:], base[:, 1:], atol=1e-6)
    # orthonormal DCT row 0 is sqrt(1/M) constant, so c0 moves by log(c)*sqrt(M)
    shift = np.log(1.7) * np.sqrt(cfg.n_mel_filters)
    np.testing.assert_allclose(scaled[:, 0] - base[:, 0], shift, atol=1e-6)


def test_determinism(tone_16k):
    a = compute_mfcc(tone_16k, FeatureConfig())
    b = compute_mfcc(tone_16k, FeatureConfig())
    assert a.rows.tobytes() == b.rows.tobytes()


def test_too_short_signal_raises():
    sig = AudioSignal(samples=np.zeros(399), sample_rate_hz=16000)
    with pytest.raises(EmptyOutputError):
        compute_mfcc(sig, FeatureConfig())


def test_mel_roundtrip():
    f = np.array([0.0, 100.0, 1000.0, 7999.0])
    np.testing.assert_allclose(mel_to_hz(hz_to_mel(f)), f, atol=1e-9)


def test_fft_size_for():
    assert fft_size_for(400) == 512
    assert fft_size_for(512) == 512
    assert fft_size_for(513) == 1024


def test_dct_rows_orthonormal():
    d = dct_matrix(13, 26)
    np.testing.assert_allclose(d @ d.T, np.eye(13), atol=1e-12)


def test_filterbank_shape_and_support():
    fb = mel_filterbank(26, 512, 16000)
    assert fb.shape == (26, 257)
    assert np.all(fb >= 0)
    assert np.all(fb.sum(axis=1) > 0)  # every filter covers at least one bin


# -- config validation -------------------------------------------------------


def test_config_rejects_bad_values():
    with pytest.raises(ValueError):
        FeatureConfig(n_coeffs=30, n_mel_filters=26)
    with pytest.raises(ValueError):
        FeatureConfig(window_ms=5.0, hop_ms=10.0)
    with pytest.raises(ValueError):
        FeatureConfig(pre_emphasis=1.0)


def test_matrix_rejects_irregular_centers():
    with pytest.raises(ValueError):
        FrameFeatureMatrix(rows=np.zeros((3, 13)),
                           frame_centers=np.array([200, 360, 500]), source_id="x")


# -- file formats --------------------------------------------------------------


def test_feature_file_roundtrip(tmp_path, tone_16k):
    feats = compute_mfcc(tone_16k, FeatureConfig(), source_id="tone")
    path = tmp_path / "tone.spg1"
    write_features(path, feats)
    raw = path.read_bytes()
    assert raw[:4] == b"SPG1"
    back = read_features(path, "tone", window_samples=400, hop_samples=160)
    assert back.n_frames == feats.n_frames
    np.testing.assert_array_equal(back.frame_centers, feats.frame_centers)
    np.testing.assert_allclose(back.rows, feats.rows, atol=1e-4)  # f32 storage


def test_feature_file_bad_magic(tmp_path):
    path = tmp_path / "bad.spg1"
    path.write_bytes(b"NOPE" + b"\x00" * 16)
    with pytest.raises(ValueError, match="magic"):
        read_features(path, "x", 400, 160)


def test_manifest_roundtrip(tmp_path):
    manifest = tmp_path / "features.manifest"
    append_feature_manifest(manifest, "utt1", "/tmp/utt1.spg1", 42)
    append_feature_manifest(manifest, "utt2", "/tmp/utt2.spg1", 7)
    mapping = read_feature_manifest(manifest)
    assert mapping == {"utt1": "/tmp/utt1.spg1", "utt2": "/tmp/utt2.spg1"}


# -- properties ---------------------------------------------------------------


@settings(max_examples=25, deadline=None)
@given(st.integers(min_value=400, max_value=2000), st.integers(min_value=0, max_value=2**31 - 1))
def test_output_finite_and_shaped(n_samples, seed):
    rng = np.random.default_rng(seed)
    sig = AudioSignal(samples=rng.uniform(-1, 1, n_samples), sample_rate_hz=16000)
    feats = compute_mfcc(sig, FeatureConfig())
    assert feats.rows.shape == (1 + (n_samples - 400) // 160, 13)
    assert np.all(np.isfinite(feats.rows))
