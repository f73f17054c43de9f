import numpy as np
import pytest

from coughtriage.audio_io import AudioClip
from coughtriage.features import (
    FeatureKind,
    FeatureMatrix,
    MelParams,
    contrast_band_edges,
    dct_ii_basis,
    hz_to_mel,
    load_feature_matrix,
    mel_filterbank,
    mel_spectrogram_db,
    mel_to_hz,
    mfcc,
    pool_features,
    save_feature_matrix,
    spectral_contrast,
)


def _half_second_clip(seed=0):
    rng = np.random.default_rng(seed)
    return AudioClip(rng.uniform(-0.5, 0.5, 22050), 44100)


def test_hz_to_mel_reference_points():
    assert hz_to_mel(0.0) == 0.0
    assert hz_to_mel(700.0) == pytest.approx(2595.0 * np.log10(2.0), rel=1e-12)
    assert hz_to_mel(7000.0) == pytest.approx(2595.0 * np.log10(11.0), rel=1e-12)


def test_mel_round_trip():
    f = np.linspace(1.0, 20000.0, 500)
    back = mel_to_hz(hz_to_mel(f))
    assert np.max(np.abs(back - f) / f) < 1e-9


def test_filterbank_rows_are_triangular_and_nonnegative():
    fb = mel_filterbank(MelParams(), 44100)
    assert fb.shape == (128, 1025)
    assert np.all(fb >= 0.0)
    # every filter has support and a single interior peak
    for row in fb:
        assert row.sum() > 0.0
        peak = int(np.argmax(row))
        assert np.all(np.diff(row[: peak + 1]) >= -1e-15)
        assert np.all(np.diff(row[peak:]) <= 1e-15)


def test_mel_spectrogram_shape_and_kind():
    m = mel_spectrogram_db(_half_second_clip())
    assert m.values.shape == (128, 44)
    assert m.kind is FeatureKind.MEL_SPECTROGRAM_DB


def test_mel_spectrogram_silence_is_floor():
    # log10 floor of 1e-10 makes pure silence exactly -100 dB everywhere
    m = mel_spectrogram_db(AudioClip(np.zeros(22050), 44100))
    assert np.all(m.values == -100.0)


def test_mel_spectrogram_tone_localizes():
    sr = 44100
    t = np.arange(22050) / sr
    m = mel_spectrogram_db(AudioClip(0.5 * np.sin(2 * np.pi * 1000.0 * t), sr))
    centers = mel_to_hz(np.linspace(hz_to_mel(0.0), hz_to_mel(sr / 2), 130))[1:-1]
    hot = centers[int(np.argmax(m.values.mean(axis=1)))]
    assert abs(hot - 1000.0) < 150.0


def test_dct_basis_is_orthonormal():
    b = dct_ii_basis(32)
    np.testing.assert_allclose(b @ b.T, np.eye(32), atol=1e-12)


def test_mfcc_shape_and_dct_relation():
    clip = _half_second_clip(1)
    m = mfcc(clip, n_mfcc=20)
    assert m.values.shape == (20, 44)
    assert m.kind is FeatureKind.MFCC
    mel = mel_spectrogram_db(clip)
    expected = (dct_ii_basis(128) @ mel.values)[:20]
    np.testing.assert_allclose(m.values, expected, atol=1e-9)


def test_contrast_band_edges_octaves():
    edges = contrast_band_edges(8, 80.0, 22050.0)
    assert len(edges) == 10
    assert edges[0] == 0.0
    np.testing.assert_allclose(edges[1:-1], 80.0 * 2.0 ** np.arange(8))
    assert edges[-1] == 22050.0


def test_spectral_contrast_shape_and_nonnegative():
    c = spectral_contrast(_half_second_clip(2))
    assert c.values.shape == (9, 44)
    assert c.kind is FeatureKind.SPECTRAL_CONTRAST
    # contrast is log(peak) - log(valley) >= 0 within every band
    assert np.all(c.values >= -1e-12)


def test_spectral_contrast_rejects_impossible_ladder():
    with pytest.raises(ValueError):
        spectral_contrast(_half_second_clip(), base_hz=200.0, n_bands=8)


def test_pool_features_matches_loop_oracle():
    rng = np.random.default_rng(3)
    values = rng.standard_normal((9, 44))
    pooled = pool_features(FeatureMatrix(values, FeatureKind.SPECTRAL_CONTRAST))
    expected = [row.mean() for row in values] + [row.std() for row in values]
    np.testing.assert_allclose(pooled, expected, atol=1e-12)


def test_feature_matrix_rejects_bad_values():
    with pytest.raises(ValueError):
        FeatureMatrix(np.array([1.0, 2.0]), FeatureKind.MFCC)
    with pytest.raises(ValueError):
        FeatureMatrix(np.array([[np.inf]]), FeatureKind.MFCC)


def test_feature_matrix_file_round_trip(tmp_path):
    rng = np.random.default_rng(4)
    m = FeatureMatrix(rng.standard_normal((128, 44)), FeatureKind.MEL_SPECTROGRAM_DB)
    path = tmp_path / "m.fmx"
    save_feature_matrix(path, m)
    back = load_feature_matrix(path)
    assert back.kind is m.kind
    assert back.values.shape == m.values.shape
    # stored as float32 on disk
    np.testing.assert_allclose(back.values, m.values, atol=1e-6)


def test_feature_matrix_file_rejects_wrong_magic(tmp_path):
    path = tmp_path / "bad.fmx"
    path.write_bytes(b"NOPE" + b"\x00" * 16)
    with pytest.raises(ValueError):
        load_feature_matrix(path)
