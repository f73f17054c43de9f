import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from coughtriage.audio_io import (
    AudioClip,
    MalformedWavError,
    ManifestError,
    UnsupportedCodecError,
    load_manifest,
    pad_to_min_length,
    read_wav,
    read_wav_channels,
    resample,
    to_mono,
    write_wav,
)


def test_audio_clip_validation():
    with pytest.raises(ValueError):
        AudioClip(np.array([]), 44100)
    with pytest.raises(ValueError):
        AudioClip(np.array([0.0, np.nan]), 44100)
    with pytest.raises(ValueError):
        AudioClip(np.zeros((2, 2)), 44100)
    with pytest.raises(ValueError):
        AudioClip(np.zeros(4), 0)
    assert AudioClip(np.zeros(22050), 44100).duration_s == 0.5


def test_wav_round_trip_16bit(tmp_path):
    rng = np.random.default_rng(0)
    clip = AudioClip(rng.uniform(-0.9, 0.9, 4096), 44100)
    path = tmp_path / "x.wav"
    write_wav(path, clip)
    back = read_wav(path)
    assert back.sample_rate_hz == 44100
    # 16-bit quantization bound: half an LSB of 1/32768
    assert np.max(np.abs(back.samples - clip.samples)) <= 0.5 / 32768 + 1e-12


def test_write_wav_clips_out_of_range(tmp_path):
    path = tmp_path / "hot.wav"
    write_wav(path, AudioClip(np.array([2.0, -2.0, 0.0]), 8000))
    back = read_wav(path)
    assert back.samples[0] == pytest.approx(32767 / 32768)
    assert back.samples[1] == pytest.approx(-1.0)


def _wav_bytes(fmt_code, channels, rate, bits, payload):
    block = channels * bits // 8
    header = struct.pack(
        "<4sI4s4sIHHIIHH4sI",
        b"RIFF", 36 + len(payload), b"WAVE",
        b"fmt ", 16, fmt_code, channels, rate, rate * block, block, bits,
        b"data", len(payload))
    return header + payload


def test_read_wav_8bit_unsigned(tmp_path):
    # 8-bit PCM is unsigned with midpoint 128.
    path = tmp_path / "u8.wav"
    path.write_bytes(_wav_bytes(1, 1, 8000, 8, bytes([128, 255, 0])))
    clip = read_wav(path)
    assert clip.samples[0] == pytest.approx(0.0, abs=1e-2)
    assert clip.samples[1] > 0.9
    assert clip.samples[2] < -0.9


def test_read_wav_24bit(tmp_path):
    path = tmp_path / "s24.wav"
    full = (2 ** 23 - 1).to_bytes(3, "little", signed=True)
    neg = (-2 ** 23).to_bytes(3, "little", signed=True)
    path.write_bytes(_wav_bytes(1, 1, 8000, 24, full + neg))
    clip = read_wav(path)
    assert clip.samples[0] == pytest.approx(1.0, abs=1e-6)
    assert clip.samples[1] == pytest.approx(-1.0, abs=1e-6)


def test_read_wav_float32(tmp_path):
    path = tmp_path / "f32.wav"
    payload = np.array([0.25, -0.5], dtype="<f4").tobytes()
    path.write_bytes(_wav_bytes(3, 1, 8000, 32, payload))
    np.testing.assert_allclose(read_wav(path).samples, [0.25, -0.5], atol=1e-7)


def test_read_wav_stereo_averages(tmp_path):
    path = tmp_path / "st.wav"
    frames = np.array([1000, 3000, -500, 500], dtype="<i2").tobytes()
    path.write_bytes(_wav_bytes(1, 2, 8000, 16, frames))
    clip = read_wav(path)
    assert len(clip.samples) == 2
    assert clip.samples[0] == pytest.approx(2000 / 32768)
    assert clip.samples[1] == pytest.approx(0.0, abs=1e-9)


def test_read_wav_rejects_garbage(tmp_path):
    path = tmp_path / "bad.wav"
    path.write_bytes(b"this is not a wav file at all")
    with pytest.raises(MalformedWavError):
        read_wav(path)


def test_read_wav_rejects_unknown_codec(tmp_path):
    path = tmp_path / "adpcm.wav"
    path.write_bytes(_wav_bytes(2, 1, 8000, 4, b"\x00\x00"))
    with pytest.raises(UnsupportedCodecError):
        read_wav(path)


def test_to_mono_single_channel_passthrough():
    x = np.array([0.1, -0.2])
    np.testing.assert_array_equal(to_mono([x]), x)


def test_resample_halves_length():
    clip = AudioClip(np.sin(np.linspace(0, 10, 1000)), 44100)
    down = resample(clip, 22050)
    assert down.sample_rate_hz == 22050
    assert len(down.samples) == 500
    assert resample(clip, 44100) is clip


def test_pad_to_min_length():
    short = AudioClip(np.ones(100), 44100)
    padded, was_padded = pad_to_min_length(short, 2048)
    assert was_padded and len(padded.samples) == 2048
    assert np.all(padded.samples[100:] == 0.0)
    long_clip = AudioClip(np.ones(5000), 44100)
    same, was_padded = pad_to_min_length(long_clip, 2048)
    assert not was_padded and same is long_clip


MANIFEST_HEADER = "clip_id,file_path,participant_id,cough_probability,label\n"


def _write_manifest(tmp_path, rows):
    path = tmp_path / "manifest.csv"
    path.write_text(MANIFEST_HEADER + "".join(rows))
    return path


def test_manifest_gate_is_strict(tmp_path):
    path = _write_manifest(tmp_path, [
        "a,a.wav,P1,0.86,1\n",
        "b,b.wav,P1,0.85,0\n",   # exactly at the gate: dropped
        "c,c.wav,P2,0.84,1\n",
    ])
    m = load_manifest(path, gate=0.85)
    assert [r.clip_id for r in m.records] == ["a"]
    assert m.dropped_count == 2


def test_manifest_duplicate_id_rejected(tmp_path):
    path = _write_manifest(tmp_path, ["a,a.wav,P1,0.9,1\n", "a,a.wav,P1,0.9,1\n"])
    with pytest.raises(ManifestError):
        load_manifest(path)


def test_manifest_missing_column_rejected(tmp_path):
    path = tmp_path / "manifest.csv"
    path.write_text("clip_id,file_path\nx,y.wav\n")
    with pytest.raises(ManifestError):
        load_manifest(path)


def test_manifest_tabular_join(tmp_path):
    mpath = _write_manifest(tmp_path, ["a,a.wav,P1,0.9,1\n"])
    tpath = tmp_path / "tabular.csv"
    tpath.write_text("participant_id,sex,age_years\nP1,Male,40\n")
    m = load_manifest(mpath, tabular_path=tpath)
    assert m.tabular["P1"]["sex"] == "Male"


def test_manifest_tabular_missing_participant(tmp_path):
    mpath = _write_manifest(tmp_path, ["a,a.wav,P1,0.9,1\n"])
    tpath = tmp_path / "tabular.csv"
    tpath.write_text("participant_id,sex\nP9,Male\n")
    with pytest.raises(ManifestError):
        load_manifest(mpath, tabular_path=tpath)


@settings(max_examples=25, deadline=None)
@given(st.lists(st.floats(-1.0, 1.0), min_size=1, max_size=500))
def test_wav_round_trip_property(tmp_path_factory, xs):
    tmp = tmp_path_factory.mktemp("wav")
    clip = AudioClip(np.array(xs, dtype=np.float64), 16000)
    path = tmp / "p.wav"
    write_wav(path, clip)
    back = read_wav(path)
    assert len(back.samples) == len(clip.samples)
    # half an LSB in general; a full LSB at +1.0, which clips to 32767/32768
    assert np.max(np.abs(back.samples - clip.samples)) <= 1.0 / 32768 + 1e-12
