"""WAV I/O, manifest parsing, and synthetic clip generation."""

from __future__ import annotations

import numpy as np
import pytest
from scipy.io import wavfile

from idcae import AudioClip, SynthSpec, load_wav, parse_manifest, synth_clip, write_wav
from idcae.audio_io import fundamental_hz, load_clip, write_manifest, ManifestEntry
from idcae.errors import DataError, ManifestError, UnsupportedWavError, WavFormatError


def test_pcm16_scaling(tmp_path):
    path = tmp_path / "a.wav"
    wavfile.write(path, 16000, np.array([0, 16384, -16384], dtype=np.int16))
    clip = load_wav(path)
    assert clip.sample_rate == 16000
    np.testing.assert_allclose(clip.samples, [0.0, 0.5, -0.5])


def test_duration_sample_count(tmp_path):
    path = tmp_path / "b.wav"
    wavfile.write(path, 16000, np.zeros(160000, dtype=np.int16))
    clip = load_wav(path)
    assert clip.samples.size == 160000
    assert clip.duration_s == pytest.approx(10.0)


def test_stereo_keeps_channel_zero(tmp_path):
    path = tmp_path / "c.wav"
    data = np.stack([np.arange(100), -np.arange(100)], axis=1).astype(np.int16)
    wavfile.write(path, 8000, data)
    clip = load_wav(path)
    assert clip.samples.size == 100
    np.testing.assert_allclose(clip.samples, np.arange(100) / 32768.0)


def test_float32_roundtrip(tmp_path):
    rng = np.random.default_rng(0)
    samples = rng.uniform(-1, 1, 500)
    clip = AudioClip(samples=samples, sample_rate=16000)
    path = tmp_path / "f.wav"
    write_wav(path, clip, encoding="float32")
    back = load_wav(path)
    np.testing.assert_allclose(back.samples, samples.astype(np.float32))


def test_pcm16_roundtrip_within_one_lsb(tmp_path):
    rng = np.random.default_rng(1)
    samples = rng.uniform(-0.99, 0.99, 1000)
    path = tmp_path / "g.wav"
    write_wav(path, AudioClip(samples=samples, sample_rate=16000), encoding="pcm16")
    back = load_wav(path)
    assert np.max(np.abs(back.samples - samples)) <= 1.0 / 32768.0
    # second write reproduces the stored integers exactly
    path2 = tmp_path / "g2.wav"
    write_wav(path2, back, encoding="pcm16")
    assert path2.read_bytes() == path.read_bytes()


def test_malformed_header_rejected(tmp_path):
    path = tmp_path / "bad.wav"
    path.write_bytes(b"not a riff file at all, definitely not")
    with pytest.raises(WavFormatError):
        load_wav(path)


def test_unsupported_encoding_rejected(tmp_path):
    path = tmp_path / "i32.wav"
    wavfile.write(path, 16000, np.zeros(100, dtype=np.int32))
    with pytest.raises(UnsupportedWavError):
        load_wav(path)


def test_missing_file():
    with pytest.raises(DataError):
        load_wav("/nonexistent/file.wav")


# -- manifests --------------------------------------------------------------


def _write_manifest(tmp_path, lines):
    path = tmp_path / "manifest.tsv"
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def test_manifest_vocabulary_sorted(tmp_path):
    path = _write_manifest(
        tmp_path,
        [
            "# comment",
            "a.wav\tpump\tid_04\tnormal\ttrain",
            "b.wav\tpump\tid_00\tnormal\ttrain",
            "c.wav\tpump\tid_02\tanomaly\ttest",
        ],
    )
    man = parse_manifest(path)
    assert man.id_vocabulary == {"pump": ["id_00", "id_02", "id_04"]}
    assert man.one_hot_dim("pump") == 3


def test_manifest_two_machine_types_independent(tmp_path):
    path = _write_manifest(
        tmp_path,
        [
            "a.wav\tpump\tid_00\tnormal\ttrain",
            "b.wav\tfan\tid_09\tnormal\ttrain",
            "c.wav\tfan\tid_01\tnormal\ttrain",
        ],
    )
    man = parse_manifest(path)
    assert man.id_vocabulary == {"fan": ["id_01", "id_09"], "pump": ["id_00"]}
    assert man.machine_types() == ["fan", "pump"]


def test_manifest_anomaly_in_train_rejected(tmp_path):
    path = _write_manifest(tmp_path, ["a.wav\tpump\tid_00\tanomaly\ttrain"])
    with pytest.raises(ManifestError, match=":1:"):
        parse_manifest(path)


def test_manifest_bad_tokens_carry_line_number(tmp_path):
    path = _write_manifest(
        tmp_path,
        ["a.wav\tpump\tid_00\tnormal\ttrain", "b.wav\tpump\tid_00\tweird\ttest"],
    )
    with pytest.raises(ManifestError, match=":2:"):
        parse_manifest(path)
    path = _write_manifest(tmp_path, ["a.wav\tpump\tid_00\tnormal\tdev"])
    with pytest.raises(ManifestError, match="split"):
        parse_manifest(path)


def test_manifest_duplicate_path_rejected(tmp_path):
    path = _write_manifest(
        tmp_path,
        ["a.wav\tpump\tid_00\tnormal\ttrain", "a.wav\tpump\tid_01\tnormal\ttrain"],
    )
    with pytest.raises(ManifestError, match="duplicate"):
        parse_manifest(path)


def test_manifest_entry_resolution_and_load(tmp_path):
    wavfile.write(tmp_path / "x.wav", 16000, np.zeros(64, dtype=np.int16))
    path = _write_manifest(tmp_path, ["x.wav\tpump\tid_00\tnormal\ttrain"])
    man = parse_manifest(path)
    clip = load_clip(man, man.entries[0])
    assert clip.machine_id == "id_00"
    assert clip.split == "train"


def test_write_manifest_roundtrip(tmp_path):
    entries = [
        ManifestEntry("a.wav", "pump", "id_00", "normal", "train"),
        ManifestEntry("b.wav", "pump", "id_01", "anomaly", "test"),
    ]
    path = tmp_path / "m.tsv"
    write_manifest(path, entries)
    man = parse_manifest(path)
    assert man.entries == entries


# -- synthetic clips ----------------------------------------------------------


def test_synth_deterministic():
    spec = SynthSpec(id_index=1, anomalous=False, seed=7)
    a = synth_clip(spec)
    b = synth_clip(spec)
    assert np.array_equal(a.samples, b.samples)


def _dominant_peak_hz(clip):
    mag = np.abs(np.fft.rfft(clip.samples))
    freqs = np.fft.rfftfreq(clip.samples.size, 1.0 / clip.sample_rate)
    keep = freqs >= 50.0
    return freqs[keep][np.argmax(mag[keep])]


def test_synth_peaks_at_per_id_fundamentals():
    for id_index in (0, 2):
        clip = synth_clip(SynthSpec(id_index=id_index, seed=3))
        assert abs(_dominant_peak_hz(clip) - fundamental_hz(id_index)) < 5.0
    assert fundamental_hz(0) == 180.0
    assert fundamental_hz(2) == 300.0


def _max_window_energy(samples, win):
    # brute-force sliding-window energy
    sq = samples**2
    c = np.concatenate([[0.0], np.cumsum(sq)])
    return np.max(c[win:] - c[:-win])


def test_synth_burst_boosts_short_time_energy():
    normal = synth_clip(SynthSpec(id_index=0, anomalous=False, seed=9))
    burst = synth_clip(SynthSpec(id_index=0, anomalous=True, seed=9, anomaly_kind="burst"))
    win = int(0.1 * normal.sample_rate)
    assert _max_window_energy(burst.samples, win) >= 1.5 * _max_window_energy(normal.samples, win)


def test_synth_anomalous_shares_base_with_normal():
    normal = synth_clip(SynthSpec(id_index=1, anomalous=False, seed=4))
    clicked = synth_clip(SynthSpec(id_index=1, anomalous=True, seed=4, anomaly_kind="clicks"))
    # outside click positions the signals agree
    diff = clicked.samples - normal.samples
    assert np.count_nonzero(diff) < 0.2 * diff.size


def test_synth_shift_moves_fundamental():
    shifted = synth_clip(SynthSpec(id_index=0, anomalous=True, seed=5, anomaly_kind="shift"))
    assert abs(_dominant_peak_hz(shifted) - 1.35 * fundamental_hz(0)) < 5.0


def test_synth_precondition_errors():
    with pytest.raises(DataError):
        synth_clip(SynthSpec(id_index=0, duration_s=0.0))
    with pytest.raises(DataError):
        synth_clip(SynthSpec(id_index=0, sample_rate=4000))
    with pytest.raises(DataError):
        synth_clip(SynthSpec(id_index=0, anomalous=True, anomaly_kind="nope"))
