"""WAV loading/writing, dataset manifests, and synthetic machine-sound generation."""

from __future__ import annotations

import io
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.io import wavfile

from .errors import (
    DataError,
    ManifestError,
    UnsupportedWavError,
    ValidationError,
    WavFormatError,
)

logger = logging.getLogger(__name__)

LABELS = ("normal", "anomaly", "unknown")
SPLITS = ("train", "test")

PCM16_SCALE = 32768.0


@dataclass
class AudioClip:
    """Mono audio samples in [-1, 1] plus dataset provenance."""

    samples: np.ndarray
    sample_rate: int
    machine_type: str = ""
    machine_id: str = ""
    label: str = "unknown"
    split: str = "test"

    def __post_init__(self) -> None:
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 1 or self.samples.size == 0:
            raise DataError("AudioClip requires a non-empty 1-D sample vector")
        if not np.all(np.isfinite(self.samples)):
            raise DataError("AudioClip contains non-finite samples")
        if self.sample_rate <= 0:
            raise DataError(f"invalid sample rate {self.sample_rate}")

    @property
    def duration_s(self) -> float:
        return self.samples.size / self.sample_rate


@dataclass(frozen=True)
class ManifestEntry:
    path: str
    machine_type: str
    machine_id: str
    label: str
    split: str


@dataclass
class Manifest:
    """Dataset records plus the per-machine-type ID vocabulary (sorted, duplicate-free)."""

    entries: list[ManifestEntry]
    id_vocabulary: dict[str, list[str]]
    root: Path = field(default_factory=Path)

    def machine_types(self) -> list[str]:
        return sorted(self.id_vocabulary)

    def entries_for(self, machine_type: str, split: str | None = None) -> list[ManifestEntry]:
        out = [e for e in self.entries if e.machine_type == machine_type]
        if split is not None:
            out = [e for e in out if e.split == split]
        return out

    def one_hot_dim(self, machine_type: str) -> int:
        return len(self.id_vocabulary[machine_type])

    def resolve(self, entry: ManifestEntry) -> Path:
        p = Path(entry.path)
        return p if p.is_absolute() else self.root / p


def load_wav(path: str | Path) -> AudioClip:
    """Load a PCM16 or IEEE-float32 WAV as a mono float clip in [-1, 1].

    Multichannel input keeps channel 0 only; integer PCM is scaled by the
    type's max magnitude (int16 -> /32768).
    """
    path = Path(path)
    if not path.exists():
        raise DataError(f"no such file: {path}")
    try:
        rate, data = wavfile.read(str(path))
    except ValueError as exc:
        raise WavFormatError(f"{path}: {exc}") from exc
    if data.ndim == 2:
        data = data[:, 0]
    if data.size == 0:
        raise DataError(f"{path}: empty WAV")
    if data.dtype == np.int16:
        samples = data.astype(np.float64) / PCM16_SCALE
    elif data.dtype == np.float32:
        samples = data.astype(np.float64)
        if not np.all(np.isfinite(samples)):
            raise WavFormatError(f"{path}: non-finite float samples")
        if np.max(np.abs(samples)) > 1.0 + 1e-6:
            raise WavFormatError(f"{path}: float samples outside [-1, 1]")
    else:
        raise UnsupportedWavError(
            f"{path}: unsupported WAV encoding {data.dtype}; PCM16 or float32 required"
        )
    return AudioClip(samples=samples, sample_rate=int(rate))


def write_wav(path: str | Path, clip: AudioClip, encoding: str = "pcm16") -> None:
    """Write a clip as PCM16 (default) or float32 WAV."""
    if encoding == "pcm16":
        scaled = np.round(clip.samples * PCM16_SCALE)
        data = np.clip(scaled, -32768, 32767).astype(np.int16)
    elif encoding == "float32":
        data = clip.samples.astype(np.float32)
    else:
        raise UnsupportedWavError(f"unsupported encoding {encoding!r}")
    wavfile.write(str(path), clip.sample_rate, data)


def parse_manifest(path: str | Path, id_vocabulary: dict[str, list[str]] | None = None) -> Manifest:
    """Parse a tab-separated manifest file.

    One record per line: path<TAB>machine_type<TAB>machine_id<TAB>label<TAB>split.
    Lines starting with '#' are comments. Relative paths resolve against the
    manifest's directory. An explicit id_vocabulary overrides the derived
    (sorted) one; it must cover every ID seen.
    """
    path = Path(path)
    if not path.exists():
        raise DataError(f"no such manifest: {path}")
    entries: list[ManifestEntry] = []
    seen_paths: set[str] = set()
    seen_ids: dict[str, set[str]] = {}
    for lineno, raw in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        fields = line.split("\t")
        if len(fields) != 5:
            raise ManifestError(f"{path}:{lineno}: expected 5 tab-separated fields, got {len(fields)}")
        rec_path, machine_type, machine_id, label, split = (f.strip() for f in fields)
        if label not in LABELS:
            raise ManifestError(f"{path}:{lineno}: unknown label {label!r}")
        if split not in SPLITS:
            raise ManifestError(f"{path}:{lineno}: unknown split {split!r}")
        if split == "train" and label != "normal":
            raise ManifestError(
                f"{path}:{lineno}: train-split clips must be labeled normal (got {label!r})"
            )
        if rec_path in seen_paths:
            raise ManifestError(f"{path}:{lineno}: duplicate entry for {rec_path!r}")
        seen_paths.add(rec_path)
        entries.append(ManifestEntry(rec_path, machine_type, machine_id, label, split))
        seen_ids.setdefault(machine_type, set()).add(machine_id)

    if id_vocabulary is None:
        vocab = {mt: sorted(ids) for mt, ids in seen_ids.items()}
    else:
        vocab = {mt: list(ids) for mt, ids in id_vocabulary.items()}
        for mt, ids in seen_ids.items():
            known = set(vocab.get(mt, ()))
            missing = ids - known
            if missing:
                raise ValidationError(f"{path}: IDs {sorted(missing)} not in vocabulary for {mt!r}")
    for mt, ids in vocab.items():
        if len(ids) != len(set(ids)):
            raise ValidationError(f"duplicate IDs in vocabulary for {mt!r}")
    return Manifest(entries=entries, id_vocabulary=vocab, root=path.parent)


def write_manifest(path: str | Path, entries: list[ManifestEntry]) -> None:
    buf = io.StringIO()
    buf.write("# path\tmachine_type\tmachine_id\tlabel\tsplit\n")
    for e in entries:
        buf.write(f"{e.path}\t{e.machine_type}\t{e.machine_id}\t{e.label}\t{e.split}\n")
    Path(path).write_text(buf.getvalue(), encoding="utf-8")


def load_clip(manifest: Manifest, entry: ManifestEntry) -> AudioClip:
    clip = load_wav(manifest.resolve(entry))
    clip.machine_type = entry.machine_type
    clip.machine_id = entry.machine_id
    clip.label = entry.label
    clip.split = entry.split
    return clip


# ---------------------------------------------------------------------------
# Synthetic multi-ID machine audio
# ---------------------------------------------------------------------------

ANOMALY_KINDS = ("burst", "shift", "clicks")

_N_HARMONICS = 4
_HARMONIC_DECAY = 0.6
_BASE_AMPLITUDE = 0.12
_AM_DEPTH = 0.3
_NOISE_DB = -30.0
_BURST_DB = 6.0
_SHIFT_FACTOR = 1.35
_CLICK_RATE_HZ = 4.0


@dataclass(frozen=True)
class SynthSpec:
    """Deterministic recipe for one synthetic clip."""

    id_index: int
    anomalous: bool = False
    seed: int = 0
    duration_s: float = 4.0
    sample_rate: int = 16000
    machine_type: str = "synth"
    anomaly_kind: str | None = None  # None: chosen by seed


def fundamental_hz(id_index: int) -> float:
    """Per-ID fundamental: IDs are spaced 60 Hz apart starting at 180 Hz."""
    return 180.0 + 60.0 * id_index


def synth_clip(spec: SynthSpec) -> AudioClip:
    """Generate a machine-like harmonic clip; pure function of its spec.

    Normal clip = 4-harmonic stack on the ID's fundamental with slow amplitude
    modulation plus -30 dB Gaussian noise. Anomalous clip = same base plus one
    of: broadband noise burst (100-300 ms, +6 dB), fundamental shifted by 35%,
    or impulsive clicks at 4 Hz.
    """
    if spec.duration_s <= 0:
        raise DataError("duration_s must be positive")
    if spec.sample_rate < 8000:
        raise DataError("sample_rate must be >= 8000")
    if spec.anomaly_kind is not None and spec.anomaly_kind not in ANOMALY_KINDS:
        raise DataError(f"unknown anomaly kind {spec.anomaly_kind!r}")

    n = int(round(spec.duration_s * spec.sample_rate))
    t = np.arange(n) / spec.sample_rate
    rng_base = np.random.default_rng([spec.seed, spec.id_index, 0])
    rng_anom = np.random.default_rng([spec.seed, spec.id_index, 1])

    # Base draws happen before any anomaly branching so the anomalous clip
    # shares its carrier with the normal clip of the same seed.
    phases = rng_base.uniform(0.0, 2.0 * np.pi, _N_HARMONICS)
    am_rate = rng_base.uniform(0.5, 1.5)
    am_phase = rng_base.uniform(0.0, 2.0 * np.pi)
    noise = rng_base.standard_normal(n)

    kind = None
    if spec.anomalous:
        kind = spec.anomaly_kind or ANOMALY_KINDS[rng_anom.integers(0, len(ANOMALY_KINDS))]

    f0 = fundamental_hz(spec.id_index)
    if kind == "shift":
        f0 *= _SHIFT_FACTOR

    stack = np.zeros(n)
    for h in range(1, _N_HARMONICS + 1):
        stack += _HARMONIC_DECAY ** (h - 1) * np.sin(2.0 * np.pi * h * f0 * t + phases[h - 1])
    envelope = 1.0 + _AM_DEPTH * np.sin(2.0 * np.pi * am_rate * t + am_phase)
    signal = _BASE_AMPLITUDE * stack * envelope
    sig_rms = float(np.sqrt(np.mean(signal**2)))
    x = signal + noise * sig_rms * 10.0 ** (_NOISE_DB / 20.0)

    if kind == "burst":
        burst_len = int(rng_anom.uniform(0.1, 0.3) * spec.sample_rate)
        burst_len = min(burst_len, n)
        start = int(rng_anom.uniform(0, max(n - burst_len, 1)))
        x[start : start + burst_len] += (
            rng_anom.standard_normal(burst_len) * sig_rms * 10.0 ** (_BURST_DB / 20.0)
        )
    elif kind == "clicks":
        period = int(spec.sample_rate / _CLICK_RATE_HZ)
        click_len = max(int(0.002 * spec.sample_rate), 8)
        click = 0.5 * np.exp(-np.arange(click_len) / (0.0005 * spec.sample_rate))
        offset = int(rng_anom.uniform(0, period))
        for pos in range(offset, n - click_len, period):
            x[pos : pos + click_len] += click

    x = np.clip(x, -0.999, 0.999)
    return AudioClip(
        samples=x,
        sample_rate=spec.sample_rate,
        machine_type=spec.machine_type,
        machine_id=f"id_{spec.id_index:02d}",
        label="anomaly" if spec.anomalous else "normal",
        split="test" if spec.anomalous else "train",
    )


def synth_dataset(
    out_dir: str | Path,
    n_ids: int = 3,
    clips_per_id: int = 70,
    anomaly_fraction: float = 0.25,
    seed: int = 0,
    duration_s: float = 4.0,
    sample_rate: int = 16000,
    machine_type: str = "synth",
) -> Path:
    """Write a synthetic dataset (WAVs + manifest.tsv) and return the manifest path.

    Train split: clips_per_id normal clips per ID. Test split: clips_per_id
    clips per ID of which round(anomaly_fraction * clips_per_id) are anomalous
    (anomaly kinds cycle burst/shift/clicks for even coverage). Deterministic
    per seed; anomalies never appear in the train split.
    """
    if n_ids < 1 or clips_per_id < 1:
        raise DataError("n_ids and clips_per_id must be >= 1")
    if not 0.0 <= anomaly_fraction <= 1.0:
        raise DataError("anomaly_fraction must lie in [0, 1]")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    n_anom = int(round(anomaly_fraction * clips_per_id))
    entries: list[ManifestEntry] = []
    for split_i, split in enumerate(SPLITS):
        for id_index in range(n_ids):
            for i in range(clips_per_id):
                anomalous = split == "test" and i < n_anom
                clip_seed = ((seed * 2 + split_i) * 4096 + id_index) * 4096 + i
                spec = SynthSpec(
                    id_index=id_index,
                    anomalous=anomalous,
                    seed=clip_seed,
                    duration_s=duration_s,
                    sample_rate=sample_rate,
                    machine_type=machine_type,
                    anomaly_kind=ANOMALY_KINDS[i % len(ANOMALY_KINDS)] if anomalous else None,
                )
                clip = synth_clip(spec)
                label = "anomaly" if anomalous else "normal"
                name = f"{machine_type}_id{id_index:02d}_{split}_{label}_{i:03d}.wav"
                write_wav(out_dir / name, clip)
                entries.append(ManifestEntry(name, machine_type, f"id_{id_index:02d}", label, split))
    manifest_path = out_dir / "manifest.tsv"
    write_manifest(manifest_path, entries)
    logger.info("wrote %d clips to %s", len(entries), out_dir)
    return manifest_path
