"""Log-mel spectrogram extraction and (frames x mels) window slicing."""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from .audio_io import AudioClip
from .errors import DataError, InputTooShortError, ShapeError, UsageError

STD_CLAMP = 1e-8


@dataclass(frozen=True)
class MelConfig:
    n_fft: int = 1024
    hop: int = 512
    n_mels: int = 128
    fmin: float = 0.0
    fmax: Optional[float] = None  # None: sample_rate / 2
    log_floor: float = 1e-10

    def __post_init__(self) -> None:
        if self.n_fft < 2 or (self.n_fft & (self.n_fft - 1)) != 0:
            raise UsageError(f"n_fft must be a power of two, got {self.n_fft}")
        if self.hop < 1:
            raise UsageError("hop must be >= 1")
        if self.n_mels < 1:
            raise UsageError("n_mels must be >= 1")
        if self.fmin < 0:
            raise UsageError("fmin must be >= 0")
        if self.log_floor <= 0:
            raise UsageError("log_floor must be positive")

    def resolved_fmax(self, sample_rate: int) -> float:
        fmax = sample_rate / 2.0 if self.fmax is None else self.fmax
        if not self.fmin < fmax <= sample_rate / 2.0:
            raise UsageError(f"need fmin < fmax <= sample_rate/2, got [{self.fmin}, {fmax}]")
        return fmax


@dataclass
class Spectrogram:
    """(n_mels x frames) matrix of log-mel power values."""

    values: np.ndarray
    config: MelConfig
    standardized: bool = False

    @property
    def n_mels(self) -> int:
        return self.values.shape[0]

    @property
    def n_frames(self) -> int:
        return self.values.shape[1]


@dataclass
class Scaler:
    """Per-mel-bin standardization statistics fitted on a train split."""

    mean: np.ndarray
    std: np.ndarray

    def __post_init__(self) -> None:
        self.mean = np.asarray(self.mean, dtype=np.float64)
        self.std = np.asarray(self.std, dtype=np.float64)
        if self.mean.shape != self.std.shape or self.mean.ndim != 1:
            raise ShapeError("scaler mean/std must be 1-D vectors of equal length")
        if np.any(self.std <= 0):
            raise UsageError("scaler std entries must be positive")

    @property
    def n_mels(self) -> int:
        return self.mean.size


@dataclass
class FeatureWindow:
    """(frames x mels) block cut from a standardized spectrogram."""

    values: np.ndarray
    start_frame: int
    source_clip: object | None = None


def n_stft_frames(num_samples: int, cfg: MelConfig) -> int:
    return (num_samples - cfg.n_fft) // cfg.hop + 1


def hann_window(n: int) -> np.ndarray:
    # Periodic (DFT-even) Hann, the spectral-analysis convention.
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(n) / n)


def stft_power(clip: AudioClip, cfg: MelConfig) -> np.ndarray:
    """Power spectrogram |FFT|^2, shape (n_fft/2+1, T); no padding or centering.

    Frame t covers samples [t*hop, t*hop + n_fft).
    """
    x = clip.samples
    if x.size < cfg.n_fft:
        raise InputTooShortError(
            f"clip has {x.size} samples, shorter than one {cfg.n_fft}-sample window"
        )
    frames = np.lib.stride_tricks.sliding_window_view(x, cfg.n_fft)[:: cfg.hop]
    spec = np.fft.rfft(frames * hann_window(cfg.n_fft), axis=1)
    return (spec.real**2 + spec.imag**2).T


def hz_to_mel(f: np.ndarray | float) -> np.ndarray | float:
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m: np.ndarray | float) -> np.ndarray | float:
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_filterbank(n_mels: int, n_fft: int, sample_rate: int, fmin: float, fmax: float) -> np.ndarray:
    """Triangular filterbank (n_mels x n_fft/2+1), area-normalized.

    Triangle endpoints sit at n_mels+2 equally-mel-spaced points in [fmin, fmax].
    """
    pts_hz = mel_to_hz(np.linspace(hz_to_mel(fmin), hz_to_mel(fmax), n_mels + 2))
    bin_hz = np.arange(n_fft // 2 + 1) * (sample_rate / n_fft)
    left, center, right = pts_hz[:-2, None], pts_hz[1:-1, None], pts_hz[2:, None]
    up = (bin_hz[None, :] - left) / np.maximum(center - left, 1e-12)
    down = (right - bin_hz[None, :]) / np.maximum(right - center, 1e-12)
    fb = np.maximum(0.0, np.minimum(up, down))
    fb *= 2.0 / (right - left)  # unit area per triangle
    return fb


def mel_project(power: np.ndarray, cfg: MelConfig, sample_rate: int) -> np.ndarray:
    """Project a power spectrogram onto the mel filterbank."""
    expected_rows = cfg.n_fft // 2 + 1
    if power.ndim != 2 or power.shape[0] != expected_rows:
        raise ShapeError(f"power matrix must have {expected_rows} rows, got {power.shape}")
    fb = mel_filterbank(cfg.n_mels, cfg.n_fft, sample_rate, cfg.fmin, cfg.resolved_fmax(sample_rate))
    return fb @ power


def log_compress(mel_power: np.ndarray, log_floor: float) -> np.ndarray:
    """10*log10(max(x, log_floor)) elementwise."""
    if np.any(mel_power < 0):
        raise UsageError("log_compress expects non-negative power values")
    return 10.0 * np.log10(np.maximum(mel_power, log_floor))


def spectrogram(clip: AudioClip, cfg: MelConfig) -> Spectrogram:
    """Full pipeline: STFT power -> mel projection -> dB compression."""
    mel = mel_project(stft_power(clip, cfg), cfg, clip.sample_rate)
    return Spectrogram(values=log_compress(mel, cfg.log_floor), config=cfg, standardized=False)


def fit_scaler(train_spectrograms: list[Spectrogram]) -> Scaler:
    """Per-mel-bin mean and population std over all frames of all train spectrograms."""
    if not train_spectrograms:
        raise DataError("fit_scaler requires at least one spectrogram")
    n_mels = train_spectrograms[0].n_mels
    for spec in train_spectrograms:
        if spec.n_mels != n_mels:
            raise ShapeError("all spectrograms must share the same mel count")
        if spec.standardized:
            raise UsageError("fit_scaler inputs must not be standardized already")
    stacked = np.concatenate([s.values for s in train_spectrograms], axis=1)
    mean = stacked.mean(axis=1)
    std = np.maximum(stacked.std(axis=1), STD_CLAMP)
    return Scaler(mean=mean, std=std)


def identity_scaler(n_mels: int) -> Scaler:
    """Pass-through scaler (mean 0, std 1) for pipelines without standardization."""
    return Scaler(mean=np.zeros(n_mels), std=np.ones(n_mels))


def apply_scaler(spec: Spectrogram, scaler: Scaler) -> Spectrogram:
    if spec.standardized:
        raise UsageError("spectrogram is already standardized")
    if scaler.n_mels != spec.n_mels:
        raise ShapeError(f"scaler has {scaler.n_mels} bins, spectrogram {spec.n_mels}")
    values = (spec.values - scaler.mean[:, None]) / scaler.std[:, None]
    return Spectrogram(values=values, config=spec.config, standardized=True)


def invert_scaler(spec: Spectrogram, scaler: Scaler) -> Spectrogram:
    if not spec.standardized:
        raise UsageError("spectrogram is not standardized")
    values = spec.values * scaler.std[:, None] + scaler.mean[:, None]
    return Spectrogram(values=values, config=spec.config, standardized=False)


def sample_starts(n_frames: int, frame_size: int, n: int, rng: np.random.Generator) -> np.ndarray:
    """n start frames drawn uniformly with replacement from [0, T - frame_size]."""
    if n_frames < frame_size:
        raise InputTooShortError(f"{n_frames} frames < window of {frame_size}")
    return rng.integers(0, n_frames - frame_size + 1, size=n)


def window_matrix(spec: Spectrogram, frame_size: int) -> np.ndarray:
    """All stride-1 windows as one (T-F+1, F, M) array."""
    if spec.n_frames < frame_size:
        raise InputTooShortError(f"{spec.n_frames} frames < window of {frame_size}")
    frames_major = np.ascontiguousarray(spec.values.T)  # (T, M)
    view = np.lib.stride_tricks.sliding_window_view(frames_major, (frame_size,), axis=0)
    return np.ascontiguousarray(np.swapaxes(view, 1, 2))


def gather_windows(frames_major: np.ndarray, starts: np.ndarray, frame_size: int) -> np.ndarray:
    """Windows (len(starts), F, M) gathered from a (T, M) frames-major matrix."""
    idx = starts[:, None] + np.arange(frame_size)[None, :]
    return frames_major[idx]


def _require_standardized(spec: Spectrogram) -> None:
    if not spec.standardized:
        raise UsageError("windows must be cut from a standardized spectrogram")


def sample_windows(
    spec: Spectrogram, frame_size: int, n: int, rng: np.random.Generator
) -> list[FeatureWindow]:
    """n random (F x M) windows; deterministic for a fixed rng state."""
    _require_standardized(spec)
    starts = sample_starts(spec.n_frames, frame_size, n, rng)
    frames_major = spec.values.T
    return [
        FeatureWindow(values=frames_major[s : s + frame_size].copy(), start_frame=int(s))
        for s in starts
    ]


def all_windows(spec: Spectrogram, frame_size: int) -> list[FeatureWindow]:
    """All T-F+1 stride-1 windows, in order."""
    _require_standardized(spec)
    mat = window_matrix(spec, frame_size)
    return [FeatureWindow(values=mat[i], start_frame=i) for i in range(mat.shape[0])]


def replace_mels(cfg: MelConfig, n_mels: int) -> MelConfig:
    return replace(cfg, n_mels=n_mels)
