"""Training loop: per-epoch window resampling, match/non-match conditioning, Adam."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import nn
from .audio_io import Manifest, load_clip
from .errors import DataError, NumericError, UsageError
from .features import (
    FeatureWindow,
    MelConfig,
    Scaler,
    apply_scaler,
    fit_scaler,
    identity_scaler,
    sample_starts,
    spectrogram,
)
from .model import ArchDescriptor, IdcaeModel, one_hot

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    alpha: float = 0.75  # probability of conditioning with the matching label
    c_value: float = 5.0  # constant reconstruction target for non-matches
    norm: str = "l1"
    epochs: int = 100
    frames_per_spec: int = 300
    batch_size: int = 512
    seed: int = 0
    base_lr: float = 1e-3
    lr_decay: float = 0.95
    lr_decay_every: int = 5

    def __post_init__(self) -> None:
        if not 0.0 < self.alpha <= 1.0:
            raise UsageError(f"alpha must lie in (0, 1], got {self.alpha}")
        if self.norm not in nn.NORMS:
            raise UsageError(f"norm must be one of {nn.NORMS}")
        if min(self.epochs, self.frames_per_spec, self.batch_size) < 1:
            raise UsageError("epochs, frames_per_spec and batch_size must be >= 1")


@dataclass
class EpochStats:
    epoch: int
    lr: float
    mean_loss: float
    match_loss: float
    nonmatch_loss: float


TrainLog = list


@dataclass
class ConditionedSample:
    """One window with its sampled conditioning label and reconstruction target."""

    window: FeatureWindow
    true_id: int
    assigned_label: np.ndarray
    is_match: bool
    target: np.ndarray

    def __post_init__(self) -> None:
        assigned = int(np.argmax(self.assigned_label))
        if self.is_match != (assigned == self.true_id):
            raise UsageError("is_match flag contradicts the assigned label")


def assign_labels(
    true_ids: np.ndarray, n_ids: int, alpha: float, rng: np.random.Generator
) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized label assignment: match w.p. alpha, else uniform non-match."""
    true_ids = np.asarray(true_ids, dtype=np.int64)
    n = true_ids.size
    if n_ids < 1:
        raise UsageError("n_ids must be >= 1")
    if n_ids == 1 or alpha >= 1.0:
        return true_ids.copy(), np.ones(n, dtype=bool)
    is_match = rng.random(n) < alpha
    offsets = rng.integers(1, n_ids, size=n)  # uniform over the n_ids-1 others
    assigned = np.where(is_match, true_ids, (true_ids + offsets) % n_ids)
    return assigned, is_match


def assign_label(
    true_id: int, n_ids: int, alpha: float, rng: np.random.Generator
) -> tuple[np.ndarray, bool]:
    """Single-sample form of assign_labels; returns (one-hot label, is_match)."""
    assigned, is_match = assign_labels(np.array([true_id]), n_ids, alpha, rng)
    return one_hot(assigned, n_ids)[0], bool(is_match[0])


@dataclass
class Batch:
    x: np.ndarray  # (b, F, M)
    labels: np.ndarray  # (b, n_ids) one-hot
    targets: np.ndarray  # (b, F, M)
    is_match: np.ndarray  # (b,) bool


def build_batch(
    windows: np.ndarray,
    true_ids: np.ndarray,
    n_ids: int,
    config: TrainConfig,
    rng: np.random.Generator,
) -> Batch:
    """Assign labels to a window batch and build targets per the match rule:

    matches reconstruct the input, non-matches target the constant c_value.
    """
    windows = np.asarray(windows, dtype=np.float64)
    assigned, is_match = assign_labels(true_ids, n_ids, config.alpha, rng)
    targets = np.where(is_match[:, None, None], windows, config.c_value)
    return Batch(x=windows, labels=one_hot(assigned, n_ids), targets=targets, is_match=is_match)


def conditioned_sample(
    window: FeatureWindow, true_id: int, n_ids: int, config: TrainConfig, rng: np.random.Generator
) -> ConditionedSample:
    label, is_match = assign_label(true_id, n_ids, config.alpha, rng)
    target = window.values if is_match else np.full_like(window.values, config.c_value)
    return ConditionedSample(window, true_id, label, is_match, target)


def write_train_log(path: str | Path, log: list[EpochStats]) -> None:
    lines = ["# epoch\tlr\tmean_loss\tmatch_loss\tnonmatch_loss"]
    for s in log:
        lines.append(f"{s.epoch}\t{s.lr:.12g}\t{s.mean_loss:.12g}\t{s.match_loss:.12g}\t{s.nonmatch_loss:.12g}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_train_log(path: str | Path) -> list[EpochStats]:
    log = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if not line or line.startswith("#"):
            continue
        e, lr, mean_l, match_l, nonmatch_l = line.split("\t")
        log.append(EpochStats(int(e), float(lr), float(mean_l), float(match_l), float(nonmatch_l)))
    return log


@dataclass
class _TrainData:
    frames_major: np.ndarray  # (sum T, M) concatenation of all spectrograms
    offsets: np.ndarray  # per-spec start row in frames_major
    n_frames: np.ndarray  # per-spec frame count
    true_ids: np.ndarray  # per-spec vocabulary index
    scaler: Scaler
    skipped: list[str] = field(default_factory=list)


def prepare_training_data(
    manifest: Manifest,
    machine_type: str,
    mel_cfg: MelConfig,
    frame_size: int,
    standardize: bool = True,
) -> _TrainData:
    """Load train-split clips, extract standardized spectrograms, fit the scaler."""
    entries = manifest.entries_for(machine_type, split="train")
    if not entries:
        raise DataError(f"no train-split entries for machine type {machine_type!r}")
    vocab = manifest.id_vocabulary[machine_type]
    specs, ids, skipped = [], [], []
    sample_rate = None
    for entry in entries:
        if entry.label != "normal":
            raise DataError(f"train clip {entry.path!r} is labeled {entry.label!r}")
        clip = load_clip(manifest, entry)
        if sample_rate is None:
            sample_rate = clip.sample_rate
        elif clip.sample_rate != sample_rate:
            raise DataError(
                f"mixed sample rates in train split: {clip.sample_rate} vs {sample_rate} ({entry.path})"
            )
        spec = spectrogram(clip, mel_cfg)
        if spec.n_frames < frame_size:
            skipped.append(entry.path)
            logger.warning("skipping %s: %d frames < window of %d", entry.path, spec.n_frames, frame_size)
            continue
        specs.append(spec)
        ids.append(vocab.index(entry.machine_id))
    if not specs:
        raise DataError("no usable train clips (all shorter than one window)")
    scaler = fit_scaler(specs) if standardize else identity_scaler(mel_cfg.n_mels)
    std_specs = [apply_scaler(s, scaler) for s in specs]
    frames_major = np.concatenate([s.values.T for s in std_specs], axis=0)
    n_frames = np.array([s.n_frames for s in std_specs], dtype=np.int64)
    offsets = np.concatenate([[0], np.cumsum(n_frames)[:-1]])
    return _TrainData(
        frames_major=frames_major,
        offsets=offsets,
        n_frames=n_frames,
        true_ids=np.array(ids, dtype=np.int64),
        scaler=scaler,
        skipped=skipped,
    )


def train(
    manifest: Manifest,
    mel_cfg: MelConfig,
    train_cfg: TrainConfig,
    arch: ArchDescriptor | None = None,
    machine_type: str | None = None,
    standardize: bool = True,
) -> tuple[IdcaeModel, list[EpochStats]]:
    """Train a conditioned auto-encoder on the manifest's train split.

    Per epoch, frames_per_spec windows are resampled from every spectrogram,
    each gets a fresh match/non-match label, and batches are optimized with
    Adam under the exponential LR schedule. Deterministic for a fixed seed.
    """
    if machine_type is None:
        types = manifest.machine_types()
        if len(types) != 1:
            raise UsageError(f"machine_type must be given when the manifest has {len(types)} types")
        machine_type = types[0]
    vocab = manifest.id_vocabulary[machine_type]
    n_ids = len(vocab)
    if train_cfg.alpha < 1.0 and n_ids < 2:
        raise UsageError("alpha < 1 requires at least 2 machine IDs")

    if arch is None:
        arch = ArchDescriptor(n_mels=mel_cfg.n_mels, n_ids=n_ids)
    else:
        arch = replace(arch, n_mels=mel_cfg.n_mels, n_ids=n_ids)

    data = prepare_training_data(manifest, machine_type, mel_cfg, arch.frame_size, standardize)

    # One root seed, split per subsystem.
    rng_windows = np.random.default_rng([train_cfg.seed, 1])
    rng_labels = np.random.default_rng([train_cfg.seed, 2])
    rng_shuffle = np.random.default_rng([train_cfg.seed, 3])

    model = IdcaeModel(
        arch,
        seed=[train_cfg.seed, 0],
        scaler=data.scaler,
        id_vocabulary=vocab,
        machine_type=machine_type,
        norm=train_cfg.norm,
        mel=mel_cfg,
        train_meta={
            "alpha": train_cfg.alpha,
            "c_value": train_cfg.c_value,
            "epochs": train_cfg.epochs,
            "frames_per_spec": train_cfg.frames_per_spec,
            "batch_size": train_cfg.batch_size,
            "seed": train_cfg.seed,
            "base_lr": train_cfg.base_lr,
            "standardize": standardize,
            "n_train_clips": int(data.true_ids.size),
            "skipped_clips": data.skipped,
        },
    )
    adam = nn.Adam([p for _, p in model.trainable_parameters()], lr=train_cfg.base_lr)

    n_specs = data.true_ids.size
    fps = train_cfg.frames_per_spec
    window_ids = np.repeat(data.true_ids, fps)
    log: list[EpochStats] = []
    for epoch in range(train_cfg.epochs):
        nn.set_lr(adam, epoch, train_cfg.lr_decay, train_cfg.lr_decay_every)
        starts = np.empty(n_specs * fps, dtype=np.int64)
        for i in range(n_specs):
            starts[i * fps : (i + 1) * fps] = data.offsets[i] + sample_starts(
                int(data.n_frames[i]), arch.frame_size, fps, rng_windows
            )
        assigned, is_match = assign_labels(window_ids, n_ids, train_cfg.alpha, rng_labels)
        order = rng_shuffle.permutation(starts.size)

        sums = np.zeros(3)  # loss, match, nonmatch
        counts = np.zeros(3)
        for lo in range(0, order.size, train_cfg.batch_size):
            idx = order[lo : lo + train_cfg.batch_size]
            if idx.size < 2:
                continue  # batch-norm needs >= 2 rows
            rows = starts[idx, None] + np.arange(arch.frame_size)[None, :]
            x = data.frames_major[rows]
            match = is_match[idx]
            targets = np.where(match[:, None, None], x, train_cfg.c_value)
            labels = one_hot(assigned[idx], n_ids)
            pred = model.forward(x, labels, train=True)
            loss, d_pred = nn.loss_and_grad(pred, targets, train_cfg.norm)
            if not np.isfinite(loss):
                raise NumericError(f"non-finite loss at epoch {epoch}")
            errors = nn.per_sample_error(pred, targets, train_cfg.norm)
            sums += (errors.sum(), errors[match].sum(), errors[~match].sum())
            counts += (idx.size, match.sum(), (~match).sum())
            model.backward(d_pred)
            adam.step(model.gradients())

        with np.errstate(invalid="ignore"):
            means = np.where(counts > 0, sums / np.maximum(counts, 1), np.nan)
        stats = EpochStats(
            epoch=epoch,
            lr=adam.lr,
            mean_loss=float(means[0]),
            match_loss=float(means[1]),
            nonmatch_loss=float(means[2]),
        )
        log.append(stats)
        logger.info(
            "epoch %d lr=%.3g loss=%.5g match=%.5g nonmatch=%.5g",
            stats.epoch, stats.lr, stats.mean_loss, stats.match_loss, stats.nonmatch_loss,
        )
    return model, log
