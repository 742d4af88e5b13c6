"""Per-clip anomaly scores (match-conditioned reconstruction error) and ROC metrics."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import nn
from .audio_io import AudioClip, Manifest, load_clip
from .errors import DataError, MetricUndefinedError, UsageError
from .features import Scaler, apply_scaler, spectrogram, window_matrix
from .model import IdcaeModel, one_hot

logger = logging.getLogger(__name__)


@dataclass
class ScoreRow:
    clip_id: str
    machine_type: str
    machine_id: str
    label: str  # "normal" | "anomaly" | "unknown"
    score: float


@dataclass
class ScoreTable:
    rows: list[ScoreRow] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.rows)

    def __iter__(self):
        return iter(self.rows)

    def scores(self) -> np.ndarray:
        return np.array([r.score for r in self.rows], dtype=np.float64)

    def is_anomaly(self) -> np.ndarray:
        return np.array([r.label == "anomaly" for r in self.rows], dtype=bool)

    def sorted_by_clip(self) -> "ScoreTable":
        return ScoreTable(sorted(self.rows, key=lambda r: r.clip_id))

    def write(self, path: str | Path) -> None:
        lines = ["# clip_id\tmachine_type\tmachine_id\tlabel\tscore"]
        for r in self.rows:
            lines.append(f"{r.clip_id}\t{r.machine_type}\t{r.machine_id}\t{r.label}\t{r.score:.12g}")
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")

    @classmethod
    def read(cls, path: str | Path) -> "ScoreTable":
        if not Path(path).exists():
            raise DataError(f"no such score table: {path}")
        rows = []
        for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
            if not line.strip() or line.startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) != 5:
                raise DataError(f"{path}:{lineno}: expected 5 fields, got {len(parts)}")
            score = float(parts[4])
            if not np.isfinite(score):
                raise DataError(f"{path}:{lineno}: non-finite score")
            rows.append(ScoreRow(parts[0], parts[1], parts[2], parts[3], score))
        return cls(rows)


@dataclass(frozen=True)
class RocResult:
    auc: float
    pauc: float
    p: float
    mauc: float


def anomaly_score(model: IdcaeModel, clip: AudioClip, scaler: Scaler | None = None) -> float:
    """Mean reconstruction error over all stride-1 windows, conditioned on the
    clip's own (matching) ID; the error uses the model's training norm."""
    if model.mel is None:
        raise UsageError("model carries no mel configuration")
    scaler = scaler if scaler is not None else model.scaler
    if scaler is None:
        raise UsageError("a scaler is required to score clips")
    if clip.machine_id not in model.id_vocabulary:
        raise DataError(f"machine_id {clip.machine_id!r} not in model vocabulary")
    label_index = model.id_vocabulary.index(clip.machine_id)
    spec = apply_scaler(spectrogram(clip, model.mel), scaler)
    windows = window_matrix(spec, model.arch.frame_size)
    labels = one_hot(np.full(windows.shape[0], label_index), model.arch.n_ids)
    recon = model.forward(windows, labels, train=False)
    return float(nn.per_sample_error(recon, windows, model.norm).mean())


def score_clips(
    model: IdcaeModel,
    manifest: Manifest,
    split: str | None = "test",
    machine_type: str | None = None,
) -> tuple[ScoreTable, list[tuple[str, str]]]:
    """Score every clip of the model's machine type; returns (table, error list)."""
    machine_type = machine_type or model.machine_type
    table = ScoreTable()
    errors: list[tuple[str, str]] = []
    for entry in manifest.entries_for(machine_type, split=split):
        try:
            clip = load_clip(manifest, entry)
            score = anomaly_score(model, clip)
        except DataError as exc:
            errors.append((entry.path, str(exc)))
            logger.warning("could not score %s: %s", entry.path, exc)
            continue
        table.rows.append(
            ScoreRow(Path(entry.path).stem, entry.machine_type, entry.machine_id, entry.label, score)
        )
    return table.sorted_by_clip(), errors


# ---------------------------------------------------------------------------
# ROC metrics. Anomalies are the positive class; ties are grouped and get
# half credit, so auc equals the Mann-Whitney statistic exactly.
# ---------------------------------------------------------------------------


def _grouped_counts(scores: np.ndarray, positive: np.ndarray):
    """Per distinct score (descending): positive and negative counts."""
    n_pos = int(positive.sum())
    n_neg = int(positive.size - n_pos)
    if n_pos == 0 or n_neg == 0:
        raise MetricUndefinedError("ROC metrics need at least one normal and one anomaly")
    if not np.all(np.isfinite(scores)):
        raise DataError("scores must be finite")
    order = np.argsort(-scores, kind="stable")
    s = scores[order]
    p = positive[order].astype(np.float64)
    boundaries = np.flatnonzero(np.diff(s)) + 1
    edges = np.concatenate([[0], boundaries, [s.size]])
    pos_c = np.add.reduceat(p, edges[:-1])
    neg_c = np.diff(edges) - pos_c
    return pos_c, neg_c, n_pos, n_neg


def auc_from_arrays(scores: np.ndarray, positive: np.ndarray) -> float:
    pos_c, neg_c, n_pos, n_neg = _grouped_counts(scores, positive)
    tp_before = np.concatenate([[0.0], np.cumsum(pos_c)[:-1]])
    u = float((neg_c * tp_before).sum() + 0.5 * (neg_c * pos_c).sum())
    return u / (n_pos * n_neg)


def pauc_from_arrays(
    scores: np.ndarray, positive: np.ndarray, p: float, standardized: bool = True
) -> float:
    if not 0.0 < p <= 1.0:
        raise UsageError(f"p must lie in (0, 1], got {p}")
    pos_c, neg_c, n_pos, n_neg = _grouped_counts(scores, positive)
    x_max = p * n_neg  # clip point in false-positive counts
    area = 0.0  # in (fp x tp) count units
    fp = 0.0
    tp = 0.0
    for gp, gn in zip(pos_c, neg_c):
        if gn > 0:
            if fp + gn <= x_max:
                area += gn * tp + 0.5 * gn * gp
            else:
                delta = x_max - fp
                if delta > 0:
                    area += delta * tp + 0.5 * delta * delta * (gp / gn)
                fp = x_max
                break
            fp += gn
        tp += gp
        if fp >= x_max:
            break
    a = min(area / (n_pos * n_neg), p)  # clamp float dust; the area never exceeds p
    if not standardized:
        return float(a / p)
    a_min = p * p / 2.0
    a_max = p
    return float(0.5 * (1.0 + (a - a_min) / (a_max - a_min)))


def auc(table: ScoreTable) -> float:
    """P(score_anomaly > score_normal) + 0.5*P(tie), computed exactly."""
    return auc_from_arrays(table.scores(), table.is_anomaly())


def pauc(table: ScoreTable, p: float = 0.1, standardized: bool = True) -> float:
    """Area under the ROC restricted to FPR in [0, p] with linear interpolation
    at FPR=p; standardized mode maps it to [0.5, 1], raw mode returns area/p."""
    return pauc_from_arrays(table.scores(), table.is_anomaly(), p, standardized)


def mauc(table: ScoreTable, p: float = 0.1, standardized: bool = True) -> RocResult:
    scores, positive = table.scores(), table.is_anomaly()
    a = auc_from_arrays(scores, positive)
    pa = pauc_from_arrays(scores, positive, p, standardized)
    return RocResult(auc=a, pauc=pa, p=p, mauc=(a + pa) / 2.0)


def mauc_from_arrays(scores: np.ndarray, positive: np.ndarray, p: float = 0.1) -> float:
    a = auc_from_arrays(scores, positive)
    pa = pauc_from_arrays(scores, positive, p)
    return (a + pa) / 2.0


def roc_points(table: ScoreTable) -> np.ndarray:
    """Empirical ROC vertices as rows (fpr, tpr, threshold), from (0,0) to (1,1).

    The threshold column holds the score at/above which a clip is flagged;
    the first row uses +inf.
    """
    scores, positive = table.scores(), table.is_anomaly()
    pos_c, neg_c, n_pos, n_neg = _grouped_counts(scores, positive)
    thresholds = np.concatenate([[np.inf], np.sort(np.unique(scores))[::-1]])
    fpr = np.concatenate([[0.0], np.cumsum(neg_c) / n_neg])
    tpr = np.concatenate([[0.0], np.cumsum(pos_c) / n_pos])
    return np.column_stack([fpr, tpr, thresholds])


def histogram_bins(table: ScoreTable, n_bins: int = 40) -> np.ndarray:
    """Score histogram split by label: rows (bin_left, bin_right, n_normal, n_anomaly)."""
    scores = table.scores()
    positive = table.is_anomaly()
    lo, hi = float(scores.min()), float(scores.max())
    if hi <= lo:
        hi = lo + 1.0
    edges = np.linspace(lo, hi, n_bins + 1)
    n_norm, _ = np.histogram(scores[~positive], bins=edges)
    n_anom, _ = np.histogram(scores[positive], bins=edges)
    return np.column_stack([edges[:-1], edges[1:], n_norm, n_anom])


def write_roc_points(path: str | Path, points: np.ndarray) -> None:
    lines = ["# fpr\ttpr\tthreshold"]
    lines += [f"{r[0]:.12g}\t{r[1]:.12g}\t{r[2]:.12g}" for r in points]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def write_histogram(path: str | Path, bins: np.ndarray) -> None:
    lines = ["# bin_left\tbin_right\tn_normal\tn_anomaly"]
    lines += [f"{r[0]:.12g}\t{r[1]:.12g}\t{int(r[2])}\t{int(r[3])}" for r in bins]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
