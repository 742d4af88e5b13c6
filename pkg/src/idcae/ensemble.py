"""Hyperparameter grid search, top-3 selection, and convex score-combination search."""

from __future__ import annotations

import dataclasses
import logging
import warnings
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .audio_io import Manifest
from .errors import DataError, UsageError
from .features import MelConfig
from .model import ArchDescriptor, save_model
from .scoring import RocResult, ScoreTable, mauc, mauc_from_arrays, score_clips
from .train import TrainConfig, train, write_train_log

logger = logging.getLogger(__name__)

LEDGER_NAME = "grid_ledger.tsv"


@dataclass(frozen=True)
class GridSpec:
    alphas: tuple[float, ...] = (0.9, 0.75, 0.5)
    c_values: tuple[float, ...] = (0.0, 2.5, 5.0, 10.0)
    mel_counts: tuple[int, ...] = (128, 256)
    norms: tuple[str, ...] = ("l1", "l2sq")
    frame_size: int = 10

    def configs(self) -> list["GridConfig"]:
        out = []
        for alpha in self.alphas:
            for c in self.c_values:
                for mels in self.mel_counts:
                    for norm in self.norms:
                        out.append(GridConfig(alpha, c, mels, norm, self.frame_size))
        return out

    def size(self) -> int:
        return len(self.alphas) * len(self.c_values) * len(self.mel_counts) * len(self.norms)


@dataclass(frozen=True)
class GridConfig:
    alpha: float
    c_value: float
    n_mels: int
    norm: str
    frame_size: int

    def tag(self) -> str:
        return f"a{self.alpha:g}_C{self.c_value:g}_M{self.n_mels}_{self.norm}"


@dataclass
class GridResult:
    config: GridConfig
    model_path: Path
    table: ScoreTable
    roc: RocResult


@dataclass
class EnsembleResult:
    members: list[GridConfig]
    member_roc: list[RocResult]
    weights: np.ndarray
    best_mauc: float
    best_roc: RocResult
    combined: ScoreTable
    surface: np.ndarray | None = None  # rows (w1, w2, w3, mauc)


def _ledger_path(out_dir: Path) -> Path:
    return out_dir / LEDGER_NAME


def _read_ledger(out_dir: Path) -> dict[str, dict]:
    path = _ledger_path(out_dir)
    done: dict[str, dict] = {}
    if not path.exists():
        return done
    for line in path.read_text(encoding="utf-8").splitlines():
        if not line.strip() or line.startswith("#"):
            continue
        tag, alpha, c, mels, norm, f, a, pa, ma, model_path, status = line.split("\t")
        done[tag] = {
            "config": GridConfig(float(alpha), float(c), int(mels), norm, int(f)),
            "auc": float(a),
            "pauc": float(pa),
            "mauc": float(ma),
            "model_path": model_path,
            "status": status,
        }
    return done


def _append_ledger(out_dir: Path, cfg: GridConfig, roc: RocResult | None, model_path: str, status: str) -> None:
    path = _ledger_path(out_dir)
    if not path.exists():
        path.write_text(
            "# tag\talpha\tc_value\tn_mels\tnorm\tframe_size\tauc\tpauc\tmauc\tmodel_path\tstatus\n",
            encoding="utf-8",
        )
    a, pa, ma = (roc.auc, roc.pauc, roc.mauc) if roc else (float("nan"),) * 3
    with path.open("a", encoding="utf-8") as fh:
        fh.write(
            f"{cfg.tag()}\t{cfg.alpha:g}\t{cfg.c_value:g}\t{cfg.n_mels}\t{cfg.norm}\t"
            f"{cfg.frame_size}\t{a:.12g}\t{pa:.12g}\t{ma:.12g}\t{model_path}\t{status}\n"
        )


def run_grid_config(
    manifest: Manifest,
    cfg: GridConfig,
    out_dir: Path,
    mel_base: MelConfig,
    train_base: TrainConfig,
    arch_base: ArchDescriptor,
    machine_type: str | None,
    seed_index: int,
    p: float = 0.1,
) -> GridResult:
    """Train, save and score one grid configuration."""
    mel_cfg = replace(mel_base, n_mels=cfg.n_mels)
    train_cfg = replace(
        train_base,
        alpha=cfg.alpha,
        c_value=cfg.c_value,
        norm=cfg.norm,
        seed=train_base.seed * 4096 + seed_index,
    )
    arch = replace(arch_base, frame_size=cfg.frame_size)
    model, log = train(manifest, mel_cfg, train_cfg, arch=arch, machine_type=machine_type)
    model_path = out_dir / f"model_{cfg.tag()}.idcae"
    save_model(model, model_path)
    write_train_log(out_dir / f"train_log_{cfg.tag()}.tsv", log)
    table, _ = score_clips(model, manifest, split="test")
    table.write(out_dir / f"scores_{cfg.tag()}.tsv")
    return GridResult(config=cfg, model_path=model_path, table=table, roc=mauc(table, p=p))


def run_grid(
    manifest: Manifest,
    grid: GridSpec,
    out_dir: str | Path,
    mel_base: MelConfig | None = None,
    train_base: TrainConfig | None = None,
    arch_base: ArchDescriptor | None = None,
    machine_type: str | None = None,
    p: float = 0.1,
    jobs: int = 1,
) -> list[GridResult]:
    """Train and score every grid configuration; completed configs are skipped
    via the on-disk ledger, and individual failures are recorded but do not
    abort the run."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    mel_base = mel_base or MelConfig()
    train_base = train_base or TrainConfig()
    arch_base = arch_base or ArchDescriptor()
    done = _read_ledger(out_dir)

    configs = grid.configs()
    pending: list[tuple[int, GridConfig]] = []
    results: dict[str, GridResult] = {}
    for i, cfg in enumerate(configs):
        tag = cfg.tag()
        rec = done.get(tag)
        if rec and rec["status"] == "ok" and Path(rec["model_path"]).exists():
            scores_path = out_dir / f"scores_{tag}.tsv"
            results[tag] = GridResult(
                config=cfg,
                model_path=Path(rec["model_path"]),
                table=ScoreTable.read(scores_path),
                roc=RocResult(rec["auc"], rec["pauc"], p, rec["mauc"]),
            )
            logger.info("grid: %s already complete, skipping", tag)
        else:
            pending.append((i, cfg))

    def _run_one(item: tuple[int, GridConfig]) -> tuple[GridConfig, GridResult | None, str]:
        i, cfg = item
        try:
            res = run_grid_config(
                manifest, cfg, out_dir, mel_base, train_base, arch_base, machine_type, i, p
            )
            return cfg, res, "ok"
        except Exception as exc:  # per-config isolation: record and continue
            logger.error("grid config %s failed: %s", cfg.tag(), exc)
            return cfg, None, f"failed:{type(exc).__name__}"

    if jobs > 1 and len(pending) > 1:
        # Threads suffice: the heavy matmuls release the GIL and each config
        # trains an independent model instance.
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=jobs) as pool:
            outputs = list(pool.map(_run_one, pending))
    else:
        outputs = [_run_one(item) for item in pending]

    for cfg, res, status in outputs:
        if res is not None:
            results[cfg.tag()] = res
            _append_ledger(out_dir, cfg, res.roc, str(res.model_path), "ok")
        else:
            _append_ledger(out_dir, cfg, None, "", status)
    return [results[cfg.tag()] for cfg in configs if cfg.tag() in results]


def select_top(results: list[GridResult], k: int = 3) -> list[GridResult]:
    """Top k by mAUC, ties broken by higher pAUC then lexicographic config tag."""
    if len(results) < k:
        warnings.warn(f"only {len(results)} grid results available, requested top {k}")
    ranked = sorted(results, key=lambda r: (-r.roc.mauc, -r.roc.pauc, r.config.tag()))
    return ranked[:k]


def _aligned_scores(tables: list[ScoreTable]) -> tuple[np.ndarray, np.ndarray, list]:
    """Stack member scores into (n_members, n_clips) aligned by clip_id."""
    if not tables:
        raise UsageError("at least one score table required")
    base = tables[0].sorted_by_clip()
    ids = [r.clip_id for r in base.rows]
    matrix = [base.scores()]
    for t in tables[1:]:
        ts = t.sorted_by_clip()
        if [r.clip_id for r in ts.rows] != ids:
            raise DataError("score tables do not cover identical clip sets")
        matrix.append(ts.scores())
    return np.vstack(matrix), base.is_anomaly(), base.rows


def _minmax(scores: np.ndarray) -> np.ndarray:
    lo, hi = scores.min(axis=1, keepdims=True), scores.max(axis=1, keepdims=True)
    span = np.where(hi > lo, hi - lo, 1.0)
    return (scores - lo) / span


def combine_scores(tables: list[ScoreTable], weights, normalize: bool = True) -> ScoreTable:
    """Per-clip convex combination of member scores.

    Member scores are min-max normalized to [0, 1] per table first (raw mode
    available via normalize=False).
    """
    weights = np.asarray(weights, dtype=np.float64)
    if weights.size != len(tables):
        raise UsageError(f"{len(tables)} tables but {weights.size} weights")
    if np.any(weights < 0) or not np.isclose(weights.sum(), 1.0):
        raise UsageError("weights must be non-negative and sum to 1")
    matrix, _, rows = _aligned_scores(tables)
    if normalize:
        matrix = _minmax(matrix)
    combined = weights @ matrix
    return ScoreTable(
        [dataclasses.replace(r, score=float(s)) for r, s in zip(rows, combined)]
    )


def simplex_weights(resolution: int) -> np.ndarray:
    """All lattice points {(i/R, j/R, (R-i-j)/R)}, (R+1)(R+2)/2 of them."""
    if resolution < 1:
        raise UsageError("resolution must be >= 1")
    pts = []
    for i in range(resolution + 1):
        for j in range(resolution - i + 1):
            pts.append((i, j, resolution - i - j))
    return np.asarray(pts, dtype=np.float64) / resolution


def search_weights(
    tables: list[ScoreTable],
    resolution: int = 100,
    p: float = 0.1,
    normalize: bool = True,
    keep_surface: bool = False,
    member_configs: list[GridConfig] | None = None,
) -> EnsembleResult:
    """Exhaustive mAUC maximization over the barycentric weight lattice.

    Deterministic: ties resolve to the lexicographically smallest weights.
    The optimum always dominates the three vertices (they are lattice points).
    """
    if len(tables) != 3:
        raise UsageError("weight search expects exactly 3 member tables")
    matrix, positive, rows = _aligned_scores(tables)
    if normalize:
        matrix = _minmax(matrix)
    grid = simplex_weights(resolution)
    best_w = None
    best_val = -np.inf
    surface = np.empty((grid.shape[0], 4)) if keep_surface else None
    for k, w in enumerate(grid):
        val = mauc_from_arrays(w @ matrix, positive, p=p)
        if keep_surface:
            surface[k, :3] = w
            surface[k, 3] = val
        if val > best_val:
            best_val = val
            best_w = w
    combined_scores = best_w @ matrix
    combined = ScoreTable(
        [dataclasses.replace(r, score=float(s)) for r, s in zip(rows, combined_scores)]
    )
    member_roc = [mauc(t, p=p) for t in tables]
    return EnsembleResult(
        members=member_configs or [],
        member_roc=member_roc,
        weights=best_w,
        best_mauc=best_val,
        best_roc=mauc(combined, p=p),
        combined=combined,
        surface=surface,
    )


def write_surface(path: str | Path, surface: np.ndarray) -> None:
    lines = ["# w1\tw2\tw3\tmauc"]
    lines += [f"{r[0]:.12g}\t{r[1]:.12g}\t{r[2]:.12g}\t{r[3]:.12g}" for r in surface]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
