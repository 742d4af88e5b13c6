"""Command-line interface: synth, train, score, eval, grid, ensemble, preset.

Heavy imports stay inside command handlers so that --deterministic can pin
BLAS threading before numpy loads.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from .errors import (
    EXIT_DATA,
    EXIT_NUMERIC,
    EXIT_OK,
    EXIT_USAGE,
    DataError,
    IdcaeError,
    NumericError,
    UsageError,
)

logger = logging.getLogger("idcae")


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):  # usage errors exit 1, not argparse's 2
        self.print_usage(sys.stderr)
        sys.stderr.write(f"error: {message}\n")
        raise SystemExit(EXIT_USAGE)


# ---------------------------------------------------------------------------
# Flat dotted-key configuration
# ---------------------------------------------------------------------------


def _parse_value(text: str):
    text = text.strip()
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def parse_config_file(path: Path) -> dict[str, object]:
    """Flat dotted-key config: `train.alpha = 0.75`, '#' comments."""
    if not path.exists():
        raise DataError(f"no such config file: {path}")
    out: dict[str, object] = {}
    for lineno, raw in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise DataError(f"{path}:{lineno}: expected `key = value`")
        key, _, value = line.partition("=")
        out[key.strip()] = _parse_value(value)
    return out


def dump_config(flat: dict[str, object], path: Path) -> None:
    lines = [f"{k} = {json.dumps(v)}" for k, v in sorted(flat.items())]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def _resolve_config(args: argparse.Namespace) -> dict[str, object]:
    """Precedence: defaults (< preset) < config file < --set < dedicated flags."""
    from .presets import expand_preset

    preset = getattr(args, "preset", None)
    flat = dict(expand_preset(preset or "condition").to_flat())
    if getattr(args, "config", None):
        flat.update(parse_config_file(Path(args.config)))
    for item in getattr(args, "set", None) or []:
        if "=" not in item:
            raise UsageError(f"--set expects key=value, got {item!r}")
        key, _, value = item.partition("=")
        flat[key.strip()] = _parse_value(value)
    flag_map = {
        "alpha": "train.alpha",
        "c_value": "train.c_value",
        "norm": "train.norm",
        "epochs": "train.epochs",
        "frames_per_spec": "train.frames_per_spec",
        "batch_size": "train.batch_size",
        "seed": "train.seed",
        "mels": "mel.n_mels",
        "frame_size": "arch.frame_size",
    }
    for attr, key in flag_map.items():
        value = getattr(args, attr, None)
        if value is not None:
            flat[key] = value
    if getattr(args, "no_standardize", False):
        flat["data.standardize"] = False
    return flat


def _bundle_from_flat(flat: dict[str, object]):
    from .features import MelConfig
    from .model import ArchDescriptor
    from .train import TrainConfig

    def section(prefix: str) -> dict:
        return {k.split(".", 1)[1]: v for k, v in flat.items() if k.startswith(prefix + ".")}

    mel_kwargs = section("mel")
    arch_kwargs = section("arch")
    train_kwargs = section("train")
    for key in ("encoder_units", "decoder_units"):
        if key in arch_kwargs:
            arch_kwargs[key] = tuple(arch_kwargs[key])
    arch_kwargs["n_mels"] = mel_kwargs.get("n_mels", 128)
    mel = MelConfig(**mel_kwargs)
    arch = ArchDescriptor(**arch_kwargs)
    train_cfg = TrainConfig(**train_kwargs)
    standardize = bool(flat.get("data.standardize", True))
    return mel, arch, train_cfg, standardize


def _grid_from_flat(flat: dict[str, object], args: argparse.Namespace):
    from .ensemble import GridSpec

    kwargs = {}
    for key, attr, cast in (
        ("grid.alphas", "alphas", float),
        ("grid.c_values", "c_values", float),
        ("grid.mel_counts", "mel_counts", int),
        ("grid.norms", "norms", str),
    ):
        flag = getattr(args, attr, None)
        if flag is not None:
            kwargs[attr] = tuple(cast(v) for v in flag.split(","))
        elif key in flat:
            kwargs[attr] = tuple(cast(v) for v in flat[key])
    if "grid.frame_size" in flat:
        kwargs["frame_size"] = int(flat["grid.frame_size"])
    if getattr(args, "frame_size", None) is not None:
        kwargs["frame_size"] = args.frame_size
    return GridSpec(**kwargs)


def _write_run_config(flat: dict[str, object], out_dir: Path, extra: dict | None = None) -> None:
    merged = dict(flat)
    if extra:
        merged.update(extra)
    out_dir.mkdir(parents=True, exist_ok=True)
    dump_config(merged, out_dir / "run_config.txt")


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


def cmd_synth(args: argparse.Namespace) -> int:
    from .audio_io import synth_dataset

    out_dir = Path(args.out)
    manifest = synth_dataset(
        out_dir,
        n_ids=args.n_ids,
        clips_per_id=args.clips_per_id,
        anomaly_fraction=args.anomaly_fraction,
        seed=args.seed,
        duration_s=args.duration,
        sample_rate=args.sample_rate,
        machine_type=args.machine_type,
    )
    _write_run_config(
        {
            "synth.n_ids": args.n_ids,
            "synth.clips_per_id": args.clips_per_id,
            "synth.anomaly_fraction": args.anomaly_fraction,
            "synth.seed": args.seed,
            "synth.duration_s": args.duration,
            "synth.sample_rate": args.sample_rate,
            "synth.machine_type": args.machine_type,
        },
        out_dir,
    )
    print(f"wrote {manifest}")
    return EXIT_OK


def cmd_train(args: argparse.Namespace) -> int:
    from .audio_io import parse_manifest
    from .model import save_model
    from .plots import save_loss_curve
    from .train import train, write_train_log

    flat = _resolve_config(args)
    mel, arch, train_cfg, standardize = _bundle_from_flat(flat)
    manifest = parse_manifest(args.manifest)
    model, log = train(
        manifest, mel, train_cfg, arch=arch, machine_type=args.machine_type, standardize=standardize
    )
    out_path = Path(args.out)
    out_dir = out_path.parent if out_path.parent != Path("") else Path(".")
    out_dir.mkdir(parents=True, exist_ok=True)
    save_model(model, out_path)
    write_train_log(out_path.with_suffix(".train_log.tsv"), log)
    save_loss_curve([s.epoch for s in log], [s.mean_loss for s in log], out_path.with_suffix(".loss.png"))
    _write_run_config(flat, out_dir, {"data.manifest": str(args.manifest), "run.out": str(out_path)})
    print(f"trained {model.machine_type} model -> {out_path} (final loss {log[-1].mean_loss:.5g})")
    return EXIT_OK


def cmd_score(args: argparse.Namespace) -> int:
    from .audio_io import parse_manifest
    from .model import load_model
    from .scoring import score_clips

    model = load_model(args.model)
    manifest = parse_manifest(args.manifest)
    split = None if args.split == "all" else args.split
    table, errors = score_clips(model, manifest, split=split)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    table.write(out)
    if errors:
        sidecar = out.with_suffix(out.suffix + ".errors")
        sidecar.write_text(
            "".join(f"{path}\t{msg}\n" for path, msg in errors), encoding="utf-8"
        )
        logger.warning("%d clips could not be scored; see %s", len(errors), sidecar)
    if not table.rows:
        raise DataError("no clips could be scored")
    _write_run_config(
        {"score.model": str(args.model), "score.manifest": str(args.manifest), "score.split": args.split},
        out.parent,
    )
    print(f"scored {len(table.rows)} clips -> {out}")
    return EXIT_OK


def cmd_eval(args: argparse.Namespace) -> int:
    from .plots import save_histogram_figure, save_roc_figure
    from .scoring import (
        ScoreTable,
        histogram_bins,
        mauc,
        roc_points,
        write_histogram,
        write_roc_points,
    )

    table = ScoreTable.read(args.scores)
    if not table.rows:
        raise DataError("empty score table")
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    standardized = not args.raw_pauc

    by_type: dict[str, ScoreTable] = {}
    for row in table.rows:
        by_type.setdefault(row.machine_type, ScoreTable()).rows.append(row)

    lines = ["# machine_type\tmachine_id\tn_normal\tn_anomaly\tauc\tpauc\tmauc"]
    report_rows = []
    for mtype in sorted(by_type):
        sub = by_type[mtype]
        groups: dict[str, ScoreTable] = {}
        for row in sub.rows:
            groups.setdefault(row.machine_id, ScoreTable()).rows.append(row)
        for mid in sorted(groups):
            g = groups[mid]
            n_anom = int(g.is_anomaly().sum())
            n_norm = len(g) - n_anom
            if n_anom == 0 or n_norm == 0:
                logger.warning("skipping %s/%s: single-class group", mtype, mid)
                continue
            r = mauc(g, p=args.p, standardized=standardized)
            lines.append(f"{mtype}\t{mid}\t{n_norm}\t{n_anom}\t{r.auc:.6f}\t{r.pauc:.6f}\t{r.mauc:.6f}")
            report_rows.append((mtype, mid, r))
        pooled = mauc(sub, p=args.p, standardized=standardized)  # single-class pool raises
        n_anom = int(sub.is_anomaly().sum())
        lines.append(
            f"{mtype}\tALL\t{len(sub) - n_anom}\t{n_anom}\t"
            f"{pooled.auc:.6f}\t{pooled.pauc:.6f}\t{pooled.mauc:.6f}"
        )
        report_rows.append((mtype, "ALL", pooled))
        if args.export_roc:
            points = roc_points(sub)
            write_roc_points(out_dir / f"roc_{mtype}.tsv", points)
            save_roc_figure(points, f"{mtype} (AUC={pooled.auc:.3f})", out_dir / f"roc_{mtype}.png")
        if args.export_hist:
            bins = histogram_bins(sub, n_bins=args.hist_bins)
            write_histogram(out_dir / f"hist_{mtype}.tsv", bins)
            save_histogram_figure(bins, f"{mtype} anomaly scores", out_dir / f"hist_{mtype}.png")

    (out_dir / "metrics.tsv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    _write_run_config(
        {"eval.scores": str(args.scores), "eval.p": args.p, "eval.raw_pauc": args.raw_pauc},
        out_dir,
    )
    print(f"{'machine':<12} {'id':<10} {'AUC':>8} {'pAUC':>8} {'mAUC':>8}")
    for mtype, mid, r in report_rows:
        print(f"{mtype:<12} {mid:<10} {r.auc:8.4f} {r.pauc:8.4f} {r.mauc:8.4f}")
    print(f"wrote {out_dir / 'metrics.tsv'}")
    return EXIT_OK


def _run_grid_from_args(args: argparse.Namespace):
    from .audio_io import parse_manifest
    from .ensemble import run_grid

    flat = _resolve_config(args)
    mel, arch, train_cfg, standardize = _bundle_from_flat(flat)
    if not standardize:
        raise UsageError("grid search assumes standardized features")
    grid = _grid_from_flat(flat, args)
    manifest = parse_manifest(args.manifest)
    if args.deterministic:
        args.jobs = 1
    out_dir = Path(args.out_dir)
    results = run_grid(
        manifest,
        grid,
        out_dir,
        mel_base=mel,
        train_base=train_cfg,
        arch_base=arch,
        machine_type=args.machine_type,
        p=args.p,
        jobs=args.jobs,
    )
    _write_run_config(flat, out_dir, {"data.manifest": str(args.manifest), "run.jobs": args.jobs})
    return grid, results, out_dir


def cmd_grid(args: argparse.Namespace) -> int:
    grid, results, out_dir = _run_grid_from_args(args)
    print(f"grid complete: {len(results)}/{grid.size()} configs -> {out_dir}")
    for r in results:
        print(f"  {r.config.tag():<24} auc={r.roc.auc:.4f} pauc={r.roc.pauc:.4f} mauc={r.roc.mauc:.4f}")
    return EXIT_OK


def cmd_ensemble(args: argparse.Namespace) -> int:
    from .ensemble import search_weights, select_top, write_surface
    from .plots import save_surface_figure

    grid, results, out_dir = _run_grid_from_args(args)
    if len(results) < 3:
        raise DataError(f"ensembling needs at least 3 grid results, have {len(results)}")
    top = select_top(results, k=3)
    ens = search_weights(
        [r.table for r in top],
        resolution=args.resolution,
        p=args.p,
        keep_surface=args.surface,
        member_configs=[r.config for r in top],
    )
    ens.combined.write(out_dir / "ensemble_scores.tsv")
    summary = ["# member\tweight\tauc\tpauc\tmauc"]
    for cfg, w, roc in zip(ens.members, ens.weights, ens.member_roc):
        summary.append(f"{cfg.tag()}\t{w:.6g}\t{roc.auc:.6f}\t{roc.pauc:.6f}\t{roc.mauc:.6f}")
    summary.append(
        f"ENSEMBLE\t1\t{ens.best_roc.auc:.6f}\t{ens.best_roc.pauc:.6f}\t{ens.best_roc.mauc:.6f}"
    )
    (out_dir / "ensemble_result.tsv").write_text("\n".join(summary) + "\n", encoding="utf-8")
    if args.surface:
        write_surface(out_dir / "mauc_surface.tsv", ens.surface)
        save_surface_figure(
            ens.surface, ens.weights, [c.tag() for c in ens.members], out_dir / "mauc_surface.png"
        )
    print("members:")
    for cfg, w, roc in zip(ens.members, ens.weights, ens.member_roc):
        print(f"  {cfg.tag():<24} weight={w:.3f} mauc={roc.mauc:.4f}")
    print(f"best weights {tuple(round(float(w), 4) for w in ens.weights)} -> mauc {ens.best_mauc:.4f}")
    return EXIT_OK


def cmd_preset(args: argparse.Namespace) -> int:
    from .presets import expand_preset

    bundle = expand_preset(args.name)
    text = "\n".join(f"{k} = {json.dumps(v)}" for k, v in sorted(bundle.to_flat().items())) + "\n"
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
        print(f"wrote {args.out}")
    else:
        sys.stdout.write(text)
    return EXIT_OK


# ---------------------------------------------------------------------------
# Parser assembly
# ---------------------------------------------------------------------------


def _add_config_flags(p: argparse.ArgumentParser, with_grid: bool = False) -> None:
    p.add_argument("--deterministic", action="store_true", help="single-threaded numerics")
    p.add_argument("--config", help="flat dotted-key config file")
    p.add_argument("--preset", help="named preset to start from")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override any config key")
    p.add_argument("--alpha", type=float, help="match-label probability")
    p.add_argument("--c-value", dest="c_value", type=float, help="non-match constant target")
    p.add_argument("--norm", choices=("l1", "l2sq"), help="reconstruction loss")
    p.add_argument("--epochs", type=int)
    p.add_argument("--frames-per-spec", dest="frames_per_spec", type=int)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--mels", type=int, help="mel bin count")
    p.add_argument("--frame-size", dest="frame_size", type=int, help="spectrogram frames per window")
    p.add_argument("--no-standardize", dest="no_standardize", action="store_true")
    p.add_argument("--machine-type", dest="machine_type", help="machine type to train on")
    if with_grid:
        p.add_argument("--alphas", help="comma list of grid alphas")
        p.add_argument("--c-values", dest="c_values", help="comma list of grid C values")
        p.add_argument("--mel-counts", dest="mel_counts", help="comma list of grid mel counts")
        p.add_argument("--norms", help="comma list of grid norms")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="idcae", description="Conditioned auto-encoder anomalous-sound toolkit")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic multi-ID dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--n-ids", dest="n_ids", type=int, default=3)
    p.add_argument("--clips-per-id", dest="clips_per_id", type=int, default=70)
    p.add_argument("--anomaly-fraction", dest="anomaly_fraction", type=float, default=0.25)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--duration", type=float, default=4.0)
    p.add_argument("--sample-rate", dest="sample_rate", type=int, default=16000)
    p.add_argument("--machine-type", dest="machine_type", default="synth")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train a model on a manifest's train split")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True, help="output model path (.idcae)")
    _add_config_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("score", help="score clips with a trained model")
    p.add_argument("--deterministic", action="store_true", help="single-threaded numerics")
    p.add_argument("--model", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True, help="output score table (.tsv)")
    p.add_argument("--split", choices=("train", "test", "all"), default="test")
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("eval", help="compute AUC/pAUC/mAUC from a score table")
    p.add_argument("--scores", required=True)
    p.add_argument("--out-dir", dest="out_dir", required=True)
    p.add_argument("--p", type=float, default=0.1, help="pAUC false-positive-rate cap")
    p.add_argument("--raw-pauc", dest="raw_pauc", action="store_true", help="report area/p instead of standardized pAUC")
    p.add_argument("--export-roc", dest="export_roc", action="store_true")
    p.add_argument("--export-hist", dest="export_hist", action="store_true")
    p.add_argument("--hist-bins", dest="hist_bins", type=int, default=40)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("grid", help="hyperparameter grid search (resumable)")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out-dir", dest="out_dir", required=True)
    p.add_argument("--p", type=float, default=0.1)
    p.add_argument("--jobs", type=int, default=os.cpu_count() or 1)
    _add_config_flags(p, with_grid=True)
    p.set_defaults(func=cmd_grid)

    p = sub.add_parser("ensemble", help="grid search + top-3 convex score combination")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out-dir", dest="out_dir", required=True)
    p.add_argument("--p", type=float, default=0.1)
    p.add_argument("--jobs", type=int, default=os.cpu_count() or 1)
    p.add_argument("--resolution", type=int, default=100, help="simplex lattice resolution")
    p.add_argument("--surface", action="store_true", help="export the mAUC surface + figure")
    _add_config_flags(p, with_grid=True)
    p.set_defaults(func=cmd_ensemble)

    p = sub.add_parser("preset", help="inspect ablation presets")
    psub = p.add_subparsers(dest="preset_command", required=True)
    pd = psub.add_parser("dump", help="print a preset as flat dotted keys")
    pd.add_argument("name")
    pd.add_argument("--out")
    pd.set_defaults(func=cmd_preset)

    return parser


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    if "--deterministic" in argv:
        # Must happen before numpy first loads its BLAS.
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
            os.environ[var] = "1"
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse help/usage paths
        return int(exc.code or 0)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except UsageError as exc:
        sys.stderr.write(f"error: {exc}\n")
        return EXIT_USAGE
    except NumericError as exc:
        sys.stderr.write(f"numeric failure: {exc}\n")
        return EXIT_NUMERIC
    except (DataError, IdcaeError) as exc:
        sys.stderr.write(f"error: {exc}\n")
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
