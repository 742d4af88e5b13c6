"""ID-conditioned auto-encoder toolkit for unsupervised anomalous-sound detection."""

from .audio_io import (
    AudioClip,
    Manifest,
    ManifestEntry,
    SynthSpec,
    load_wav,
    parse_manifest,
    synth_clip,
    synth_dataset,
    write_manifest,
    write_wav,
)
from .ensemble import (
    EnsembleResult,
    GridConfig,
    GridSpec,
    combine_scores,
    run_grid,
    search_weights,
    select_top,
)
from .features import (
    FeatureWindow,
    MelConfig,
    Scaler,
    Spectrogram,
    all_windows,
    apply_scaler,
    fit_scaler,
    identity_scaler,
    log_compress,
    mel_project,
    sample_windows,
    spectrogram,
    stft_power,
)
from .model import ArchDescriptor, IdcaeModel, count_params, film_condition, load_model, save_model
from .presets import PRESET_NAMES, PresetBundle, expand_preset
from .scoring import RocResult, ScoreRow, ScoreTable, anomaly_score, auc, mauc, pauc, score_clips
from .train import ConditionedSample, EpochStats, TrainConfig, assign_label, build_batch, train

__version__ = "0.1.0"

__all__ = [
    "AudioClip",
    "ArchDescriptor",
    "ConditionedSample",
    "EnsembleResult",
    "EpochStats",
    "FeatureWindow",
    "GridConfig",
    "GridSpec",
    "IdcaeModel",
    "Manifest",
    "ManifestEntry",
    "MelConfig",
    "PRESET_NAMES",
    "PresetBundle",
    "RocResult",
    "Scaler",
    "ScoreRow",
    "ScoreTable",
    "Spectrogram",
    "SynthSpec",
    "TrainConfig",
    "all_windows",
    "anomaly_score",
    "apply_scaler",
    "assign_label",
    "auc",
    "build_batch",
    "combine_scores",
    "count_params",
    "expand_preset",
    "film_condition",
    "fit_scaler",
    "identity_scaler",
    "load_model",
    "load_wav",
    "log_compress",
    "mauc",
    "mel_project",
    "parse_manifest",
    "pauc",
    "run_grid",
    "sample_windows",
    "save_model",
    "score_clips",
    "search_weights",
    "select_top",
    "spectrogram",
    "stft_power",
    "synth_clip",
    "synth_dataset",
    "train",
    "write_manifest",
    "write_wav",
]
