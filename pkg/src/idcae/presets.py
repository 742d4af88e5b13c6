"""Named configuration presets forming the ablation ladder.

Each preset differs from its predecessor by one logical change:

    baseline_like -> architect -> scaler -> condition -> add_dataset -> ensemble

baseline_like mirrors the reference plain auto-encoder shape only approximately
(bigger encoder, 5-frame windows, squared-error loss, no standardization, no
conditioning); the later steps are exact configurations of this toolkit.
"""

from __future__ import annotations

from dataclasses import dataclass, fields, replace
from typing import Optional

from .ensemble import GridSpec
from .errors import UsageError
from .features import MelConfig
from .model import ArchDescriptor
from .train import TrainConfig

PRESET_NAMES = ("baseline_like", "architect", "scaler", "condition", "add_dataset", "ensemble")


@dataclass(frozen=True)
class PresetBundle:
    name: str
    mel: MelConfig
    arch: ArchDescriptor
    train: TrainConfig
    standardize: bool
    use_additional_data: bool
    run_ensemble: bool
    grid: Optional[GridSpec] = None

    def to_flat(self) -> dict[str, object]:
        """Dotted-key view of every configuration field (preset name excluded)."""
        flat: dict[str, object] = {}
        for section, obj in (("mel", self.mel), ("arch", self.arch), ("train", self.train)):
            for f in fields(obj):
                flat[f"{section}.{f.name}"] = getattr(obj, f.name)
        flat["data.standardize"] = self.standardize
        flat["data.use_additional_data"] = self.use_additional_data
        flat["ensemble.run"] = self.run_ensemble
        if self.grid is not None:
            for f in fields(self.grid):
                flat[f"grid.{f.name}"] = getattr(self.grid, f.name)
        return flat


def _baseline_like() -> PresetBundle:
    return PresetBundle(
        name="baseline_like",
        mel=MelConfig(n_mels=128),
        arch=ArchDescriptor(
            frame_size=5,
            n_mels=128,
            encoder_units=(128, 128, 128, 128, 8),
            decoder_units=(128, 128, 128, 128),
            latent_dim=8,
            conditioning_enabled=False,
        ),
        train=TrainConfig(alpha=1.0, norm="l2sq"),
        standardize=False,
        use_additional_data=False,
        run_ensemble=False,
    )


def expand_preset(name: str) -> PresetBundle:
    """Return the full configuration bundle for a named ablation step."""
    if name not in PRESET_NAMES:
        raise UsageError(f"unknown preset {name!r}; expected one of {PRESET_NAMES}")
    bundle = _baseline_like()
    if name == "baseline_like":
        return bundle
    bundle = replace(  # smaller encoder, 16-unit latent, 10-frame windows, MAE training
        bundle,
        name="architect",
        arch=replace(
            bundle.arch,
            frame_size=10,
            encoder_units=(128, 64, 32, 16),
            latent_dim=16,
        ),
        train=replace(bundle.train, norm="l1"),
    )
    if name == "architect":
        return bundle
    bundle = replace(bundle, name="scaler", standardize=True)
    if name == "scaler":
        return bundle
    bundle = replace(
        bundle,
        name="condition",
        arch=replace(bundle.arch, conditioning_enabled=True),
        train=replace(bundle.train, alpha=0.75),
    )
    if name == "condition":
        return bundle
    bundle = replace(bundle, name="add_dataset", use_additional_data=True)
    if name == "add_dataset":
        return bundle
    return replace(bundle, name="ensemble", run_ensemble=True, grid=GridSpec())


def preset_delta(a: PresetBundle, b: PresetBundle) -> dict[str, tuple[object, object]]:
    """Flat keys whose values differ between two bundles (old, new)."""
    fa, fb = a.to_flat(), b.to_flat()
    keys = set(fa) | set(fb)
    return {
        k: (fa.get(k), fb.get(k))
        for k in sorted(keys)
        if fa.get(k) != fb.get(k)
    }
