"""Shared fixtures: a small synthetic dataset and a model trained on it."""

from __future__ import annotations

import pytest

from idcae import MelConfig, TrainConfig, parse_manifest, synth_dataset, train


@pytest.fixture(scope="session")
def mini_manifest(tmp_path_factory):
    out = tmp_path_factory.mktemp("mini_data")
    path = synth_dataset(out, n_ids=2, clips_per_id=10, anomaly_fraction=0.3, seed=11, duration_s=2.0)
    return parse_manifest(path)


@pytest.fixture(scope="session")
def mini_mel():
    return MelConfig(n_mels=32)


@pytest.fixture(scope="session")
def mini_train_cfg():
    return TrainConfig(epochs=30, frames_per_spec=120, batch_size=128, seed=5)


@pytest.fixture(scope="session")
def mini_model(mini_manifest, mini_mel, mini_train_cfg):
    model, log = train(mini_manifest, mini_mel, mini_train_cfg)
    return model, log
