"""Conditioned auto-encoder: encoder/decoder/conditioner assembly and persistence."""

from __future__ import annotations

import json
import zlib
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import nn
from .errors import (
    ModelChecksumError,
    ModelLoadError,
    ModelTruncatedError,
    ModelVersionError,
    ShapeError,
    UsageError,
    ValidationError,
)
from .features import MelConfig, Scaler

CONTAINER_MAGIC = "idcae-model/v1"
MODEL_SUFFIX = ".idcae"


@dataclass(frozen=True)
class ArchDescriptor:
    """Network shape; latent width equals the last encoder unit."""

    frame_size: int = 10
    n_mels: int = 128
    n_ids: int = 1
    encoder_units: tuple[int, ...] = (128, 64, 32, 16)
    decoder_units: tuple[int, ...] = (128, 128, 128, 128)
    cond_hidden: int = 16
    latent_dim: int = 16
    conditioning_enabled: bool = True
    cond_double_sigmoid: bool = True

    def __post_init__(self) -> None:
        object.__setattr__(self, "encoder_units", tuple(self.encoder_units))
        object.__setattr__(self, "decoder_units", tuple(self.decoder_units))
        if self.latent_dim != self.encoder_units[-1]:
            raise UsageError(
                f"latent_dim {self.latent_dim} must equal last encoder unit {self.encoder_units[-1]}"
            )
        if min(self.frame_size, self.n_mels, self.n_ids, self.cond_hidden) < 1:
            raise UsageError("architecture dimensions must be >= 1")

    @property
    def input_dim(self) -> int:
        return self.frame_size * self.n_mels


class DenseBlock:
    """Dense -> batch-norm -> ReLU."""

    def __init__(self, n_in: int, n_out: int, rng: np.random.Generator):
        self.dense = nn.DenseLayer(n_in, n_out, rng)
        self.bn = nn.BatchNormLayer(n_out)
        self._pre: np.ndarray | None = None

    def forward(self, x: np.ndarray, train: bool) -> np.ndarray:
        h = self.dense.forward(x, cache=train)
        h = self.bn.forward(h, train=train)
        if train:
            self._pre = h
        return nn.relu(h)

    def backward(self, dy: np.ndarray) -> np.ndarray:
        dy = nn.relu_grad(self._pre, dy)
        dy = self.bn.backward(dy)
        return self.dense.backward(dy)

    def param_count(self) -> int:
        return self.dense.param_count() + self.bn.param_count()


class ConditionerNet:
    """One-hot label -> latent-sized vector via two dense layers with sigmoids.

    With double_sigmoid=False the second dense keeps only the first sigmoid
    (the alternative architecture reading); output then lives in R instead
    of (0, 1).
    """

    def __init__(self, n_ids: int, hidden: int, out: int, double_sigmoid: bool, rng: np.random.Generator):
        self.fc1 = nn.DenseLayer(n_ids, hidden, rng)
        self.fc2 = nn.DenseLayer(hidden, out, rng)
        self.double_sigmoid = double_sigmoid
        self._y1: np.ndarray | None = None
        self._y2: np.ndarray | None = None

    def forward(self, labels: np.ndarray, train: bool) -> np.ndarray:
        y1 = nn.sigmoid(self.fc1.forward(labels, cache=train))
        out = self.fc2.forward(y1, cache=train)
        if self.double_sigmoid:
            out = nn.sigmoid(out)
        if train:
            self._y1, self._y2 = y1, out
        return out

    def backward(self, dy: np.ndarray) -> None:
        if self.double_sigmoid:
            dy = nn.sigmoid_grad(self._y2, dy)
        dy = self.fc2.backward(dy)
        dy = nn.sigmoid_grad(self._y1, dy)
        self.fc1.backward(dy)

    def param_count(self) -> int:
        return self.fc1.param_count() + self.fc2.param_count()


def validate_one_hot(labels: np.ndarray, n_ids: int) -> None:
    if labels.ndim != 2 or labels.shape[1] != n_ids:
        raise ShapeError(f"labels must be (batch, {n_ids}), got {labels.shape}")
    ok = np.all(np.isin(labels, (0.0, 1.0))) and np.all(labels.sum(axis=1) == 1.0)
    if not ok:
        raise ValidationError("labels must be exact one-hot rows")


def one_hot(indices: np.ndarray, n_ids: int) -> np.ndarray:
    indices = np.asarray(indices, dtype=np.int64)
    if np.any(indices < 0) or np.any(indices >= n_ids):
        raise ValidationError(f"label index out of range for {n_ids} IDs")
    out = np.zeros((indices.size, n_ids))
    out[np.arange(indices.size), indices] = 1.0
    return out


class IdcaeModel:
    """Encoder E, decoder D and conditioners applied as an affine latent transform."""

    def __init__(
        self,
        arch: ArchDescriptor,
        seed: int | list[int] = 0,
        scaler: Scaler | None = None,
        id_vocabulary: list[str] | None = None,
        machine_type: str = "",
        norm: str = "l1",
        mel: MelConfig | None = None,
        train_meta: dict | None = None,
    ):
        self.arch = arch
        rng = np.random.default_rng(seed)
        self.encoder: list[DenseBlock] = []
        n_in = arch.input_dim
        for units in arch.encoder_units:
            self.encoder.append(DenseBlock(n_in, units, rng))
            n_in = units
        self.decoder_blocks: list[DenseBlock] = []
        n_in = arch.latent_dim
        for units in arch.decoder_units:
            self.decoder_blocks.append(DenseBlock(n_in, units, rng))
            n_in = units
        self.decoder_out = nn.DenseLayer(n_in, arch.input_dim, rng)
        self.h_gamma = ConditionerNet(
            arch.n_ids, arch.cond_hidden, arch.latent_dim, arch.cond_double_sigmoid, rng
        )
        self.h_beta = ConditionerNet(
            arch.n_ids, arch.cond_hidden, arch.latent_dim, arch.cond_double_sigmoid, rng
        )
        self.scaler = scaler
        self.id_vocabulary = list(id_vocabulary) if id_vocabulary else []
        self.machine_type = machine_type
        self.norm = norm
        self.mel = mel
        self.train_meta = dict(train_meta or {})
        self._film: tuple | None = None

    # -- forward / backward -------------------------------------------------

    def encode(self, x: np.ndarray, train: bool) -> np.ndarray:
        h = x.reshape(x.shape[0], -1)
        if h.shape[1] != self.arch.input_dim:
            raise ShapeError(f"expected windows of {self.arch.frame_size}x{self.arch.n_mels}")
        for blk in self.encoder:
            h = blk.forward(h, train)
        return h

    def film_condition(self, z: np.ndarray, labels: np.ndarray, train: bool = False) -> np.ndarray:
        """Affine latent transform: H_gamma(l) * z + H_beta(l), elementwise per row."""
        validate_one_hot(labels, self.arch.n_ids)
        if z.shape != (labels.shape[0], self.arch.latent_dim):
            raise ShapeError(f"latent batch {z.shape} does not match labels {labels.shape}")
        g = self.h_gamma.forward(labels, train)
        b = self.h_beta.forward(labels, train)
        if train:
            self._film = (z, g)
        return g * z + b

    def decode(self, h: np.ndarray, train: bool) -> np.ndarray:
        for blk in self.decoder_blocks:
            h = blk.forward(h, train)
        out = self.decoder_out.forward(h, cache=train)
        return out.reshape(out.shape[0], self.arch.frame_size, self.arch.n_mels)

    def forward(self, x: np.ndarray, labels: np.ndarray | None = None, train: bool = False) -> np.ndarray:
        """Reconstruct (batch, F, M) windows; labels are ignored when conditioning is off."""
        z = self.encode(x, train)
        if self.arch.conditioning_enabled:
            if labels is None:
                raise UsageError("conditioning is enabled; labels are required")
            z = self.film_condition(z, labels, train)
        else:
            self._film = None
        return self.decode(z, train)

    def backward(self, d_out: np.ndarray) -> np.ndarray:
        """Backprop a (batch, F, M) output gradient; fills all parameter grads."""
        dy = d_out.reshape(d_out.shape[0], -1)
        dy = self.decoder_out.backward(dy)
        for blk in reversed(self.decoder_blocks):
            dy = blk.backward(dy)
        if self.arch.conditioning_enabled:
            if self._film is None:
                raise UsageError("backward without cached conditioned forward")
            z, g = self._film
            self.h_gamma.backward(dy * z)
            self.h_beta.backward(dy)
            dy = dy * g
        for blk in reversed(self.encoder):
            dy = blk.backward(dy)
        return dy.reshape(d_out.shape[0], self.arch.frame_size, self.arch.n_mels)

    # -- parameters -----------------------------------------------------------

    def _named_blocks(self):
        for i, blk in enumerate(self.encoder):
            yield f"encoder.{i}", blk
        for i, blk in enumerate(self.decoder_blocks):
            yield f"decoder.{i}", blk

    def trainable_parameters(self) -> list[tuple[str, np.ndarray]]:
        out = []
        for name, blk in self._named_blocks():
            out += [(f"{name}.dense.{k}", v) for k, v in blk.dense.parameters()]
            out += [(f"{name}.bn.{k}", v) for k, v in blk.bn.parameters()]
        out += [(f"decoder.out.{k}", v) for k, v in self.decoder_out.parameters()]
        for cname, cond in (("h_gamma", self.h_gamma), ("h_beta", self.h_beta)):
            out += [(f"{cname}.fc1.{k}", v) for k, v in cond.fc1.parameters()]
            out += [(f"{cname}.fc2.{k}", v) for k, v in cond.fc2.parameters()]
        return out

    def gradients(self) -> list[np.ndarray]:
        out = []
        for _, blk in self._named_blocks():
            out += blk.dense.gradients()
            out += blk.bn.gradients()
        out += self.decoder_out.gradients()
        for cond in (self.h_gamma, self.h_beta):
            out += cond.fc1.gradients()
            out += cond.fc2.gradients()
        return out

    def state_tensors(self) -> list[tuple[str, np.ndarray]]:
        out = []
        for name, blk in self._named_blocks():
            out += [(f"{name}.bn.{k}", v) for k, v in blk.bn.state_tensors()]
        return out

    def count_params(self) -> dict[str, int]:
        """Parameter counts with batch-norm counted as 4n (2n trainable + 2n stats)."""
        encoder = sum(blk.param_count() for blk in self.encoder)
        decoder = sum(blk.param_count() for blk in self.decoder_blocks) + self.decoder_out.param_count()
        conditioning = self.h_gamma.param_count() + self.h_beta.param_count()
        return {
            "encoder": encoder,
            "decoder": decoder,
            "conditioning": conditioning,
            "total": encoder + decoder + conditioning,
        }

    def check_finite(self) -> None:
        for name, p in self.trainable_parameters() + self.state_tensors():
            if not np.all(np.isfinite(p)):
                raise UsageError(f"non-finite values in {name}")


def film_condition(model: IdcaeModel, z: np.ndarray, labels: np.ndarray) -> np.ndarray:
    return model.film_condition(z, labels, train=False)


def count_params(model: IdcaeModel) -> dict[str, int]:
    return model.count_params()


# ---------------------------------------------------------------------------
# Model container: versioned single file, text header + raw float64 payload +
# trailing CRC32. Extension: .idcae
# ---------------------------------------------------------------------------

_HEADER_END = b"\n---\n"


def _all_tensors(model: IdcaeModel) -> list[tuple[str, np.ndarray]]:
    tensors = model.trainable_parameters() + model.state_tensors()
    if model.scaler is not None:
        tensors += [("scaler.mean", model.scaler.mean), ("scaler.std", model.scaler.std)]
    return tensors


def _meta_dict(model: IdcaeModel) -> dict:
    return {
        "arch": asdict(model.arch),
        "id_vocabulary": model.id_vocabulary,
        "machine_type": model.machine_type,
        "norm": model.norm,
        "mel": asdict(model.mel) if model.mel is not None else None,
        "train_meta": model.train_meta,
        "has_scaler": model.scaler is not None,
    }


def save_model(model: IdcaeModel, path: str | Path) -> None:
    """Serialize every tensor bit-exactly with header manifest and CRC32 trailer."""
    if model.scaler is not None and model.scaler.n_mels != model.arch.n_mels:
        raise ValidationError(
            f"scaler has {model.scaler.n_mels} bins but architecture expects {model.arch.n_mels}"
        )
    tensors = _all_tensors(model)
    header_lines = [CONTAINER_MAGIC, "meta\t" + json.dumps(_meta_dict(model), sort_keys=True)]
    payload_parts = []
    offset = 0
    for name, arr in tensors:
        data = np.ascontiguousarray(arr, dtype="<f8").tobytes()
        shape = ",".join(str(d) for d in arr.shape)
        header_lines.append(f"tensor\t{name}\t{shape}\t{offset}")
        payload_parts.append(data)
        offset += len(data)
    header_lines.append(f"payload\t{offset}")
    blob = "\n".join(header_lines).encode("utf-8") + _HEADER_END + b"".join(payload_parts)
    crc = zlib.crc32(blob) & 0xFFFFFFFF
    Path(path).write_bytes(blob + crc.to_bytes(4, "little"))


def load_model(path: str | Path) -> IdcaeModel:
    """Load a model container, verifying version, length and checksum."""
    path = Path(path)
    if not path.exists():
        raise ModelLoadError(f"no such model file: {path}")
    raw = path.read_bytes()
    sep = raw.find(_HEADER_END)
    if sep < 0:
        if not raw.startswith(CONTAINER_MAGIC.encode("utf-8")):
            raise ModelVersionError(f"{path}: not an idcae model container")
        raise ModelTruncatedError(f"{path}: header never terminates")
    header = raw[:sep].decode("utf-8").splitlines()
    if not header or header[0] != CONTAINER_MAGIC:
        raise ModelVersionError(f"{path}: unsupported container version {header[0] if header else ''!r}")

    meta: dict | None = None
    tensor_specs: list[tuple[str, tuple[int, ...], int]] = []
    payload_len: int | None = None
    for line in header[1:]:
        kind, _, rest = line.partition("\t")
        if kind == "meta":
            meta = json.loads(rest)
        elif kind == "tensor":
            name, shape_s, offset_s = rest.split("\t")
            shape = tuple(int(d) for d in shape_s.split(",")) if shape_s else ()
            tensor_specs.append((name, shape, int(offset_s)))
        elif kind == "payload":
            payload_len = int(rest)
        else:
            raise ModelLoadError(f"{path}: unknown header record {kind!r}")
    if meta is None or payload_len is None:
        raise ModelLoadError(f"{path}: incomplete header")

    body_start = sep + len(_HEADER_END)
    expected_len = body_start + payload_len + 4
    if len(raw) < expected_len:
        raise ModelTruncatedError(f"{path}: file has {len(raw)} bytes, expected {expected_len}")
    stored_crc = int.from_bytes(raw[expected_len - 4 : expected_len], "little")
    actual_crc = zlib.crc32(raw[: expected_len - 4]) & 0xFFFFFFFF
    if stored_crc != actual_crc:
        raise ModelChecksumError(f"{path}: checksum mismatch")

    payload = raw[body_start : body_start + payload_len]
    values: dict[str, np.ndarray] = {}
    for name, shape, offset in tensor_specs:
        count = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(payload, dtype="<f8", count=count, offset=offset)
        values[name] = arr.reshape(shape).astype(np.float64)

    arch_d = dict(meta["arch"])
    arch_d["encoder_units"] = tuple(arch_d["encoder_units"])
    arch_d["decoder_units"] = tuple(arch_d["decoder_units"])
    arch = ArchDescriptor(**arch_d)
    scaler = None
    if meta["has_scaler"]:
        scaler = Scaler(mean=values.pop("scaler.mean"), std=values.pop("scaler.std"))
        if scaler.n_mels != arch.n_mels:
            raise ValidationError(
                f"{path}: scaler has {scaler.n_mels} bins but architecture expects {arch.n_mels}"
            )
    mel = MelConfig(**meta["mel"]) if meta["mel"] is not None else None
    model = IdcaeModel(
        arch,
        seed=0,
        scaler=scaler,
        id_vocabulary=meta["id_vocabulary"],
        machine_type=meta["machine_type"],
        norm=meta["norm"],
        mel=mel,
        train_meta=meta["train_meta"],
    )
    if model.id_vocabulary and len(model.id_vocabulary) != arch.n_ids:
        raise ValidationError(f"{path}: vocabulary size != n_ids")
    for name, arr in model.trainable_parameters() + model.state_tensors():
        if name not in values:
            raise ModelLoadError(f"{path}: missing tensor {name!r}")
        if values[name].shape != arr.shape:
            raise ValidationError(f"{path}: tensor {name!r} has shape {values[name].shape}, expected {arr.shape}")
        arr[...] = values[name]
    return model
