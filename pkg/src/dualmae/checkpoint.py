"""Checkpoint container: a text manifest plus raw little-endian payloads.

The file starts with one ASCII header line naming the format and the
manifest's byte length, followed by the UTF-8 manifest and then the tensor
bytes. The manifest lists config, progress counters, the random-generator
state, the vocabulary file name, and one line per tensor with dtype,
shape, offset, and size. Serialization is canonical: saving a loaded
checkpoint reproduces the input byte for byte.

Optimizer moments ride along as ``opt.m.<name>`` / ``opt.v.<name>``
tensors; without them a resumed run could not retrace the uninterrupted
loss curve exactly.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .config import TrainConfig, config_as_flat_dict, resolve_configs
from .model import DecoderConfig, EncoderConfig, ModelParams
from .optim import AdamW

MAGIC = "dualmae-ckpt-v1"

_DTYPES = {"f4": "<f4", "f8": "<f8"}


class CheckpointError(ValueError):
    """The file is not a readable checkpoint."""


@dataclass
class Progress:
    step: int = 0
    epoch: int = 0
    step_in_epoch: int = 0


@dataclass
class LoadedCheckpoint:
    params: ModelParams
    train: TrainConfig
    encoder: EncoderConfig
    decoder: DecoderConfig
    optimizer: AdamW
    rng: np.random.Generator
    progress: Progress
    vocab_file: str


def _dtype_tag(dtype: np.dtype) -> str:
    for tag, np_name in _DTYPES.items():
        if np.dtype(np_name) == np.dtype(dtype).newbyteorder("<"):
            return tag
    raise CheckpointError(f"unsupported tensor dtype {dtype}")


def _format_value(value: object) -> str:
    if isinstance(value, float):
        return repr(value)
    return str(value)


def save_checkpoint(
    path: str | Path,
    params: ModelParams,
    train: TrainConfig,
    encoder: EncoderConfig,
    decoder: DecoderConfig,
    optimizer: AdamW,
    rng: np.random.Generator,
    progress: Progress,
    vocab_file: str,
) -> None:
    entries: list[tuple[str, np.ndarray]] = []
    for name, tensor in params.items():
        entries.append((name, tensor.data))
    for name, _ in params.items():
        m, v = optimizer.moments.get(
            name, (np.zeros_like(params[name].data), np.zeros_like(params[name].data))
        )
        entries.append((f"opt.m.{name}", m))
        entries.append((f"opt.v.{name}", v))

    manifest_lines: list[str] = []
    for key, value in config_as_flat_dict(train, encoder, decoder).items():
        manifest_lines.append(f"config.{key} = {_format_value(value)}")
    manifest_lines.append(f"progress.step = {progress.step}")
    manifest_lines.append(f"progress.epoch = {progress.epoch}")
    manifest_lines.append(f"progress.step_in_epoch = {progress.step_in_epoch}")
    manifest_lines.append(f"optimizer.steps = {optimizer.step_count}")
    manifest_lines.append(f"vocab.file = {vocab_file}")
    manifest_lines.append(f"rng.state = {json.dumps(rng.bit_generator.state, sort_keys=True)}")

    payloads: list[bytes] = []
    offset = 0
    for name, arr in entries:
        tag = _dtype_tag(arr.dtype)
        raw = np.ascontiguousarray(arr).astype(_DTYPES[tag], copy=False).tobytes()
        dims = "x".join(str(n) for n in arr.shape) if arr.shape else "scalar"
        manifest_lines.append(f"tensor = {name} {tag} {dims} {offset} {len(raw)}")
        payloads.append(raw)
        offset += len(raw)

    manifest = "\n".join(manifest_lines) + "\n"
    manifest_bytes = manifest.encode("utf-8")
    with open(path, "wb") as f:
        f.write(f"{MAGIC} {len(manifest_bytes)}\n".encode("ascii"))
        f.write(manifest_bytes)
        for raw in payloads:
            f.write(raw)


def load_checkpoint(path: str | Path) -> LoadedCheckpoint:
    blob = Path(path).read_bytes()
    newline = blob.find(b"\n")
    if newline < 0:
        raise CheckpointError(f"{path}: not a checkpoint")
    header = blob[:newline].decode("ascii", errors="replace").split()
    if len(header) != 2 or header[0] != MAGIC:
        raise CheckpointError(f"{path}: bad header, expected '{MAGIC} <manifest-bytes>'")
    manifest_len = int(header[1])
    manifest_start = newline + 1
    manifest = blob[manifest_start : manifest_start + manifest_len].decode("utf-8")
    payload = blob[manifest_start + manifest_len :]

    config_values: dict[str, str] = {}
    scalars: dict[str, str] = {}
    tensor_rows: list[tuple[str, str, str, int, int]] = []
    for lineno, line in enumerate(manifest.splitlines(), start=2):
        if not line.strip():
            continue
        key, _, value = line.partition(" = ")
        if not value:
            raise CheckpointError(f"{path}:{lineno}: malformed manifest line")
        if key == "tensor":
            parts = value.split()
            if len(parts) != 5:
                raise CheckpointError(f"{path}:{lineno}: malformed tensor line")
            tensor_rows.append((parts[0], parts[1], parts[2], int(parts[3]), int(parts[4])))
        elif key.startswith("config."):
            config_values[key[len("config.") :]] = value
        else:
            scalars[key] = value

    # manifest values arrive as strings; re-coerce through the config layer
    from .config import _KEYS, _coerce

    coerced = {k: _coerce(k, v, str(path)) for k, v in config_values.items() if k in _KEYS}
    train, encoder, decoder = resolve_configs(preset="full", file_values=coerced, env={})

    arrays: dict[str, np.ndarray] = {}
    for name, tag, dims, offset, nbytes in tensor_rows:
        if tag not in _DTYPES:
            raise CheckpointError(f"{path}: unknown dtype tag {tag!r} for {name}")
        shape = () if dims == "scalar" else tuple(int(n) for n in dims.split("x"))
        raw = payload[offset : offset + nbytes]
        if len(raw) != nbytes:
            raise CheckpointError(f"{path}: payload truncated at tensor {name}")
        arrays[name] = np.frombuffer(raw, dtype=_DTYPES[tag]).reshape(shape).copy()

    param_tensors = {
        name: ad.parameter(arr, dtype=arr.dtype)
        for name, arr in arrays.items()
        if not name.startswith("opt.")
    }
    params = ModelParams(param_tensors)

    optimizer = AdamW(
        lr=train.learning_rate,
        weight_decay=train.weight_decay,
    )
    optimizer.step_count = int(scalars.get("optimizer.steps", "0"))
    for name in params.names():
        m = arrays.get(f"opt.m.{name}")
        v = arrays.get(f"opt.v.{name}")
        if m is None or v is None:
            raise CheckpointError(f"{path}: missing optimizer state for {name}")
        optimizer.moments[name] = (m, v)

    rng = np.random.default_rng()
    rng.bit_generator.state = json.loads(scalars["rng.state"])

    progress = Progress(
        step=int(scalars.get("progress.step", "0")),
        epoch=int(scalars.get("progress.epoch", "0")),
        step_in_epoch=int(scalars.get("progress.step_in_epoch", "0")),
    )
    return LoadedCheckpoint(
        params=params,
        train=train,
        encoder=encoder,
        decoder=decoder,
        optimizer=optimizer,
        rng=rng,
        progress=progress,
        vocab_file=scalars.get("vocab.file", "vocab.txt"),
    )
