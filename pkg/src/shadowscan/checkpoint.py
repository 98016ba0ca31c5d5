"""Flat binary checkpoint with a text manifest.

Layout: ASCII header lines, then one raw little-endian float64 blob.

    SHADOWSCAN CKPT 1
    config <key>=<value>        (one line per model config field)
    param <name> <d0>x<d1>... <byte-offset>
    blob <total-bytes>
    <raw data>

Offsets index into the blob. The manifest (names, shapes, config) is the
compatibility contract: loading rejects any mismatch instead of guessing.
"""

from __future__ import annotations

import io

import numpy as np

from .blocks import ShadowNet
from .config import ModelConfig
from .errors import ValidationError

_MAGIC = b"SHADOWSCAN CKPT 1"


def save_checkpoint(path: str, model: ShadowNet) -> None:
    named = model.named_params()
    header = io.BytesIO()
    header.write(_MAGIC + b"\n")
    for key, value in model.config.to_dict().items():
        header.write(f"config {key}={value}\n".encode("ascii"))
    blob = io.BytesIO()
    for name, tensor in named:
        shape = "x".join(str(d) for d in tensor.data.shape)
        header.write(f"param {name} {shape} {blob.tell()}\n".encode("ascii"))
        blob.write(np.ascontiguousarray(tensor.data, dtype="<f8").tobytes())
    payload = blob.getvalue()
    header.write(f"blob {len(payload)}\n".encode("ascii"))
    with open(path, "wb") as f:
        f.write(header.getvalue())
        f.write(payload)


def load_checkpoint(path: str) -> tuple[ModelConfig, dict[str, np.ndarray]]:
    with open(path, "rb") as f:
        raw = f.read()
    end = raw.find(b"\n")
    if end < 0 or raw[:end] != _MAGIC:
        raise ValidationError(f"{path} is not a checkpoint (bad magic)")
    pos = end + 1
    config_values: dict[str, str] = {}
    entries: list[tuple[str, tuple[int, ...], int]] = []
    blob_size = None
    while True:
        end = raw.find(b"\n", pos)
        if end < 0:
            raise ValidationError("truncated checkpoint manifest")
        line = raw[pos:end].decode("ascii")
        pos = end + 1
        if line.startswith("config "):
            key, _, value = line[len("config ") :].partition("=")
            config_values[key] = value
        elif line.startswith("param "):
            _, name, shape_text, offset = line.split(" ")
            shape = tuple(int(d) for d in shape_text.split("x"))
            entries.append((name, shape, int(offset)))
        elif line.startswith("blob "):
            blob_size = int(line.split(" ")[1])
            break
        else:
            raise ValidationError(f"bad manifest line: {line!r}")
    blob = raw[pos : pos + blob_size]
    if len(blob) != blob_size:
        raise ValidationError("checkpoint blob shorter than manifest promises")
    arrays: dict[str, np.ndarray] = {}
    for name, shape, offset in entries:
        count = int(np.prod(shape))
        arr = np.frombuffer(blob, dtype="<f8", count=count, offset=offset)
        arrays[name] = arr.reshape(shape).astype(np.float64)
    return ModelConfig.from_dict(config_values), arrays


def restore_model(model: ShadowNet, arrays: dict[str, np.ndarray]) -> None:
    named = dict(model.named_params())
    if set(named) != set(arrays):
        missing = sorted(set(named) - set(arrays))
        extra = sorted(set(arrays) - set(named))
        raise ValidationError(f"parameter names disagree (missing {missing}, extra {extra})")
    for name, tensor in named.items():
        if tensor.data.shape != arrays[name].shape:
            raise ValidationError(
                f"shape mismatch for {name}: model {tensor.data.shape} vs checkpoint {arrays[name].shape}"
            )
        tensor.data[...] = arrays[name]


def model_from_checkpoint(path: str) -> ShadowNet:
    config, arrays = load_checkpoint(path)
    model = ShadowNet(config)
    restore_model(model, arrays)
    return model
