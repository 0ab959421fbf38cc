"""Binary model checkpoints.

Layout (all little-endian):

    magic "RNF1" | u32 version=1 | u32 n_dims | n_dims * u32 layer dims
    | u32 encoder_depth | f32 dropout_rate
    | per layer: row-major f32 weights, then f32 biases
    | 32-byte config digest

Parameters are stored as float32; training keeps float64 internally, so a
save/load round trip quantizes to f32 exactly once.
"""

from __future__ import annotations

import struct

import numpy as np

from .errors import CheckpointError
from .nn import Model

MAGIC = b"RNF1"
VERSION = 1
DIGEST_LEN = 32


def save_checkpoint(model: Model, path, config_digest: bytes = b"\x00" * DIGEST_LEN) -> None:
    if len(config_digest) != DIGEST_LEN:
        raise CheckpointError(f"config digest must be {DIGEST_LEN} bytes")
    dims = model.layer_dims
    parts = [MAGIC, struct.pack("<II", VERSION, len(dims))]
    parts.append(struct.pack(f"<{len(dims)}I", *dims))
    parts.append(struct.pack("<I", model.encoder_depth))
    parts.append(struct.pack("<f", model.dropout_rate))
    for w, b in zip(model.weights, model.biases):
        parts.append(np.ascontiguousarray(w, dtype="<f4").tobytes())
        parts.append(np.asarray(b, dtype="<f4").tobytes())
    parts.append(bytes(config_digest))
    with open(path, "wb") as fh:
        fh.write(b"".join(parts))


def expected_size(dims) -> int:
    n_params = sum((dims[i + 1] * dims[i]) + dims[i + 1] for i in range(len(dims) - 1))
    return len(MAGIC) + 8 + 4 * len(dims) + 4 + 4 + 4 * n_params + DIGEST_LEN


def load_checkpoint(path) -> tuple[Model, bytes]:
    """Read a checkpoint; returns the model (float64 params) and the stored
    config digest.  Magic, version and exact file length are validated."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < len(MAGIC) + 8 or blob[: len(MAGIC)] != MAGIC:
        raise CheckpointError(f"{path}: bad magic")
    off = len(MAGIC)
    version, n_dims = struct.unpack_from("<II", blob, off)
    off += 8
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported version {version}")
    if n_dims < 3 or len(blob) < off + 4 * n_dims + 8:
        raise CheckpointError(f"{path}: truncated header")
    dims = struct.unpack_from(f"<{n_dims}I", blob, off)
    off += 4 * n_dims
    (encoder_depth,) = struct.unpack_from("<I", blob, off)
    off += 4
    (dropout,) = struct.unpack_from("<f", blob, off)
    off += 4
    if len(blob) != expected_size(dims):
        raise CheckpointError(
            f"{path}: size {len(blob)} != expected {expected_size(dims)} for dims {dims}"
        )
    weights, biases = [], []
    for i in range(n_dims - 1):
        fan_out, fan_in = dims[i + 1], dims[i]
        w = np.frombuffer(blob, dtype="<f4", count=fan_out * fan_in, offset=off)
        off += 4 * fan_out * fan_in
        b = np.frombuffer(blob, dtype="<f4", count=fan_out, offset=off)
        off += 4 * fan_out
        weights.append(w.reshape(fan_out, fan_in).astype(np.float64))
        biases.append(b.astype(np.float64))
    digest = blob[off:]
    try:
        model = Model(dims, weights, biases, int(encoder_depth), float(dropout))
    except Exception as exc:
        raise CheckpointError(f"{path}: invalid model parameters ({exc})") from None
    return model, digest
