"""Checkpoint container.

Binary layout (all integers little-endian)::

    magic        8 bytes  b"MUBCKPT\\0"
    version      uint16
    header_len   uint32   followed by a UTF-8 JSON header (arch descriptor, seed, provenance, epoch)
    n_params     uint64   followed by n_params float32 values
    n_optimizer  uint64   followed by n_optimizer float32 values
    rng_len      uint32   followed by rng_len opaque bytes
    crc32        uint32   of every preceding byte
"""

import json
import logging as log
import struct
import zlib
from pathlib import Path

import numpy as np
import torch

from ..domain import ArchSpec, Checkpoint, CheckpointError, ModelState

MAGIC = b"MUBCKPT\0"
FORMAT_VERSION = 1


def _floats(tensor: torch.Tensor) -> bytes:
    return tensor.detach().to(torch.float32).contiguous().numpy().astype("<f4").tobytes()


def encode_checkpoint(state: Checkpoint) -> bytes:
    """Serialise a checkpoint to bytes."""
    model = state.model
    header = json.dumps(
        {
            "arch": model.arch.to_dict(),
            "seed": model.seed,
            "trained_on": model.trained_on,
            "epochs": model.epochs,
            "train_accuracy": model.train_accuracy,
            "epoch": state.epoch,
        },
        sort_keys=True,
    ).encode("utf-8")
    body = b"".join(
        [
            MAGIC,
            struct.pack("<HI", FORMAT_VERSION, len(header)),
            header,
            struct.pack("<Q", model.params.numel()),
            _floats(model.params),
            struct.pack("<Q", state.optimizer_state.numel()),
            _floats(state.optimizer_state),
            struct.pack("<I", len(state.rng_state)),
            state.rng_state,
        ]
    )
    return body + struct.pack("<I", zlib.crc32(body))


class _Reader:
    def __init__(self, data: bytes) -> None:
        self.data, self.pos = data, 0

    def take(self, size: int) -> bytes:
        if self.pos + size > len(self.data):
            raise CheckpointError("checkpoint is truncated")
        chunk = self.data[self.pos : self.pos + size]
        self.pos += size
        return chunk

    def unpack(self, fmt: str) -> tuple:
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def floats(self) -> torch.Tensor:
        (count,) = self.unpack("<Q")
        return torch.from_numpy(np.frombuffer(self.take(4 * count), dtype="<f4").astype(np.float32))


def decode_checkpoint(data: bytes) -> Checkpoint:
    """Parse bytes written by `encode_checkpoint()`."""
    if len(data) < len(MAGIC) + 4 or data[: len(MAGIC)] != MAGIC:
        raise CheckpointError("not a checkpoint file (bad magic)")
    (crc,) = struct.unpack("<I", data[-4:])
    if zlib.crc32(data[:-4]) != crc:
        raise CheckpointError("checkpoint is corrupt or truncated (checksum mismatch)")
    reader = _Reader(data[:-4])
    reader.take(len(MAGIC))
    version, header_len = reader.unpack("<HI")
    if version != FORMAT_VERSION:
        raise CheckpointError(f"checkpoint format version {version} is not supported (expected {FORMAT_VERSION})")
    try:
        header = json.loads(reader.take(header_len).decode("utf-8"))
        arch = ArchSpec.from_dict(header["arch"])
    except (ValueError, KeyError) as e:
        raise CheckpointError(f"checkpoint header is unreadable: {e}") from e
    params = reader.floats()
    optimizer_state = reader.floats()
    (rng_len,) = reader.unpack("<I")
    rng_state = reader.take(rng_len)
    model = ModelState(
        arch=arch,
        params=params,
        seed=int(header["seed"]),
        trained_on=header["trained_on"],
        epochs=int(header["epochs"]),
        train_accuracy=header.get("train_accuracy"),
    )
    return Checkpoint(model=model, optimizer_state=optimizer_state, epoch=int(header["epoch"]), rng_state=rng_state)


def save_checkpoint(state: Checkpoint, path: Path | str) -> Path:
    """Write a checkpoint file. Parameters are stored as float32."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(encode_checkpoint(state))
    log.debug("Saved checkpoint to '%s'", path)
    return path


def load_checkpoint(path: Path | str) -> Checkpoint:
    """Read a checkpoint file."""
    return decode_checkpoint(Path(path).read_bytes())


def save_model(model: ModelState, path: Path | str) -> Path:
    """Checkpoint holding only a model."""
    return save_checkpoint(Checkpoint(model, torch.zeros(0), model.epochs, b""), path)


def load_model(path: Path | str) -> ModelState:
    """Model stored by `save_model()` (or any checkpoint)."""
    return load_checkpoint(path).model
