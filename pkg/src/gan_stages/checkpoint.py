"""
Binary checkpoints.

Layout (little-endian):
    magic b"EQMG" | u16 version | u8 stage id | 32-byte config digest
    | u32 length + config text | u32 length + vocabulary JSON
    | u32 block count | blocks

Each block is u16 name length + name, u8 rank, u32 extents, then the values
as <f8. Loading recomputes the config digest and rebuilds the model before
filling in the blocks, so values come back bit-exact.
"""

from typing import BinaryIO, Dict, Tuple

import io
import struct
from pathlib import Path

import numpy as np
from dotenv import dotenv_values

from config import StageConfig, config_digest, dump_config, parse_config
from graph_core import AtomVocab

from .models import CheckpointError, ModelParams, StageId, build_model


MAGIC = b"EQMG"
VERSION = 1


def _write_text(f: BinaryIO, text: str) -> None:
    data = text.encode("utf-8")
    f.write(struct.pack("<I", len(data)))
    f.write(data)


def _read_exact(f: BinaryIO, size: int) -> bytes:
    data = f.read(size)
    if len(data) != size:
        raise CheckpointError("Truncated checkpoint")
    return data


def _read_text(f: BinaryIO) -> str:
    (size,) = struct.unpack("<I", _read_exact(f, 4))
    return _read_exact(f, size).decode("utf-8")


def save_checkpoint(model: ModelParams, config: StageConfig, vocab: AtomVocab, path: Path) -> None:
    """Write model parameters with the config and vocabulary they were built from"""
    blocks = model.named_parameters()
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<HB", VERSION, model.stage.value))
        f.write(config_digest(config))
        _write_text(f, dump_config(config))
        _write_text(f, vocab.to_json())
        f.write(struct.pack("<I", len(blocks)))
        for name, tensor in blocks.items():
            encoded = name.encode("utf-8")
            f.write(struct.pack("<H", len(encoded)))
            f.write(encoded)
            f.write(struct.pack("<B", tensor.ndim))
            f.write(struct.pack(f"<{tensor.ndim}I", *tensor.shape))
            f.write(np.ascontiguousarray(tensor.values, dtype="<f8").tobytes())


def read_blocks(path: Path) -> Tuple[StageId, StageConfig, AtomVocab, Dict[str, np.ndarray]]:
    with open(path, "rb") as f:
        if f.read(4) != MAGIC:
            raise CheckpointError(f"{path} is not a checkpoint (bad magic)")
        version, stage_value = struct.unpack("<HB", _read_exact(f, 3))
        if version != VERSION:
            raise CheckpointError(f"Unsupported checkpoint version {version}")
        try:
            stage = StageId(stage_value)
        except ValueError:
            raise CheckpointError(f"Unknown stage id {stage_value}") from None
        digest = _read_exact(f, 32)
        config_text = _read_text(f)
        config = parse_config(dict(dotenv_values(stream=io.StringIO(config_text))))
        if config_digest(config) != digest:
            raise CheckpointError("Config digest mismatch")
        vocab = AtomVocab.from_json(_read_text(f))

        (count,) = struct.unpack("<I", _read_exact(f, 4))
        blocks: Dict[str, np.ndarray] = {}
        for _ in range(count):
            (name_len,) = struct.unpack("<H", _read_exact(f, 2))
            name = _read_exact(f, name_len).decode("utf-8")
            (rank,) = struct.unpack("<B", _read_exact(f, 1))
            shape = struct.unpack(f"<{rank}I", _read_exact(f, 4 * rank))
            size = int(np.prod(shape)) if rank else 1
            values = np.frombuffer(_read_exact(f, 8 * size), dtype="<f8").reshape(shape)
            blocks[name] = values.astype(np.float64)
    return stage, config, vocab, blocks


def load_checkpoint(path: Path) -> Tuple[ModelParams, StageConfig, AtomVocab]:
    """
    Rebuild a stage model from a checkpoint

    Raises:
        CheckpointError on bad magic/version, digest mismatch, or missing or
        mis-shaped parameter blocks
    """
    stage, config, vocab, blocks = read_blocks(path)
    model = build_model(stage, config, len(vocab))
    params = model.named_parameters()
    if set(params) != set(blocks):
        missing = sorted(set(params) ^ set(blocks))
        raise CheckpointError(f"Parameter blocks do not match the model: {missing[:5]}")
    for name, tensor in params.items():
        if tensor.shape != blocks[name].shape:
            raise CheckpointError(f"{name}: shape {blocks[name].shape}, expected {tensor.shape}")
        tensor.values[...] = blocks[name]
    return model, config, vocab
