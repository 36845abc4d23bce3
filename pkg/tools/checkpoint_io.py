"""
tools/checkpoint_io.py
Save and load model checkpoints (FDDR1 format)

Layout: b"FDDR1", uint32 little-endian header length, UTF-8 JSON header
{"config": {...}, "vocab": [...], "tensors": [[name, shape], ...]}, then
every tensor as float64 little-endian row-major in header order.
"""

import json
import struct
from pathlib import Path
from typing import List, Tuple

import numpy as np

from tools.errors import CheckpointFormatError
from tools.schema_scaffold import ScaffoldLayout
from tools.tiny_lm import ModelConfig, Params, TinyLM, param_shapes

MAGIC = b"FDDR1"


def save_checkpoint(path, config: ModelConfig, params: Params, vocab_tokens: List[str]) -> Path:
    """Write a checkpoint; returns the path written"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    order = param_shapes(config)
    header = {
        "config": config.model_dump(),
        "vocab": list(vocab_tokens),
        "tensors": [[name, list(shape)] for name, shape in order],
    }
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", len(header_bytes)))
        f.write(header_bytes)
        for name, shape in order:
            tensor = np.asarray(params[name], dtype="<f8")
            if tensor.shape != tuple(shape):
                raise CheckpointFormatError(f"{name} has shape {tensor.shape}, expected {shape}")
            f.write(np.ascontiguousarray(tensor).tobytes())
    return path


def load_checkpoint(path) -> Tuple[ModelConfig, Params, List[str]]:
    """
    Read a checkpoint

    Returns:
        (config, params, vocab tokens)

    Raises:
        CheckpointFormatError: bad magic, truncated file, or shape mismatch
    """
    data = Path(path).read_bytes()
    if not data.startswith(MAGIC):
        raise CheckpointFormatError(f"{path} is not an FDDR1 checkpoint")
    offset = len(MAGIC)
    if len(data) < offset + 4:
        raise CheckpointFormatError("truncated header length")
    (header_len,) = struct.unpack("<I", data[offset:offset + 4])
    offset += 4
    try:
        header = json.loads(data[offset:offset + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CheckpointFormatError(f"unreadable header: {e}") from e
    offset += header_len

    config = ModelConfig(**header["config"])
    expected = [[name, list(shape)] for name, shape in param_shapes(config)]
    if header["tensors"] != expected:
        raise CheckpointFormatError("tensor table does not match the model config")

    params: Params = {}
    for name, shape in header["tensors"]:
        count = int(np.prod(shape)) if shape else 1
        nbytes = count * 8
        if offset + nbytes > len(data):
            raise CheckpointFormatError(f"truncated tensor data at {name}")
        params[name] = np.frombuffer(data, dtype="<f8", count=count, offset=offset).reshape(shape).astype(np.float64)
        offset += nbytes
    if offset != len(data):
        raise CheckpointFormatError(f"{len(data) - offset} trailing bytes after tensor data")
    return config, params, header["vocab"]


def load_model(path, layout: ScaffoldLayout) -> TinyLM:
    """Checkpoint as a TinyLM, checked against the layout's vocabulary"""
    config, params, vocab = load_checkpoint(path)
    if list(vocab) != list(layout.vocab.tokens):
        raise CheckpointFormatError(f"{path} was trained with a different vocabulary")
    return TinyLM(config, params, mask_id=layout.vocab.mask_id)


def init_model(config: ModelConfig, layout: ScaffoldLayout) -> TinyLM:
    """Freshly initialised model sized to the layout's vocabulary"""
    config = config.model_copy(update={"vocab_size": len(layout.vocab)})
    return TinyLM(config, mask_id=layout.vocab.mask_id)
