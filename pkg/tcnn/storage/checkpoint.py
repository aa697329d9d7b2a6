# tcnn/storage/checkpoint.py
"""
Versioned binary checkpoint format.

    b"TCNN" | u32 version | u32 config length | config JSON
    u32 tensor count | tensor records
    u8 has optimizer | [u32 optimizer JSON length | optimizer JSON | u32 count | tensor records]

A tensor record is u32 name length | name (UTF-8) | u8 dtype tag | u32 rank |
rank x u32 extents | little-endian raw values. All integers are little-endian.
Tensors are written in model order (parameters, then buffers), JSON with sorted
keys, so save -> load -> save reproduces the file byte for byte.
"""
import json
import os
import struct
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Tuple

import numpy as np

from tcnn.core.exceptions import FormatError
from tcnn.model.resnet import ResNet, build_cnn
from tcnn.reparam.surgery import transform_last_stage
from tcnn.schemas.model import ModelConfig
from tcnn.schemas.reparam import InitMode
from tcnn.train.optim import Optimizer
from tcnn.utils.logging import logger

MAGIC = b"TCNN"
VERSION = 1
DTYPE_TAGS = {0: np.dtype("<f4"), 1: np.dtype("<f8"), 2: np.dtype("<i8")}
TAG_OF = {np.dtype(np.float32): 0, np.dtype(np.float64): 1, np.dtype(np.int64): 2}


@dataclass
class Checkpoint:
    """A decoded checkpoint: rebuilt model plus optional optimizer state."""
    model: ResNet
    config: Dict[str, Any]
    optimizer_meta: Optional[Dict[str, Any]] = None
    optimizer_state: Dict[str, np.ndarray] = field(default_factory=dict)


def _u32(value: int) -> bytes:
    return struct.pack("<I", value)


def _encode_tensors(named: List[Tuple[str, np.ndarray]]) -> bytes:
    parts = [_u32(len(named))]
    for name, array in named:
        array = np.asarray(array)
        if array.dtype not in TAG_OF:
            array = array.astype(np.float64 if array.dtype.kind == "f" else np.int64)
        raw_name = name.encode("utf-8")
        parts.append(_u32(len(raw_name)) + raw_name)
        parts.append(struct.pack("<BI", TAG_OF[array.dtype], array.ndim))
        parts.append(b"".join(_u32(extent) for extent in array.shape))
        parts.append(np.ascontiguousarray(array, dtype=DTYPE_TAGS[TAG_OF[array.dtype]]).tobytes())
    return b"".join(parts)


def _encode_json(obj: Dict[str, Any]) -> bytes:
    raw = json.dumps(obj, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return _u32(len(raw)) + raw


def model_record(model: ResNet, extra: Optional[Dict[str, Any]] = None) -> Dict[str, Any]:
    """JSON configuration block describing how to rebuild `model`."""
    record = {"model": model.config.dict(), "transform": model.transform, "dtype": model.config.dtype}
    if extra:
        record.update(extra)
    return record


def encode_checkpoint(model: ResNet, optimizer: Optional[Optimizer] = None,
                      optimizer_meta: Optional[Dict[str, Any]] = None,
                      extra: Optional[Dict[str, Any]] = None) -> bytes:
    parts = [MAGIC, _u32(VERSION), _encode_json(model_record(model, extra)),
             _encode_tensors(list(model.state_dict().items()))]
    if optimizer is None:
        parts.append(struct.pack("<B", 0))
    else:
        meta = dict(optimizer_meta or {}, kind=optimizer.kind, plan=json.loads(optimizer.plan.json()))
        parts.append(struct.pack("<B", 1))
        parts.append(_encode_json(meta))
        parts.append(_encode_tensors(list(optimizer.state_arrays().items())))
    return b"".join(parts)


def save_checkpoint(model: ResNet, path: str, optimizer: Optional[Optimizer] = None,
                    optimizer_meta: Optional[Dict[str, Any]] = None,
                    extra: Optional[Dict[str, Any]] = None) -> None:
    """Write `model` (and optionally the optimizer state) to `path`."""
    blob = encode_checkpoint(model, optimizer, optimizer_meta, extra)
    directory = os.path.dirname(path)
    if directory:
        os.makedirs(directory, exist_ok=True)
    with open(path, "wb") as f:
        f.write(blob)
    logger.info(f"Saved checkpoint {path} ({len(blob)} bytes)")


class _Reader:
    def __init__(self, blob: bytes):
        self.blob = blob
        self.pos = 0

    def take(self, n: int, what: str) -> bytes:
        if n < 0 or self.pos + n > len(self.blob):
            raise FormatError(f"Truncated checkpoint while reading {what}", offset=self.pos)
        chunk = self.blob[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def u32(self, what: str) -> int:
        return struct.unpack("<I", self.take(4, what))[0]

    def u8(self, what: str) -> int:
        return self.take(1, what)[0]

    def json(self, what: str) -> Dict[str, Any]:
        start = self.pos
        raw = self.take(self.u32(f"{what} length"), what)
        try:
            return json.loads(raw.decode("utf-8"))
        except (UnicodeDecodeError, ValueError) as e:
            raise FormatError(f"Invalid {what}", offset=start, detail=str(e))

    def tensors(self, what: str) -> Dict[str, np.ndarray]:
        count = self.u32(f"{what} count")
        out: Dict[str, np.ndarray] = {}
        for _ in range(count):
            start = self.pos
            try:
                name = self.take(self.u32("name length"), "tensor name").decode("utf-8")
            except UnicodeDecodeError:
                raise FormatError("Tensor name is not UTF-8", offset=start)
            if name in out:
                raise FormatError("Duplicate tensor name", offset=start, detail=name)
            tag = self.u8("dtype tag")
            if tag not in DTYPE_TAGS:
                raise FormatError("Unknown dtype tag", offset=self.pos - 1, detail=str(tag))
            rank = self.u32("rank")
            shape = tuple(self.u32("extent") for _ in range(rank))
            dtype = DTYPE_TAGS[tag]
            count_values = int(np.prod(shape, dtype=np.int64)) if shape else 1
            raw = self.take(count_values * dtype.itemsize, f"values of {name}")
            out[name] = np.frombuffer(raw, dtype=dtype).reshape(shape).astype(dtype.newbyteorder("="))
        return out


def decode_checkpoint(blob: bytes) -> Checkpoint:
    """
    Parse and rebuild a checkpoint; nothing is constructed before the whole file parsed.

    Raises:
        FormatError: Bad magic, unsupported version, truncation or inconsistent content
    """
    reader = _Reader(blob)
    if reader.take(4, "magic") != MAGIC:
        raise FormatError("Not a checkpoint (bad magic)", offset=0)
    version = reader.u32("version")
    if version != VERSION:
        raise FormatError("Unsupported checkpoint version", offset=4, detail=str(version))
    config = reader.json("config")
    tensors = reader.tensors("tensor")
    has_optimizer = reader.u8("optimizer flag")
    optimizer_meta = None
    optimizer_state: Dict[str, np.ndarray] = {}
    if has_optimizer == 1:
        optimizer_meta = reader.json("optimizer header")
        optimizer_state = reader.tensors("optimizer tensor")
    elif has_optimizer != 0:
        raise FormatError("Invalid optimizer flag", offset=reader.pos - 1, detail=str(has_optimizer))
    if reader.pos != len(blob):
        raise FormatError("Trailing bytes after checkpoint", offset=reader.pos)

    try:
        model_config = ModelConfig(**config["model"])
    except (KeyError, TypeError, ValueError) as e:
        raise FormatError("Invalid model config block", offset=12, detail=str(e))
    model = build_cnn(model_config)
    transform = config.get("transform")
    if transform:
        mode = InitMode(kind=transform["kind"], alpha_init=transform["alpha_init"],
                        lambda_init=transform["lambda_init"], pool_window=transform["pool_window"])
        model, _ = transform_last_stage(model, mode, transform["beta"], transform["content_scale"])
    model.load_state_dict(tensors)
    return Checkpoint(model=model, config=config, optimizer_meta=optimizer_meta, optimizer_state=optimizer_state)


def load_checkpoint(path: str) -> Checkpoint:
    """Read a checkpoint written by save_checkpoint."""
    if not os.path.isfile(path):
        raise FormatError("Checkpoint not found", detail=path)
    with open(path, "rb") as f:
        blob = f.read()
    checkpoint = decode_checkpoint(blob)
    logger.info(f"Loaded checkpoint {path} ({len(checkpoint.model.state_dict())} tensors)")
    return checkpoint
