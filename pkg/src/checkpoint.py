"""Versioned binary checkpoint container.

Layout (little-endian throughout):

    8 bytes   magic b"SANMCKPT"
    u32       format version
    u32       header length H
    H bytes   UTF-8 header, one ``key=value`` per line (ModelConfig fields, ``mem_`` prefixed
              memory fields, and ``meta.`` prefixed run metadata)
    u32       tensor count
    per tensor:
        u32 name length, name bytes (UTF-8)
        u32 ndim, ndim x u32 dims
        f64 payload, row-major

Model parameters use their dotted names; extra state (optimizer moments) is
stored under ``state.`` prefixed names.
"""

import logging
import struct
from pathlib import Path
from typing import BinaryIO, Dict, Optional, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from .config import flatten_model_config, unflatten_model_config
from .errors import CheckpointFormatError, ConfigurationError
from .model import ModelParams, build_model

logger = logging.getLogger(__name__)

MAGIC = b"SANMCKPT"
VERSION = 1
STATE_PREFIX = "state."
META_PREFIX = "meta."


class Checkpoint(BaseModel):
    """A loaded checkpoint: parameters, extra state arrays and metadata."""

    model_config = ConfigDict(arbitrary_types_allowed=True)

    params: ModelParams
    state: Dict[str, np.ndarray] = Field(default_factory=dict)
    meta: Dict[str, str] = Field(default_factory=dict)


def _write_u32(fh: BinaryIO, value: int) -> None:
    fh.write(struct.pack("<I", value))


def _write_tensor(fh: BinaryIO, name: str, data: np.ndarray) -> None:
    encoded = name.encode("utf-8")
    _write_u32(fh, len(encoded))
    fh.write(encoded)
    _write_u32(fh, data.ndim)
    for dim in data.shape:
        _write_u32(fh, dim)
    fh.write(np.ascontiguousarray(data, dtype="<f8").tobytes())


def save_checkpoint(path: Union[str, Path], params: ModelParams, state: Optional[Dict[str, np.ndarray]] = None,
                    meta: Optional[Dict[str, str]] = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    header = dict(flatten_model_config(params.config))
    header.update({f"{META_PREFIX}{k}": str(v) for k, v in (meta or {}).items()})
    header_bytes = "".join(f"{k}={v}\n" for k, v in header.items()).encode("utf-8")

    tensors = [(name, t.data) for name, t in params.named_tensors()]
    tensors += [(f"{STATE_PREFIX}{k}", np.asarray(v, dtype=np.float64)) for k, v in (state or {}).items()]

    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(MAGIC)
        _write_u32(fh, VERSION)
        _write_u32(fh, len(header_bytes))
        fh.write(header_bytes)
        _write_u32(fh, len(tensors))
        for name, data in tensors:
            _write_tensor(fh, name, data)
    tmp.replace(path)
    logger.debug("wrote checkpoint %s (%d tensors)", path, len(tensors))
    return path


class _Reader:
    def __init__(self, blob: bytes, path: Path):
        self.blob = blob
        self.path = path
        self.offset = 0

    def take(self, n: int) -> bytes:
        if self.offset + n > len(self.blob):
            raise CheckpointFormatError(f"{self.path}: truncated at byte {self.offset}")
        chunk = self.blob[self.offset:self.offset + n]
        self.offset += n
        return chunk

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]

    def tensor(self) -> Tuple[str, np.ndarray]:
        name = self.take(self.u32()).decode("utf-8")
        dims = tuple(self.u32() for _ in range(self.u32()))
        count = int(np.prod(dims)) if dims else 1
        data = np.frombuffer(self.take(8 * count), dtype="<f8").astype(np.float64).reshape(dims)
        return name, data


def _parse_header(text: str, path: Path) -> Dict[str, str]:
    header: Dict[str, str] = {}
    for line in text.splitlines():
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise CheckpointFormatError(f"{path}: malformed header line {line!r}")
        header[key] = value
    return header


def load_checkpoint(path: Union[str, Path]) -> Checkpoint:
    path = Path(path)
    try:
        blob = path.read_bytes()
    except OSError as exc:
        raise CheckpointFormatError(f"cannot read checkpoint {path}: {exc}") from exc

    reader = _Reader(blob, path)
    if reader.take(len(MAGIC)) != MAGIC:
        raise CheckpointFormatError(f"{path}: not a checkpoint (bad magic)")
    version = reader.u32()
    if version != VERSION:
        raise CheckpointFormatError(f"{path}: unsupported version {version}")
    header = _parse_header(reader.take(reader.u32()).decode("utf-8"), path)
    meta = {k[len(META_PREFIX):]: v for k, v in header.items() if k.startswith(META_PREFIX)}
    flat = {k: v for k, v in header.items() if not k.startswith(META_PREFIX)}
    try:
        cfg = unflatten_model_config(flat)
    except ConfigurationError as exc:
        raise CheckpointFormatError(f"{path}: {exc}") from exc

    params = build_model(cfg, seed=0)
    slots = params.tensors()
    seen = set()
    state: Dict[str, np.ndarray] = {}
    for _ in range(reader.u32()):
        name, data = reader.tensor()
        if name.startswith(STATE_PREFIX):
            state[name[len(STATE_PREFIX):]] = data
            continue
        if name not in slots or slots[name].shape != data.shape:
            raise CheckpointFormatError(f"{path}: tensor {name!r} {data.shape} does not match the config header")
        slots[name].data[...] = data
        seen.add(name)
    missing = set(slots) - seen
    if missing:
        raise CheckpointFormatError(f"{path}: missing tensors {sorted(missing)[:3]}")
    if reader.offset != len(blob):
        raise CheckpointFormatError(f"{path}: {len(blob) - reader.offset} trailing bytes")
    return Checkpoint(params=params, state=state, meta=meta)
