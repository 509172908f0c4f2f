"""fume/net/checkpoint.py

Self-describing binary checkpoint container.

Layout::

    b"FUMECKPT"                 magic
    u16 little-endian           format version
    u32 little-endian           header length in bytes
    header                      msgspec JSON: variant, seed, dtype, tensor table
    payload                     float64 little-endian values, table order

Files are byte-stable: equal parameters give equal bytes.
"""

import logging
import struct
from pathlib import Path
from typing import List, Tuple, Union

import msgspec
import numpy as np

from fume.errors import CheckpointError, FumeError
from fume.net.model import FumeNet, build

logger = logging.getLogger(__name__)

MAGIC = b"FUMECKPT"
VERSION = 1
_PREFIX = struct.Struct("<HI")


class TensorEntry(msgspec.Struct):
    name: str
    shape: List[int]
    offset: int
    buffer: bool = False


class CheckpointHeader(msgspec.Struct):
    variant: str
    seed: int
    dtype: str
    tensors: List[TensorEntry]


def save_checkpoint(net: FumeNet, path: Union[str, Path]) -> Path:
    """Write every parameter and BN running statistic of ``net`` to ``path``."""
    path = Path(path)
    entries, chunks, offset = [], [], 0
    for name, value in net.store.state().items():
        data = np.ascontiguousarray(value, dtype="<f8").tobytes()
        entries.append(TensorEntry(name=name, shape=list(value.shape), offset=offset,
                                   buffer=name in net.store.buffers))
        chunks.append(data)
        offset += len(data)
    header = msgspec.json.encode(CheckpointHeader(
        variant=net.config.name, seed=net.seed, dtype=net.dtype.name, tensors=entries,
    ))
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "wb") as fh:
            fh.write(MAGIC)
            fh.write(_PREFIX.pack(VERSION, len(header)))
            fh.write(header)
            for chunk in chunks:
                fh.write(chunk)
    except OSError as e:
        raise CheckpointError(f"Cannot write checkpoint {path}: {e}")
    logger.info(f"Saved {net.config.name} checkpoint ({len(entries)} tensors) to {path}")
    return path


def read_header(blob: bytes, source: str = "<bytes>") -> Tuple[CheckpointHeader, int]:
    """Parse the header; returns it with the payload start offset."""
    if not blob.startswith(MAGIC):
        raise CheckpointError(f"{source} is not a fume checkpoint (bad magic)")
    start = len(MAGIC) + _PREFIX.size
    if len(blob) < start:
        raise CheckpointError(f"{source} is truncated")
    version, header_len = _PREFIX.unpack_from(blob, len(MAGIC))
    if version != VERSION:
        raise CheckpointError(f"{source} has unsupported format version {version}")
    try:
        header = msgspec.json.decode(blob[start:start + header_len], type=CheckpointHeader)
    except msgspec.DecodeError as e:
        raise CheckpointError(f"{source} has a corrupt header: {e}")
    return header, start + header_len


def load_checkpoint(path: Union[str, Path], dtype=None) -> FumeNet:
    """
    Rebuild the network stored at ``path``.

    Args:
        path: Checkpoint file
        dtype: Parameter dtype of the rebuilt network; defaults to the saved one

    Raises:
        CheckpointError: If the file is missing, truncated or inconsistent
    """
    path = Path(path)
    try:
        blob = path.read_bytes()
    except OSError as e:
        raise CheckpointError(f"Cannot read checkpoint {path}: {e}")

    header, payload_start = read_header(blob, str(path))
    payload = memoryview(blob)[payload_start:]
    try:
        net = build(header.variant, header.seed, dtype=dtype or header.dtype)
    except FumeError as e:
        raise CheckpointError(f"{path}: {e.message}")

    state = {}
    expected_end = 0
    for entry in header.tensors:
        count = int(np.prod(entry.shape, dtype=np.int64))
        end = entry.offset + 8 * count
        if entry.offset < 0 or end > len(payload):
            raise CheckpointError(f"{path}: tensor {entry.name} runs past the end of the file")
        expected_end = max(expected_end, end)
        state[entry.name] = np.frombuffer(payload[entry.offset:end], dtype="<f8").reshape(entry.shape)
    if expected_end != len(payload):
        raise CheckpointError(f"{path}: payload holds {len(payload)} bytes, table describes {expected_end}")
    try:
        net.store.load_state(state)
    except (KeyError, FumeError) as e:
        raise CheckpointError(f"{path}: checkpoint does not match variant {header.variant}: {e}")
    logger.info(f"Loaded {header.variant} checkpoint from {path}")
    return net
