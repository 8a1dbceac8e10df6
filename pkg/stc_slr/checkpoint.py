"""
STCK1 checkpoint files.

Layout (little-endian): magic "STCK1", u32 parameter count, then per parameter
u32 name length, UTF-8 name, u32 rank, rank x u32 dims, raw f32 payload.
The run configuration travels in a JSON sidecar next to the binary file.
"""

import json
import os

from typing import Dict, Mapping, Optional, Union

import numpy as np

from stc_slr.exceptions import CheckpointFormatError
from stc_slr.tensor_core import DiffTensor
from stc_slr.version import __version__, is_compatible


MAGIC = b"STCK1"
_U32 = np.dtype("<u4")
_F32 = np.dtype("<f4")


def sidecar_path(path: str) -> str:
    return f"{path}.json"


def save_checkpoint(
    path: str,
    params: Mapping[str, Union[DiffTensor, np.ndarray]],
    config: Optional[dict] = None,
    metadata: Optional[dict] = None,
) -> None:
    """
    Write named parameters in insertion order, plus the sidecar when a config is given.
    """
    chunks = [MAGIC, np.array([len(params)], dtype=_U32).tobytes()]
    for name, value in params.items():
        array = value.data if isinstance(value, DiffTensor) else np.asarray(value)
        encoded = name.encode("utf-8")
        chunks.append(np.array([len(encoded)], dtype=_U32).tobytes())
        chunks.append(encoded)
        chunks.append(np.array([array.ndim, *array.shape], dtype=_U32).tobytes())
        chunks.append(np.ascontiguousarray(array, dtype=_F32).tobytes())

    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "wb") as f:
        f.write(b"".join(chunks))

    if config is not None:
        with open(sidecar_path(path), "w") as f:
            sidecar = {"config": config, "metadata": metadata or {}, "version": __version__}
            json.dump(sidecar, f, indent=2, sort_keys=True)


class _Reader:
    def __init__(self, path: str, blob: bytes):
        self.path = path
        self.blob = blob
        self.offset = 0

    def take(self, n: int, what: str) -> bytes:
        if self.offset + n > len(self.blob):
            raise CheckpointFormatError(self.path, self.offset, f"truncated while reading {what}")
        chunk = self.blob[self.offset : self.offset + n]
        self.offset += n
        return chunk

    def u32(self, what: str, count: int = 1) -> np.ndarray:
        return np.frombuffer(self.take(4 * count, what), dtype=_U32)


def load_checkpoint(path: str) -> Dict[str, np.ndarray]:
    """
    Read an STCK1 file into an ordered mapping of float32 arrays.

    Raises:
        FileNotFoundError: If the file does not exist.
        CheckpointFormatError: With the byte offset of the first malformed field.
    """
    if not os.path.exists(path):
        raise FileNotFoundError(f"Checkpoint not found: {path}")
    with open(path, "rb") as f:
        reader = _Reader(path, f.read())

    if reader.take(len(MAGIC), "magic") != MAGIC:
        raise CheckpointFormatError(path, 0, "bad magic, expected STCK1")
    count = int(reader.u32("parameter count")[0])

    params: Dict[str, np.ndarray] = {}
    for _ in range(count):
        name_len = int(reader.u32("name length")[0])
        name_offset = reader.offset
        try:
            name = reader.take(name_len, "name").decode("utf-8")
        except UnicodeDecodeError:
            raise CheckpointFormatError(path, name_offset, "parameter name is not valid UTF-8") from None
        rank = int(reader.u32(f"rank of {name}")[0])
        dims = tuple(int(d) for d in reader.u32(f"dims of {name}", rank))
        size = int(np.prod(dims)) if dims else 1
        payload = reader.take(4 * size, f"payload of {name}")
        params[name] = np.frombuffer(payload, dtype=_F32).reshape(dims).astype(np.float32)

    if reader.offset != len(reader.blob):
        raise CheckpointFormatError(path, reader.offset, "trailing bytes after last parameter")
    return params


def load_sidecar(path: str) -> dict:
    """
    Return the `{"config", "metadata", "version"}` sidecar of a checkpoint.

    Raises:
        CheckpointFormatError: When the sidecar was written by another major version.
    """
    side = sidecar_path(path)
    if not os.path.exists(side):
        raise FileNotFoundError(f"Checkpoint config sidecar not found: {side}")
    with open(side) as f:
        sidecar = json.load(f)
    written_by = sidecar.get("version", __version__)
    if not is_compatible(written_by, __version__):
        raise CheckpointFormatError(side, 0, f"written by stc-slr {written_by}, running {__version__}")
    return sidecar
