"""Binary tensor files and weight-set directories.

Layout of a tensor file (all little-endian)::

    8 bytes   magic  b"SHLT\\x00\\x00\\x00\\x01"
    u32       rank
    rank*u32  dims
    f32 * prod(dims)  row-major payload

Loading upcasts the payload to float64. A weight set is a directory holding
``manifest.json`` (ordered tensor names, init seed) and one ``<name>.shlt``
per tensor.
"""

import json
import struct
from pathlib import Path

import numpy as np

from sehilo.nn import WeightSet

TENSOR_MAGIC = b"SHLT\x00\x00\x00\x01"
MANIFEST = "manifest.json"


class TensorFormatError(ValueError):
    pass


def tensor_to_bytes(x):
    x = np.asarray(x, dtype=np.float64)
    head = TENSOR_MAGIC + struct.pack("<I", x.ndim) + struct.pack(f"<{x.ndim}I", *x.shape)
    return head + np.ascontiguousarray(x, dtype="<f4").tobytes()


def tensor_from_bytes(buf):
    buf = bytes(buf)
    if len(buf) < 12 or buf[:8] != TENSOR_MAGIC:
        raise TensorFormatError("not a tensor file (bad magic)")
    (rank,) = struct.unpack_from("<I", buf, 8)
    off = 12 + 4 * rank
    if len(buf) < off:
        raise TensorFormatError("truncated tensor header")
    dims = struct.unpack_from(f"<{rank}I", buf, 12)
    n = int(np.prod(dims, dtype=np.int64))
    if len(buf) != off + 4 * n:
        raise TensorFormatError(
            f"payload size {len(buf) - off} bytes does not match dims {dims} ({4 * n} bytes)"
        )
    data = np.frombuffer(buf, dtype="<f4", count=n, offset=off)
    return data.astype(np.float64).reshape(dims)


def save_tensor(path, x):
    Path(path).write_bytes(tensor_to_bytes(x))


def load_tensor(path):
    try:
        return tensor_from_bytes(Path(path).read_bytes())
    except TensorFormatError as exc:
        raise TensorFormatError(f"{path}: {exc}") from None


def save_weights(directory, weights):
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for name in weights.names:
        save_tensor(directory / f"{name}.shlt", weights[name])
    manifest = {"names": weights.names, "init_seed": weights.init_seed}
    (directory / MANIFEST).write_text(json.dumps(manifest, indent=2) + "\n")


def load_weights(directory):
    directory = Path(directory)
    manifest = json.loads((directory / MANIFEST).read_text())
    tensors = {n: load_tensor(directory / f"{n}.shlt") for n in manifest["names"]}
    return WeightSet(tensors, init_seed=manifest.get("init_seed"))
