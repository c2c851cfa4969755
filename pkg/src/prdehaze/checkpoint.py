"""Binary checkpoint container: a JSON header followed by raw little-endian arrays.

    b"PRDHCKPT" | u64 header length | header JSON (sorted keys) | array bytes

The header holds ``metadata`` (format version, step, configs) and an
``arrays`` index of ``{name: {dtype, shape, offset, nbytes}}``. Encoding is
canonical, so save -> load -> save reproduces the file byte for byte.
"""

import json
import os
import struct
from pathlib import Path

import numpy as np
import torch

MAGIC = b"PRDHCKPT"
FORMAT_VERSION = 1


class CheckpointError(ValueError):
    pass


def encode(arrays, metadata):
    index, chunks, offset = {}, [], 0
    for name in sorted(arrays):
        t = arrays[name].detach().cpu().contiguous()
        arr = t.numpy()
        dtype = str(t.dtype).replace("torch.", "")
        data = arr.astype(arr.dtype.newbyteorder("<"), copy=False).tobytes()
        index[name] = {"dtype": dtype, "shape": list(arr.shape), "offset": offset, "nbytes": len(data)}
        chunks.append(data)
        offset += len(data)
    header = json.dumps({"version": FORMAT_VERSION, "metadata": metadata, "arrays": index},
                        sort_keys=True, separators=(",", ":")).encode()
    return MAGIC + struct.pack("<Q", len(header)) + header + b"".join(chunks)


def decode(blob):
    if blob[:len(MAGIC)] != MAGIC:
        raise CheckpointError("not a checkpoint file (bad magic)")
    (n,) = struct.unpack_from("<Q", blob, len(MAGIC))
    start = len(MAGIC) + 8
    header = json.loads(blob[start:start + n])
    if header.get("version") != FORMAT_VERSION:
        raise CheckpointError(
            f"checkpoint format version {header.get('version')} != supported {FORMAT_VERSION}")
    body = start + n
    arrays = {}
    for name, info in header["arrays"].items():
        dtype = getattr(torch, info["dtype"])
        np_dtype = torch.empty((), dtype=dtype).numpy().dtype.newbyteorder("<")
        lo = body + info["offset"]
        arr = np.frombuffer(blob[lo:lo + info["nbytes"]], dtype=np_dtype).reshape(info["shape"])
        arrays[name] = torch.from_numpy(arr.astype(arr.dtype.newbyteorder("="), copy=True))
    return arrays, header["metadata"]


def save(path, arrays, metadata):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(encode(arrays, metadata))
    os.replace(tmp, path)


def load(path):
    return decode(Path(path).read_bytes())
