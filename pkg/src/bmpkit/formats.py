"""Binary containers.

MPT (one n-d array)::

    offset  size        field
    0       4           magic b"MPT1"
    4       1           dtype code (1 = float32, 2 = float64)
    5       1           ndim
    6       8 * ndim    dims, little-endian uint64
    ...     itemsize*n  payload, row-major little-endian

Checkpoint (named MPT blobs plus a JSON manifest)::

    0       4           magic b"MPCK"
    4       4           format version, uint32 LE
    8       4           manifest length in bytes, uint32 LE
    12      m           manifest, UTF-8 JSON
    then, per tensor in manifest["tensors"] order:
            2           name length, uint16 LE
            k           name, UTF-8
            8           blob length, uint64 LE
            b           MPT blob
"""
from __future__ import annotations

import io
import json
import struct
from pathlib import Path

import numpy as np

MPT_MAGIC = b"MPT1"
CKPT_MAGIC = b"MPCK"
CKPT_VERSION = 1
_CODES = {np.dtype("<f4"): 1, np.dtype("<f8"): 2}
_DTYPES = {1: np.dtype("<f4"), 2: np.dtype("<f8")}


class FormatError(ValueError):
    pass


class CheckpointMismatch(FormatError):
    def __init__(self, expected: str, found: str, version: int = CKPT_VERSION):
        super().__init__(f"checkpoint v{version} config hash {found} does not match model config {expected}")
        self.expected, self.found, self.version = expected, found, version


def encode_mpt(arr) -> bytes:
    a = np.asarray(arr)
    dt = a.dtype.newbyteorder("<")
    if dt not in _CODES:
        raise FormatError(f"MPT stores float32 or float64, got {a.dtype}")
    if a.ndim > 255:
        raise FormatError("too many dimensions")
    head = MPT_MAGIC + struct.pack("<BB", _CODES[dt], a.ndim) + struct.pack(f"<{a.ndim}Q", *a.shape)
    return head + np.ascontiguousarray(a, dtype=dt).tobytes(order="C")


def decode_mpt(buf: bytes) -> np.ndarray:
    if len(buf) < 6 or buf[:4] != MPT_MAGIC:
        raise FormatError("not an MPT container (bad magic)")
    code, ndim = struct.unpack_from("<BB", buf, 4)
    if code not in _DTYPES:
        raise FormatError(f"unknown MPT dtype code {code}")
    dims = struct.unpack_from(f"<{ndim}Q", buf, 6)
    start = 6 + 8 * ndim
    dt = _DTYPES[code]
    n = int(np.prod(dims, dtype=np.int64)) if ndim else 1
    expected = n * dt.itemsize
    if len(buf) - start != expected:
        raise FormatError(f"MPT payload is {len(buf) - start} bytes, header implies {expected}")
    return np.frombuffer(buf, dtype=dt, count=n, offset=start).reshape(dims).astype(dt.newbyteorder("="))


def write_mpt(path, arr) -> Path:
    p = Path(path)
    p.write_bytes(encode_mpt(arr))
    return p


def read_mpt(path) -> np.ndarray:
    return decode_mpt(Path(path).read_bytes())


# -- feature sequences -------------------------------------------------------------


def write_features(path, seq) -> Path:
    """FeatureSequence -> MPT of shape T x H x W x C (patch grid kept explicit)."""
    H, W = seq.grid_dims
    return write_mpt(path, seq.features.reshape(seq.T, H, W, -1))


def read_features(path, video_id: str = ""):
    from .patchflow import FeatureSequence

    arr = read_mpt(path)
    if arr.ndim != 4:
        raise FormatError(f"feature container must be T x H x W x C, got shape {arr.shape}")
    T, H, W, C = arr.shape
    return FeatureSequence(arr.reshape(T, H * W, C), (H, W), video_id or Path(path).stem)


# -- checkpoints -----------------------------------------------------------------------


def encode_checkpoint(tensors: dict[str, np.ndarray], manifest: dict) -> bytes:
    man = dict(manifest)
    names = sorted(tensors)
    man["tensors"] = names
    blob = json.dumps(man, sort_keys=True).encode()
    out = io.BytesIO()
    out.write(CKPT_MAGIC + struct.pack("<II", CKPT_VERSION, len(blob)) + blob)
    for name in names:
        nb = name.encode()
        body = encode_mpt(tensors[name])
        out.write(struct.pack("<H", len(nb)) + nb + struct.pack("<Q", len(body)) + body)
    return out.getvalue()


def decode_checkpoint(buf: bytes) -> tuple[dict[str, np.ndarray], dict]:
    if buf[:4] != CKPT_MAGIC:
        raise FormatError("not a checkpoint container (bad magic)")
    version, mlen = struct.unpack_from("<II", buf, 4)
    if version != CKPT_VERSION:
        raise FormatError(f"unsupported checkpoint version {version} (this build reads v{CKPT_VERSION})")
    pos = 12
    manifest = json.loads(buf[pos : pos + mlen].decode())
    pos += mlen
    tensors = {}
    for expected in manifest["tensors"]:
        (nlen,) = struct.unpack_from("<H", buf, pos)
        pos += 2
        name = buf[pos : pos + nlen].decode()
        pos += nlen
        if name != expected:
            raise FormatError(f"tensor order mismatch: {name!r} where manifest lists {expected!r}")
        (blen,) = struct.unpack_from("<Q", buf, pos)
        pos += 8
        tensors[name] = decode_mpt(buf[pos : pos + blen])
        pos += blen
    if pos != len(buf):
        raise FormatError(f"{len(buf) - pos} trailing bytes after last tensor")
    return tensors, manifest


def save_checkpoint(path, tensors: dict[str, np.ndarray], manifest: dict) -> Path:
    p = Path(path)
    p.write_bytes(encode_checkpoint(tensors, manifest))
    return p


def load_checkpoint(path) -> tuple[dict[str, np.ndarray], dict]:
    return decode_checkpoint(Path(path).read_bytes())
