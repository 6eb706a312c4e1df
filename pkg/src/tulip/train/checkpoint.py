"""Named-tensor archive with 64-byte-aligned payloads and a CRC trailer.

Layout: 8-byte magic "TULIPCK1", little-endian u32 version, u32 tensor
count, a manifest of (u32 name length, name bytes, u8 dtype code, u8 rank,
u64 extents..., u64 payload offset), the 64-byte-aligned row-major
little-endian payloads, and a trailing u32 CRC32 of every preceding byte.
Loads verify the CRC and every shape before returning; a failed load never
mutates caller state.
"""

import struct
import zlib

import numpy as np

from ..errors import CheckpointError

MAGIC = b"TULIPCK1"
VERSION = 1

_DTYPES = {0: "<f4", 1: "<f8", 2: "<i8", 3: "|u1"}
_CODES = {np.dtype("float32"): 0, np.dtype("float64"): 1,
          np.dtype("int64"): 2, np.dtype("uint8"): 3}


def _align(n, a=64):
    return (n + a - 1) // a * a


def save_archive(path, tensors):
    """tensors: name -> np.ndarray (float32/float64/int64/uint8)."""
    names = sorted(tensors)
    manifest = bytearray()
    header_len = len(MAGIC) + 8
    entries = []
    for name in names:
        arr = np.asarray(tensors[name])
        if arr.ndim and not arr.flags.c_contiguous:
            arr = np.ascontiguousarray(arr)
        if arr.dtype not in _CODES:
            raise CheckpointError(f"{name}: unsupported dtype {arr.dtype}")
        entries.append((name, arr))

    # manifest size must be known before offsets can be assigned
    msize = 0
    for name, arr in entries:
        msize += 4 + len(name.encode()) + 1 + 1 + 8 * arr.ndim + 8
    payload_base = header_len + msize

    offset = _align(payload_base)
    offsets = []
    for _name, arr in entries:
        offsets.append(offset)
        offset = _align(offset + arr.nbytes)

    for (name, arr), off in zip(entries, offsets):
        nb = name.encode()
        manifest += struct.pack("<I", len(nb)) + nb
        manifest += struct.pack("<BB", _CODES[arr.dtype], arr.ndim)
        for e in arr.shape:
            manifest += struct.pack("<Q", e)
        manifest += struct.pack("<Q", off)

    blob = bytearray()
    blob += MAGIC
    blob += struct.pack("<II", VERSION, len(entries))
    blob += manifest
    for (name, arr), off in zip(entries, offsets):
        blob += b"\x00" * (off - len(blob))
        a = arr
        if a.dtype.byteorder == ">":
            a = a.astype(a.dtype.newbyteorder("<"))
        blob += a.tobytes()
    blob += struct.pack("<I", zlib.crc32(bytes(blob)) & 0xFFFFFFFF)
    with open(path, "wb") as f:
        f.write(bytes(blob))


def load_archive(path):
    """Returns name -> np.ndarray; raises CheckpointError on any corruption."""
    with open(path, "rb") as f:
        blob = f.read()
    if len(blob) < len(MAGIC) + 12:
        raise CheckpointError("archive truncated")
    if blob[:len(MAGIC)] != MAGIC:
        raise CheckpointError("bad magic")
    (crc,) = struct.unpack("<I", blob[-4:])
    if crc != (zlib.crc32(blob[:-4]) & 0xFFFFFFFF):
        raise CheckpointError("CRC mismatch")
    version, count = struct.unpack_from("<II", blob, len(MAGIC))
    if version != VERSION:
        raise CheckpointError(f"unsupported version {version}")
    pos = len(MAGIC) + 8
    out = {}
    for _ in range(count):
        (nlen,) = struct.unpack_from("<I", blob, pos)
        pos += 4
        name = blob[pos:pos + nlen].decode()
        pos += nlen
        code, rank = struct.unpack_from("<BB", blob, pos)
        pos += 2
        if code not in _DTYPES:
            raise CheckpointError(f"{name}: unknown dtype code {code}")
        shape = struct.unpack_from(f"<{rank}Q", blob, pos) if rank else ()
        pos += 8 * rank
        (off,) = struct.unpack_from("<Q", blob, pos)
        pos += 8
        dt = np.dtype(_DTYPES[code])
        nbytes = int(np.prod(shape, dtype=np.int64)) * dt.itemsize if rank \
            else dt.itemsize
        if off % 64 or off + nbytes > len(blob) - 4:
            raise CheckpointError(f"{name}: payload out of bounds")
        arr = np.frombuffer(blob, dtype=dt, count=nbytes // dt.itemsize,
                            offset=off).reshape(shape).copy()
        if name in out:
            raise CheckpointError(f"duplicate tensor {name}")
        out[name] = arr
    return out
