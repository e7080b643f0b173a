"""Binary tensor container used for parameter snapshots and exported datasets.

Layout (all integers little-endian)::

    magic      4 bytes   b"FGTC"
    version    u16       1
    fp_len     u16       then fp_len bytes of UTF-8 fingerprint
    label_len  u16       then label_len bytes of UTF-8 label
    n_records  u32
    record*    name_len u16, name (UTF-8), ndim u8, ndim x u32 extents,
               prod(extents) x f64 raw values in row-major order
"""

from __future__ import annotations

import os
import struct
import tempfile
from pathlib import Path

import numpy as np

from ..errors import FormatError
from .model import ParamSnapshot

MAGIC = b"FGTC"
VERSION = 1


def _pack_str(s: str) -> bytes:
    b = s.encode("utf-8")
    if len(b) > 0xFFFF:
        raise FormatError("string too long for container header")
    return struct.pack("<H", len(b)) + b


def encode(records: dict[str, np.ndarray], fingerprint: str, label: str = "") -> bytes:
    out = [MAGIC, struct.pack("<H", VERSION), _pack_str(fingerprint), _pack_str(label)]
    out.append(struct.pack("<I", len(records)))
    for name, arr in records.items():
        arr = np.ascontiguousarray(arr, dtype="<f8")
        out.append(_pack_str(name))
        out.append(struct.pack("<B", arr.ndim))
        out.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        out.append(arr.tobytes(order="C"))
    return b"".join(out)


class _Reader:
    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise FormatError(f"container truncated at offset {self.pos} (needed {n} more bytes)")
        chunk = self.buf[self.pos : self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def string(self) -> str:
        (n,) = self.unpack("<H")
        return self.take(n).decode("utf-8")


def decode(buf: bytes) -> tuple[dict[str, np.ndarray], str, str]:
    r = _Reader(buf)
    if r.take(4) != MAGIC:
        raise FormatError("bad magic: not a tensor container")
    (version,) = r.unpack("<H")
    if version != VERSION:
        raise FormatError(f"unsupported container version {version}")
    fingerprint = r.string()
    label = r.string()
    (n,) = r.unpack("<I")
    records = {}
    for _ in range(n):
        name = r.string()
        (ndim,) = r.unpack("<B")
        shape = r.unpack(f"<{ndim}I") if ndim else ()
        count = int(np.prod(shape)) if ndim else 1
        data = np.frombuffer(r.take(8 * count), dtype="<f8").astype(np.float64)
        records[name] = data.reshape(shape)
    if r.pos != len(buf):
        raise FormatError(f"{len(buf) - r.pos} trailing bytes after last record")
    return records, fingerprint, label


def atomic_write_bytes(path, data: bytes) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        umask = os.umask(0)
        os.umask(umask)
        os.chmod(tmp, 0o666 & ~umask)  # mkstemp creates 0600; use the usual file mode
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def save_snapshot(snap: ParamSnapshot, path) -> None:
    atomic_write_bytes(path, encode(snap.params, snap.fingerprint, snap.label))


def load_snapshot(path) -> ParamSnapshot:
    records, fingerprint, label = decode(Path(path).read_bytes())
    units = tuple(dict.fromkeys(name.split("/")[0] for name in records))
    return ParamSnapshot(label=label, params=records, fingerprint=fingerprint, units=units)
