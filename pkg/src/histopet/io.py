"""Binary file formats (events, volumes, checkpoints) and flat key/value config files.

All binary formats are little-endian and start with a 4-byte magic and a u16
version.

    events      "HPET" ver  digest[16]  count:u64  records[count] (13 bytes each)
    volume      "HVOL" ver  d h w:u32  voxel_size:f64[3]  origin:f64[3]
                unit_len:u8 unit:utf8  payload:f32[d*h*w] (depth-major)
    checkpoint  "HNET" ver  header_len:u32  header:json  params  [optimizer]

The checkpoint header is canonical JSON (sorted keys) holding the network
config, the parameter manifest (name, shape in payload order), the payload
precision and optional training state.  The optimizer section, when present,
stores the Adam first and then second moments in manifest order as f64.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .geometry import ScannerGeometry, VoxelGrid
from .simulate import EVENT_DTYPE
from .volume import Volume

EVENT_MAGIC = b"HPET"
VOLUME_MAGIC = b"HVOL"
CHECKPOINT_MAGIC = b"HNET"
FORMAT_VERSION = 1


class DataError(ValueError):
    """Malformed or mismatched input data (exit code 2)."""


class ConfigFileError(ValueError):
    """Bad configuration (exit code 1)."""


def _check_magic(buf: bytes, magic: bytes, path) -> int:
    if len(buf) < 6 or buf[:4] != magic:
        raise DataError(f"{path}: not a {magic.decode()} file")
    (version,) = struct.unpack_from("<H", buf, 4)
    if version != FORMAT_VERSION:
        raise DataError(f"{path}: unsupported format version {version}")
    return 6


# --- events ------------------------------------------------------------------

def write_events(path, events: np.ndarray, geometry: ScannerGeometry) -> None:
    events = np.ascontiguousarray(events, dtype=EVENT_DTYPE)
    with open(path, "wb") as f:
        f.write(EVENT_MAGIC + struct.pack("<H", FORMAT_VERSION))
        f.write(geometry.digest())
        f.write(struct.pack("<Q", len(events)))
        f.write(events.tobytes())


def read_events(path, geometry: ScannerGeometry | None = None):
    """Return ``(events, digest)``; raises if ``geometry`` does not match the file."""
    buf = Path(path).read_bytes()
    off = _check_magic(buf, EVENT_MAGIC, path)
    digest = buf[off:off + 16]
    (count,) = struct.unpack_from("<Q", buf, off + 16)
    off += 24
    expected = count * EVENT_DTYPE.itemsize
    if len(buf) - off != expected:
        raise DataError(f"{path}: header says {count} events but payload holds "
                        f"{(len(buf) - off) / EVENT_DTYPE.itemsize:g}")
    if geometry is not None and geometry.digest() != digest:
        raise DataError(f"{path}: events were recorded with a different scanner geometry")
    events = np.frombuffer(buf, dtype=EVENT_DTYPE, count=count, offset=off).copy()
    return events, digest


# --- volumes -----------------------------------------------------------------

def write_volume(path, volume: Volume) -> None:
    grid = volume.grid
    unit = volume.unit.encode()
    if len(unit) > 255:
        raise DataError("unit tag longer than 255 bytes")
    with open(path, "wb") as f:
        f.write(VOLUME_MAGIC + struct.pack("<H", FORMAT_VERSION))
        f.write(struct.pack("<3I", *grid.dims))
        f.write(struct.pack("<3d", *grid.voxel_size))
        f.write(struct.pack("<3d", *grid.origin))
        f.write(struct.pack("<B", len(unit)) + unit)
        f.write(np.ascontiguousarray(volume.data, dtype="<f4").tobytes())


def read_volume(path) -> Volume:
    buf = Path(path).read_bytes()
    off = _check_magic(buf, VOLUME_MAGIC, path)
    try:
        dims = struct.unpack_from("<3I", buf, off)
        size = struct.unpack_from("<3d", buf, off + 12)
        origin = struct.unpack_from("<3d", buf, off + 36)
        (ulen,) = struct.unpack_from("<B", buf, off + 60)
    except struct.error as exc:
        raise DataError(f"{path}: truncated header") from exc
    off += 61
    unit = buf[off:off + ulen].decode()
    off += ulen
    n = int(np.prod(dims))
    if len(buf) - off != 4 * n:
        raise DataError(f"{path}: payload holds {(len(buf) - off) // 4} voxels, header says {n}")
    data = np.frombuffer(buf, dtype="<f4", count=n, offset=off).reshape(dims).copy()
    return Volume(data, VoxelGrid(dims, size, origin), unit)


# --- checkpoints --------------------------------------------------------------

def write_checkpoint(path, config: dict, params: dict, optimizer=None, extra: dict | None = None,
                     precision: str = "f64") -> None:
    """Write named parameter arrays.

    ``optimizer`` is ``None`` or a ``(step, m, v)`` triple where ``m`` and ``v``
    are lists aligned with ``params``.  ``precision="f32"`` gives the compact
    export (no optimizer section allowed).
    """
    if precision not in ("f64", "f32"):
        raise ValueError("precision must be 'f64' or 'f32'")
    if precision == "f32" and optimizer is not None:
        raise ValueError("the compact f32 export carries no optimizer state")
    dtype = "<f8" if precision == "f64" else "<f4"
    header = {
        "network": config,
        "manifest": [[name, list(arr.shape)] for name, arr in params.items()],
        "precision": precision,
        "optimizer_step": None if optimizer is None else int(optimizer[0]),
        "extra": extra or {},
    }
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC + struct.pack("<H", FORMAT_VERSION))
        f.write(struct.pack("<I", len(blob)) + blob)
        for arr in params.values():
            f.write(np.ascontiguousarray(arr, dtype=dtype).tobytes())
        if optimizer is not None:
            for group in optimizer[1:]:
                for arr in group:
                    f.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def read_checkpoint(path) -> dict:
    """Return a dict with ``network``, ``params`` (ordered), ``optimizer`` and ``extra``."""
    buf = Path(path).read_bytes()
    off = _check_magic(buf, CHECKPOINT_MAGIC, path)
    (hlen,) = struct.unpack_from("<I", buf, off)
    off += 4
    try:
        header = json.loads(buf[off:off + hlen])
    except ValueError as exc:
        raise DataError(f"{path}: corrupt checkpoint header") from exc
    off += hlen
    dtype = np.dtype("<f8" if header["precision"] == "f64" else "<f4")

    def take(shape, dt):
        nonlocal off
        n = int(np.prod(shape))
        if off + n * dt.itemsize > len(buf):
            raise DataError(f"{path}: payload shorter than the manifest")
        arr = np.frombuffer(buf, dtype=dt, count=n, offset=off).reshape(shape)
        off += n * dt.itemsize
        return arr.astype(np.float64)

    params = {name: take(shape, dtype) for name, shape in header["manifest"]}
    optimizer = None
    if header["optimizer_step"] is not None:
        f8 = np.dtype("<f8")
        m = [take(shape, f8) for _, shape in header["manifest"]]
        v = [take(shape, f8) for _, shape in header["manifest"]]
        optimizer = (header["optimizer_step"], m, v)
    if off != len(buf):
        raise DataError(f"{path}: {len(buf) - off} trailing bytes after the payload")
    return {"network": header["network"], "params": params, "optimizer": optimizer,
            "extra": header["extra"], "precision": header["precision"]}


# --- config files ----------------------------------------------------------------

def read_config(path) -> dict:
    """Parse ``key = value`` lines; ``#`` starts a comment.  Values stay strings."""
    out = {}
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigFileError(f"cannot read config {path}: {exc}") from exc
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigFileError(f"{path}:{lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        if not key:
            raise ConfigFileError(f"{path}:{lineno}: empty key")
        out[key] = value
    return out


def write_config(path, values: dict) -> None:
    with open(path, "w") as f:
        for key in sorted(values):
            f.write(f"{key} = {values[key]}\n")


def parse_value(text: str):
    """Best-effort typed value: int, float, bool, comma tuple, else string."""
    s = text.strip()
    if s.lower() in ("true", "yes", "on"):
        return True
    if s.lower() in ("false", "no", "off"):
        return False
    if "," in s:
        return tuple(parse_value(p) for p in s.split(",") if p.strip())
    for cast in (int, float):
        try:
            return cast(s)
        except ValueError:
            pass
    return s
