"""PLY/LAS header parsing and ranged, seekable point streaming.

Centralizes all point cloud file format handling so other modules never
touch raw bytes. A :class:`CloudSource` is immutable after open and
``read_range`` is safe for arbitrary concurrent callers: every call uses
its own file handle.

Supported: PLY (ascii + binary_little_endian) and LAS 1.2-1.4 point
record formats 0-3. LAZ is accepted only through a registered decoder.
"""
from __future__ import annotations

import io
import os
import struct
import threading
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from .core import AABB, DEFAULT_SCALE, POINT_DTYPE, empty_records
from .errors import (
    IndexOutOfRangeError,
    LazNotSupportedError,
    MalformedHeaderError,
    UnsupportedFormatError,
)


class CloudFormat(Enum):
    PLY_ASCII = "ply_ascii"
    PLY_BINARY_LE = "ply_binary_le"
    LAS = "las"


_PLY_SCALAR = {
    "char": "i1", "int8": "i1",
    "uchar": "u1", "uint8": "u1",
    "short": "i2", "int16": "i2",
    "ushort": "u2", "uint16": "u2",
    "int": "i4", "int32": "i4",
    "uint": "u4", "uint32": "u4",
    "float": "f4", "float32": "f4",
    "double": "f8", "float64": "f8",
}

# LAS point record formats we read: total minimum size and RGB offset.
_LAS_FORMATS = {0: (20, None), 1: (28, None), 2: (26, 20), 3: (34, 28)}


@dataclass
class CloudHeader:
    format: CloudFormat
    point_count: int
    bounds: Optional[AABB]  # None for PLY until the lazy pass runs
    scale: np.ndarray
    offset: np.ndarray
    point_stride: int
    data_start: int


@dataclass
class CloudSource:
    """Parsed header plus the attribute layout needed to stream records."""

    header: CloudHeader
    path: Path
    # source-property name -> (numpy scalar code, byte offset); PLY binary / LAS
    attributes: dict = field(default_factory=dict)
    has_color: bool = True
    color_is_wide: bool = False  # 16-bit color channels, downscaled by 257

    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False)
    _ascii_cache: Optional[np.ndarray] = field(default=None, repr=False)
    _exact_bounds: Optional[AABB] = field(default=None, repr=False)
    _quant_ready: bool = field(default=False, repr=False)

    @property
    def point_count(self) -> int:
        return self.header.point_count


#: Pluggable LAZ decoders: callable(path) -> CloudSource. Empty by default.
LAZ_DECODERS: list[Callable[[Path], CloudSource]] = []


def register_laz_decoder(decoder: Callable[[Path], CloudSource]) -> None:
    LAZ_DECODERS.append(decoder)


def open_cloud(path: str | os.PathLike) -> CloudSource:
    """Parse the header of a PLY or LAS file and return a seekable source.

    For PLY, bounds are unknown until first requested (the format carries
    none); positions are quantized with scale 0.001 against the cloud
    minimum computed lazily on first read.
    """
    path = Path(path)
    if not path.is_file():
        raise UnsupportedFormatError(f"no such file: {path}")
    with open(path, "rb") as f:
        magic = f.read(4)
    suffix = path.suffix.lower()
    if suffix == ".laz" or magic[:4] == b"LASF" and _las_is_compressed(path):
        for decoder in LAZ_DECODERS:
            return decoder(path)
        raise LazNotSupportedError(f"{path}: LAZ input and no decoder registered")
    if magic[:4] == b"LASF":
        if suffix not in (".las", ""):
            raise UnsupportedFormatError(f"{path}: LAS magic under extension {suffix}")
        return _open_las(path)
    if magic[:3] == b"ply":
        if suffix not in (".ply", ""):
            raise UnsupportedFormatError(f"{path}: PLY magic under extension {suffix}")
        return _open_ply(path)
    raise UnsupportedFormatError(f"{path}: unrecognized magic {magic!r}")


def read_range(src: CloudSource, first: int, count: int) -> np.ndarray:
    """Return exactly ``count`` canonical records starting at ``first``.

    Records come back in file order, quantized against the header
    scale/offset. Safe to call concurrently on one source.
    """
    if first < 0 or count < 0 or first + count > src.point_count:
        raise IndexOutOfRangeError(
            f"range [{first}, {first + count}) outside [0, {src.point_count})"
        )
    if count == 0:
        return empty_records(0)
    fmt = src.header.format
    if fmt == CloudFormat.LAS:
        return _read_las_range(src, first, count)
    if fmt == CloudFormat.PLY_ASCII or not src._quant_ready:
        _ensure_ply_quantization(src)
    if fmt == CloudFormat.PLY_ASCII:
        return src._ascii_cache[first : first + count].copy()
    return _read_ply_binary_range(src, first, count)


def compute_bounds(src: CloudSource) -> AABB:
    """Exact min/max over all dequantized positions; cached on the source."""
    with src._lock:
        if src._exact_bounds is not None:
            return src._exact_bounds.copy()
    n = src.point_count
    if n == 0:
        b = AABB(np.zeros(3), np.zeros(3))
    else:
        lo = np.full(3, np.inf)
        hi = np.full(3, -np.inf)
        batch = 1 << 20
        scale = src.header.scale
        offset = src.header.offset
        for start in range(0, n, batch):
            recs = read_range(src, start, min(batch, n - start))
            pos = np.stack([recs["px"], recs["py"], recs["pz"]], axis=1).astype(np.float64)
            pos = pos * scale + offset
            lo = np.minimum(lo, pos.min(axis=0))
            hi = np.maximum(hi, pos.max(axis=0))
        b = AABB(lo, hi)
    with src._lock:
        src._exact_bounds = b
    return b.copy()


def cloud_bounds(src: CloudSource) -> AABB:
    """Header bounds when present, else the exact computed bounds."""
    if src.header.bounds is None:
        _ensure_ply_quantization(src)
    return src.header.bounds.copy()


# ---------------------------------------------------------------- PLY


def _open_ply(path: Path) -> CloudSource:
    with open(path, "rb") as f:
        header_bytes = _read_ply_header_bytes(f)
    lines = [ln.strip() for ln in header_bytes.decode("ascii", "replace").splitlines()]
    if not lines or lines[0] != "ply":
        raise MalformedHeaderError(f"{path}: missing 'ply' magic line")

    fmt: Optional[CloudFormat] = None
    vertex_count: Optional[int] = None
    properties: list[tuple[str, str]] = []  # (name, scalar code) in vertex element
    in_vertex = False
    seen_vertex = False
    quant_scale: Optional[float] = None
    quant_offset: Optional[np.ndarray] = None

    for line in lines[1:]:
        if not line:
            continue
        parts = line.split()
        kw = parts[0]
        if kw == "format":
            if parts[1] == "ascii":
                fmt = CloudFormat.PLY_ASCII
            elif parts[1] == "binary_little_endian":
                fmt = CloudFormat.PLY_BINARY_LE
            elif parts[1] == "binary_big_endian":
                raise UnsupportedFormatError(f"{path}: big-endian PLY not supported")
            else:
                raise MalformedHeaderError(f"{path}: unknown PLY format {parts[1]}")
        elif kw == "comment":
            # Writer convention carrying exact quantization for round trips.
            if len(parts) >= 3 and parts[1] == "quant_scale":
                quant_scale = float(parts[2])
            elif len(parts) >= 5 and parts[1] == "quant_offset":
                quant_offset = np.array([float(v) for v in parts[2:5]])
        elif kw == "element":
            name, count = parts[1], int(parts[2])
            if name == "vertex":
                vertex_count = count
                in_vertex = True
                seen_vertex = True
            else:
                if not seen_vertex and count > 0:
                    raise UnsupportedFormatError(
                        f"{path}: element '{name}' precedes vertex data"
                    )
                in_vertex = False
        elif kw == "property" and in_vertex:
            if parts[1] == "list":
                raise UnsupportedFormatError(f"{path}: list property in vertex element")
            code = _PLY_SCALAR.get(parts[1])
            if code is None:
                raise MalformedHeaderError(f"{path}: unknown property type {parts[1]}")
            properties.append((parts[2], code))
        elif kw == "end_header":
            break

    if fmt is None or vertex_count is None:
        raise MalformedHeaderError(f"{path}: incomplete PLY header")

    names = [n for n, _ in properties]
    for axis in ("x", "y", "z"):
        if axis not in names:
            raise UnsupportedFormatError(f"{path}: PLY vertex missing position '{axis}'")

    offsets: dict[str, tuple[str, int]] = {}
    byte_off = 0
    for name, code in properties:
        offsets[name] = (code, byte_off)
        byte_off += np.dtype(code).itemsize
    stride = byte_off if fmt == CloudFormat.PLY_BINARY_LE else 0

    color_names = None
    for cand in (("red", "green", "blue"), ("r", "g", "b")):
        if all(c in names for c in cand):
            color_names = cand
            break
    color_is_wide = bool(color_names) and offsets[color_names[0]][0] == "u2"

    data_start = len(header_bytes)
    if fmt == CloudFormat.PLY_BINARY_LE:
        fsize = path.stat().st_size
        if data_start + vertex_count * stride > fsize:
            raise MalformedHeaderError(
                f"{path}: {vertex_count} x {stride}B records exceed file size"
            )

    header = CloudHeader(
        format=fmt,
        point_count=vertex_count,
        bounds=None,
        scale=np.full(3, quant_scale if quant_scale else DEFAULT_SCALE),
        offset=quant_offset if quant_offset is not None else np.zeros(3),
        point_stride=stride,
        data_start=data_start,
    )
    src = CloudSource(
        header=header,
        path=path,
        attributes={"props": offsets, "color_names": color_names},
        has_color=color_names is not None,
        color_is_wide=color_is_wide,
    )
    src._quant_ready = quant_offset is not None
    if src._quant_ready and vertex_count == 0:
        header.bounds = AABB(np.zeros(3), np.zeros(3))
    return src


def _read_ply_header_bytes(f: io.BufferedReader) -> bytes:
    buf = bytearray()
    while True:
        line = f.readline()
        if not line:
            raise MalformedHeaderError("PLY header truncated (no end_header)")
        buf += line
        if line.strip() == b"end_header":
            return bytes(buf)
        if len(buf) > 1 << 20:
            raise MalformedHeaderError("PLY header unreasonably large")


def _ply_raw_positions_colors(src: CloudSource, first: int, count: int):
    """Float positions + uint8 colors straight from the file, no quantization."""
    props = src.attributes["props"]
    color_names = src.attributes["color_names"]
    if src.header.format == CloudFormat.PLY_BINARY_LE:
        stride = src.header.point_stride
        with open(src.path, "rb") as f:
            f.seek(src.header.data_start + first * stride)
            raw = f.read(count * stride)
        if len(raw) != count * stride:
            raise MalformedHeaderError(f"{src.path}: truncated point data")
        names = list(props)
        dt = np.dtype(
            {
                "names": names,
                "formats": ["<" + props[n][0] for n in names],
                "offsets": [props[n][1] for n in names],
                "itemsize": stride,
            }
        )
        arr = np.frombuffer(raw, dtype=dt, count=count)
        pos = np.stack(
            [arr["x"].astype(np.float64), arr["y"].astype(np.float64), arr["z"].astype(np.float64)],
            axis=1,
        )
        colors = _extract_colors(arr, color_names, src.color_is_wide, count)
        return pos, colors

    # ASCII: caller parses the whole body once (cached), never per-range.
    col_of = {name: i for i, (name, _) in enumerate(
        sorted(props.items(), key=lambda kv: kv[1][1])
    )}
    with open(src.path, "rb") as f:
        f.seek(src.header.data_start)
        rows = np.zeros((count, len(col_of)))
        for i in range(count):
            line = f.readline()
            if not line:
                raise MalformedHeaderError(f"{src.path}: fewer data lines than vertex count")
            rows[i] = [float(v) for v in line.split()[: len(col_of)]]
    pos = rows[:, [col_of["x"], col_of["y"], col_of["z"]]]
    if color_names:
        colors = rows[:, [col_of[c] for c in color_names]]
        if src.color_is_wide:
            colors = colors / 257.0
        colors = np.clip(np.rint(colors), 0, 255).astype(np.uint8)
    else:
        colors = np.full((count, 3), 255, dtype=np.uint8)
    return pos, colors


def _extract_colors(arr, color_names, wide: bool, count: int) -> np.ndarray:
    if not color_names:
        return np.full((count, 3), 255, dtype=np.uint8)
    chans = [arr[c] for c in color_names]
    if wide:
        chans = [(c // 257).astype(np.uint8) for c in chans]
    return np.stack([c.astype(np.uint8) for c in chans], axis=1)


def _ensure_ply_quantization(src: CloudSource) -> None:
    """Lazy pass fixing the PLY quantization offset at the raw cloud minimum.

    Also populates header bounds (raw float min/max) and, for ASCII
    sources, the parsed record cache: ASCII has no fixed stride, so the
    body is parsed exactly once and sliced from memory afterwards.
    """
    if src.header.format == CloudFormat.LAS:
        return
    with src._lock:
        ascii_pending = (
            src.header.format == CloudFormat.PLY_ASCII and src._ascii_cache is None
        )
        if src._quant_ready and src.header.bounds is not None and not ascii_pending:
            return
        n = src.point_count
        if n == 0:
            src.header.bounds = AABB(np.zeros(3), np.zeros(3))
            src._ascii_cache = empty_records(0)
            src._quant_ready = True
            return
        if src.header.format == CloudFormat.PLY_ASCII:
            pos, colors = _ply_raw_positions_colors(src, 0, n)
            if not src._quant_ready:
                src.header.offset = pos.min(axis=0)
                src._quant_ready = True
            src.header.bounds = AABB(pos.min(axis=0), pos.max(axis=0))
            src._ascii_cache = _quantize_to_records(src, pos, colors)
            return
        lo = np.full(3, np.inf)
        hi = np.full(3, -np.inf)
        batch = 1 << 20
        for start in range(0, n, batch):
            pos, _ = _ply_raw_positions_colors(src, start, min(batch, n - start))
            lo = np.minimum(lo, pos.min(axis=0))
            hi = np.maximum(hi, pos.max(axis=0))
        if not src._quant_ready:
            src.header.offset = lo
            src._quant_ready = True
        src.header.bounds = AABB(lo, hi)


def _quantize_to_records(src: CloudSource, pos: np.ndarray, colors: np.ndarray) -> np.ndarray:
    out = np.zeros(len(pos), dtype=POINT_DTYPE)
    q = np.rint((pos - src.header.offset) / src.header.scale).astype(np.int64)
    out["px"] = q[:, 0]
    out["py"] = q[:, 1]
    out["pz"] = q[:, 2]
    out["r"] = colors[:, 0]
    out["g"] = colors[:, 1]
    out["b"] = colors[:, 2]
    return out


def _read_ply_binary_range(src: CloudSource, first: int, count: int) -> np.ndarray:
    pos, colors = _ply_raw_positions_colors(src, first, count)
    return _quantize_to_records(src, pos, colors)


def write_ply_binary(
    path: str | os.PathLike,
    records: np.ndarray,
    scale: np.ndarray,
    offset: np.ndarray,
) -> None:
    """Write canonical records as a binary-LE PLY with double positions.

    Quantization comments are embedded so reopening the file reproduces
    the exact record sequence.
    """
    path = Path(path)
    scale = np.asarray(scale, dtype=np.float64)
    offset = np.asarray(offset, dtype=np.float64)
    n = len(records)
    header = (
        "ply\n"
        "format binary_little_endian 1.0\n"
        f"comment quant_scale {float(scale[0])!r}\n"
        f"comment quant_offset {float(offset[0])!r} {float(offset[1])!r} {float(offset[2])!r}\n"
        f"element vertex {n}\n"
        "property double x\nproperty double y\nproperty double z\n"
        "property uchar red\nproperty uchar green\nproperty uchar blue\n"
        "end_header\n"
    )
    out = np.zeros(
        n,
        dtype=np.dtype(
            [("x", "<f8"), ("y", "<f8"), ("z", "<f8"), ("red", "u1"), ("green", "u1"), ("blue", "u1")]
        ),
    )
    out["x"] = records["px"].astype(np.float64) * scale[0] + offset[0]
    out["y"] = records["py"].astype(np.float64) * scale[1] + offset[1]
    out["z"] = records["pz"].astype(np.float64) * scale[2] + offset[2]
    out["red"] = records["r"]
    out["green"] = records["g"]
    out["blue"] = records["b"]
    with open(path, "wb") as f:
        f.write(header.encode("ascii"))
        out.tofile(f)


# ---------------------------------------------------------------- LAS


def _las_is_compressed(path: Path) -> bool:
    with open(path, "rb") as f:
        head = f.read(106)
    if len(head) < 106:
        return False
    return bool(head[104] & 0x80)


def _open_las(path: Path) -> CloudSource:
    fsize = path.stat().st_size
    with open(path, "rb") as f:
        head = f.read(375)
    if len(head) < 227:
        raise MalformedHeaderError(f"{path}: LAS header truncated")
    major, minor = head[24], head[25]
    if major != 1 or minor not in (2, 3, 4):
        raise UnsupportedFormatError(f"{path}: LAS {major}.{minor} not supported")
    data_start = struct.unpack_from("<I", head, 96)[0]
    pdrf = head[104]
    if pdrf & 0xC0:
        raise LazNotSupportedError(f"{path}: compressed point records")
    stride = struct.unpack_from("<H", head, 105)[0]
    legacy_count = struct.unpack_from("<I", head, 107)[0]
    if pdrf not in _LAS_FORMATS:
        raise UnsupportedFormatError(f"{path}: LAS point format {pdrf} not supported")
    min_stride, color_off = _LAS_FORMATS[pdrf]
    if stride < min_stride:
        raise MalformedHeaderError(
            f"{path}: record length {stride} below format-{pdrf} minimum {min_stride}"
        )
    scale = np.array(struct.unpack_from("<3d", head, 131))
    offset = np.array(struct.unpack_from("<3d", head, 155))
    maxx, minx, maxy, miny, maxz, minz = struct.unpack_from("<6d", head, 179)
    bounds = AABB(np.array([minx, miny, minz]), np.array([maxx, maxy, maxz]))

    count = legacy_count
    if minor == 4 and len(head) >= 255:
        count64 = struct.unpack_from("<Q", head, 247)[0]
        if count64:
            count = count64

    if np.any(scale <= 0):
        raise MalformedHeaderError(f"{path}: non-positive scale {scale}")
    if np.any(bounds.min > bounds.max):
        raise MalformedHeaderError(f"{path}: inverted header bounds")
    if data_start + count * stride > fsize:
        raise MalformedHeaderError(f"{path}: {count} x {stride}B records exceed file size")

    header = CloudHeader(
        format=CloudFormat.LAS,
        point_count=count,
        bounds=bounds,
        scale=scale,
        offset=offset,
        point_stride=stride,
        data_start=data_start,
    )
    return CloudSource(
        header=header,
        path=path,
        attributes={"color_offset": color_off},
        has_color=color_off is not None,
        color_is_wide=True,
    )


def _read_las_range(src: CloudSource, first: int, count: int) -> np.ndarray:
    stride = src.header.point_stride
    with open(src.path, "rb") as f:
        f.seek(src.header.data_start + first * stride)
        raw = f.read(count * stride)
    if len(raw) != count * stride:
        raise MalformedHeaderError(f"{src.path}: truncated point data")
    color_off = src.attributes["color_offset"]
    names = ["X", "Y", "Z"]
    formats = ["<i4", "<i4", "<i4"]
    byte_offsets = [0, 4, 8]
    if color_off is not None:
        names += ["R", "G", "B"]
        formats += ["<u2", "<u2", "<u2"]
        byte_offsets += [color_off, color_off + 2, color_off + 4]
    dt = np.dtype({"names": names, "formats": formats, "offsets": byte_offsets, "itemsize": stride})
    arr = np.frombuffer(raw, dtype=dt, count=count)
    out = np.zeros(count, dtype=POINT_DTYPE)
    out["px"] = arr["X"]
    out["py"] = arr["Y"]
    out["pz"] = arr["Z"]
    if color_off is not None:
        out["r"] = (arr["R"] // 257).astype(np.uint8)
        out["g"] = (arr["G"] // 257).astype(np.uint8)
        out["b"] = (arr["B"] // 257).astype(np.uint8)
    else:
        out["r"] = out["g"] = out["b"] = 255
    return out


def write_las(
    path: str | os.PathLike,
    records: np.ndarray,
    scale: np.ndarray,
    offset: np.ndarray,
    point_format: int = 2,
    version_minor: int = 2,
) -> None:
    """Write canonical records as an uncompressed LAS file (test fixtures)."""
    if point_format not in _LAS_FORMATS:
        raise UnsupportedFormatError(f"LAS point format {point_format}")
    scale = np.asarray(scale, dtype=np.float64)
    offset = np.asarray(offset, dtype=np.float64)
    stride, color_off = _LAS_FORMATS[point_format]
    header_size = 227 if version_minor < 3 else (235 if version_minor == 3 else 375)
    n = len(records)
    pos = np.stack([records["px"], records["py"], records["pz"]], axis=1).astype(np.float64)
    world = pos * scale + offset
    lo = world.min(axis=0) if n else offset.copy()
    hi = world.max(axis=0) if n else offset.copy()

    head = bytearray(header_size)
    head[0:4] = b"LASF"
    head[24] = 1
    head[25] = version_minor
    struct.pack_into("<H", head, 94, header_size)
    struct.pack_into("<I", head, 96, header_size)
    head[104] = point_format
    struct.pack_into("<H", head, 105, stride)
    struct.pack_into("<I", head, 107, n if version_minor < 4 else 0)
    struct.pack_into("<3d", head, 131, *scale)
    struct.pack_into("<3d", head, 155, *offset)
    struct.pack_into("<6d", head, 179, hi[0], lo[0], hi[1], lo[1], hi[2], lo[2])
    if version_minor == 4:
        struct.pack_into("<Q", head, 247, n)

    names = ["X", "Y", "Z"]
    formats = ["<i4", "<i4", "<i4"]
    byte_offsets = [0, 4, 8]
    if color_off is not None:
        names += ["R", "G", "B"]
        formats += ["<u2", "<u2", "<u2"]
        byte_offsets += [color_off, color_off + 2, color_off + 4]
    dt = np.dtype({"names": names, "formats": formats, "offsets": byte_offsets, "itemsize": stride})
    body = np.zeros(n, dtype=dt)
    body["X"] = records["px"]
    body["Y"] = records["py"]
    body["Z"] = records["pz"]
    if color_off is not None:
        body["R"] = records["r"].astype(np.uint16) * 257
        body["G"] = records["g"].astype(np.uint16) * 257
        body["B"] = records["b"].astype(np.uint16) * 257
    with open(path, "wb") as f:
        f.write(bytes(head))
        body.tofile(f)
