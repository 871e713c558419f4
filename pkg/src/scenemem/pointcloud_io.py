"""Point-cloud serialization: the SPCL binary format and ASCII PLY interop.

SPCL layout (little-endian):
    magic   4 bytes  b"SPCL"
    version u32      currently 1
    count   u64      number of points
    data    count records of 6 x f32: x y z r g b
Colors are stored in [0,1]. See docs/formats.md.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .geometry import PointCloud

SPCL_MAGIC = b"SPCL"
SPCL_VERSION = 1


class FormatError(ValueError):
    """Malformed or truncated point-cloud payload."""


def encode_spcl(cloud: PointCloud) -> bytes:
    header = SPCL_MAGIC + struct.pack("<IQ", SPCL_VERSION, len(cloud))
    data = np.empty((len(cloud), 6), dtype="<f4")
    data[:, :3] = cloud.positions
    data[:, 3:] = cloud.colors
    return header + data.tobytes()


def decode_spcl(blob: bytes) -> PointCloud:
    if len(blob) < 16:
        raise FormatError("SPCL payload shorter than header")
    if blob[:4] != SPCL_MAGIC:
        raise FormatError("bad SPCL magic")
    version, count = struct.unpack_from("<IQ", blob, 4)
    if version != SPCL_VERSION:
        raise FormatError(f"unsupported SPCL version {version}")
    expected = 16 + count * 24
    if len(blob) < expected:
        raise FormatError(f"truncated SPCL payload: {len(blob)} < {expected} bytes")
    data = np.frombuffer(blob, dtype="<f4", count=count * 6, offset=16).reshape(-1, 6)
    colors = np.clip(data[:, 3:].astype(np.float64), 0.0, 1.0)
    return PointCloud(data[:, :3].astype(np.float64), colors)


def write_spcl(cloud: PointCloud, path) -> None:
    Path(path).write_bytes(encode_spcl(cloud))


def read_spcl(path) -> PointCloud:
    return decode_spcl(Path(path).read_bytes())


def write_ply(cloud: PointCloud, path) -> None:
    """ASCII PLY with uchar colors (widest interop; quantizes color to 8 bit)."""
    lines = [
        "ply",
        "format ascii 1.0",
        f"element vertex {len(cloud)}",
        "property float x",
        "property float y",
        "property float z",
        "property uchar red",
        "property uchar green",
        "property uchar blue",
        "end_header",
    ]
    cols = np.rint(cloud.colors * 255.0).astype(np.int64)
    for p, c in zip(cloud.positions, cols):
        lines.append(f"{p[0]:.9g} {p[1]:.9g} {p[2]:.9g} {c[0]} {c[1]} {c[2]}")
    Path(path).write_text("\n".join(lines) + "\n")


def read_ply(path) -> PointCloud:
    """Read ASCII PLY with x/y/z plus red/green/blue (uchar or float) properties."""
    text = Path(path).read_text()
    lines = text.splitlines()
    if not lines or lines[0].strip() != "ply":
        raise FormatError("not a PLY file")
    count = None
    props: list[tuple[str, str]] = []
    body_start = None
    in_vertex = False
    for i, line in enumerate(lines[1:], start=1):
        tok = line.split()
        if not tok:
            continue
        if tok[0] == "format":
            if tok[1] != "ascii":
                raise FormatError("only ASCII PLY is supported")
        elif tok[0] == "element":
            in_vertex = tok[1] == "vertex"
            if in_vertex:
                count = int(tok[2])
        elif tok[0] == "property" and in_vertex:
            props.append((tok[1], tok[2]))
        elif tok[0] == "end_header":
            body_start = i + 1
            break
    if count is None or body_start is None:
        raise FormatError("PLY header missing vertex element")
    names = [name for _, name in props]
    try:
        ix, iy, iz = names.index("x"), names.index("y"), names.index("z")
        ir, ig, ib = names.index("red"), names.index("green"), names.index("blue")
    except ValueError as e:
        raise FormatError("PLY vertex needs x y z red green blue") from e
    color_is_uchar = props[ir][0] in ("uchar", "uint8")
    rows = lines[body_start:body_start + count]
    if len(rows) < count:
        raise FormatError("truncated PLY body")
    vals = np.array([[float(v) for v in row.split()] for row in rows], dtype=np.float64)
    if vals.shape[0] != count or vals.shape[1] < len(props):
        raise FormatError("malformed PLY body")
    positions = vals[:, [ix, iy, iz]]
    colors = vals[:, [ir, ig, ib]]
    if color_is_uchar:
        colors = colors / 255.0
    return PointCloud(positions, np.clip(colors, 0.0, 1.0))
