"""PLY reader/writer for colored voxel clouds.

Supports ASCII and binary-little-endian files whose first element is
``vertex`` with x/y/z (any numeric type) and red/green/blue (uchar)
properties.  Colors are stored on disk as 0-255 bytes and normalized to
[0, 1] in memory.  Duplicate coordinates are merged by color averaging on
load.
"""

from __future__ import annotations

import struct

import numpy as np

from .cloud import PointCloud, merge_duplicates

_SCALAR_FMT = {
    "char": "b", "int8": "b",
    "uchar": "B", "uint8": "B",
    "short": "h", "int16": "h",
    "ushort": "H", "uint16": "H",
    "int": "i", "int32": "i",
    "uint": "I", "uint32": "I",
    "float": "f", "float32": "f",
    "double": "d", "float64": "d",
}


class PlyParseError(ValueError):
    """Malformed PLY input; carries the 1-based header line number."""

    def __init__(self, message: str, line: int):
        super().__init__(f"line {line}: {message}")
        self.line = line


def _parse_header(blob: bytes):
    lines = []
    pos = 0
    while True:
        nl = blob.find(b"\n", pos)
        if nl < 0:
            raise PlyParseError("unterminated header (no end_header)", len(lines) + 1)
        lines.append(blob[pos:nl].rstrip(b"\r").decode("ascii", "replace"))
        pos = nl + 1
        if lines[-1] == "end_header":
            break
        if len(lines) > 1000:
            raise PlyParseError("header too long", len(lines))
    if lines[0] != "ply":
        raise PlyParseError("missing 'ply' magic", 1)

    fmt = None
    elements = []  # (name, count, [(prop_name, type_str)])
    for no, line in enumerate(lines[1:-1], start=2):
        tok = line.split()
        if not tok or tok[0] == "comment":
            continue
        if tok[0] == "format":
            if len(tok) != 3 or tok[1] not in ("ascii", "binary_little_endian"):
                raise PlyParseError(f"unsupported format line {line!r}", no)
            fmt = tok[1]
        elif tok[0] == "element":
            if len(tok) != 3 or not tok[2].isdigit():
                raise PlyParseError(f"bad element line {line!r}", no)
            elements.append((tok[1], int(tok[2]), []))
        elif tok[0] == "property":
            if not elements:
                raise PlyParseError("property before any element", no)
            if tok[1] == "list":
                if len(tok) != 5:
                    raise PlyParseError(f"bad list property {line!r}", no)
                elements[-1][2].append((tok[4], ("list", tok[2], tok[3])))
            else:
                if len(tok) != 3 or tok[1] not in _SCALAR_FMT:
                    raise PlyParseError(f"bad property line {line!r}", no)
                elements[-1][2].append((tok[2], tok[1]))
        else:
            raise PlyParseError(f"unknown header keyword {tok[0]!r}", no)
    if fmt is None:
        raise PlyParseError("missing format line", 1)
    if not elements or elements[0][0] != "vertex":
        raise PlyParseError("first element must be 'vertex'", 1)
    return fmt, elements[0], pos, len(lines)


def load_ply(path) -> PointCloud:
    """Read a colored PLY file.

    The cloud depth is the smallest d with all coordinates < 2**d (min 1).
    Raises :class:`PlyParseError` on malformed input; files without
    red/green/blue raise with an "attributes required" message.
    """
    with open(path, "rb") as fh:
        blob = fh.read()
    fmt, (_, count, props), body_at, header_lines = _parse_header(blob)

    names = [name for name, _ in props]
    for axis in ("x", "y", "z"):
        if axis not in names:
            raise PlyParseError(f"vertex property {axis!r} missing", header_lines)
    for chan in ("red", "green", "blue"):
        if chan not in names:
            raise PlyParseError(
                "color attributes required (red/green/blue vertex properties)",
                header_lines,
            )
    if any(isinstance(t, tuple) for _, t in props):
        raise PlyParseError("list properties not supported on vertex", header_lines)

    cols = {name: i for i, (name, _) in enumerate(props)}
    if fmt == "ascii":
        text = blob[body_at:].decode("ascii", "replace").split()
        need = count * len(props)
        if len(text) < need:
            raise PlyParseError(
                f"expected {need} vertex values, found {len(text)}", header_lines
            )
        try:
            table = np.array(text[:need], dtype=np.float64).reshape(count, len(props))
        except ValueError as exc:
            raise PlyParseError(f"non-numeric vertex data: {exc}", header_lines) from None
    else:
        dt = np.dtype([(f"f{i}", "<" + _SCALAR_FMT[t]) for i, (_, t) in enumerate(props)])
        if len(blob) - body_at < dt.itemsize * count:
            raise PlyParseError("truncated binary vertex data", header_lines)
        raw = np.frombuffer(blob, dtype=dt, count=count, offset=body_at)
        table = np.stack([raw[f"f{i}"].astype(np.float64) for i in range(len(props))], axis=1)

    xyz = table[:, [cols["x"], cols["y"], cols["z"]]]
    rgb = table[:, [cols["red"], cols["green"], cols["blue"]]] / 255.0
    coords = np.rint(xyz).astype(np.int64)
    if count and coords.min() < 0:
        raise PlyParseError("negative coordinates not supported", header_lines)
    coords, colors = merge_duplicates(coords, rgb)
    top = int(coords.max()) if len(coords) else 0
    depth = max(1, int(top).bit_length())
    return PointCloud(coords, colors, depth)


def save_ply(pc: PointCloud, path, ascii: bool = False) -> None:
    """Write a cloud as PLY (binary little-endian by default).

    Coordinates are written as int32, colors as uchar (round(c * 255)), so
    load(save(pc)) equals pc up to 1/255 per color channel.
    """
    colors = np.clip(np.rint(pc.colors * 255.0), 0, 255).astype(np.uint8)
    coords = pc.coords.astype(np.int32)
    fmt = "ascii" if ascii else "binary_little_endian"
    header = (
        "ply\n"
        f"format {fmt} 1.0\n"
        f"element vertex {len(pc)}\n"
        "property int x\nproperty int y\nproperty int z\n"
        "property uchar red\nproperty uchar green\nproperty uchar blue\n"
        "end_header\n"
    )
    with open(path, "wb") as fh:
        fh.write(header.encode("ascii"))
        if ascii:
            rows = [
                f"{c[0]} {c[1]} {c[2]} {k[0]} {k[1]} {k[2]}\n"
                for c, k in zip(coords, colors)
            ]
            fh.write("".join(rows).encode("ascii"))
        else:
            packer = struct.Struct("<iiiBBB")
            fh.write(
                b"".join(
                    packer.pack(int(c[0]), int(c[1]), int(c[2]), int(k[0]), int(k[1]), int(k[2]))
                    for c, k in zip(coords, colors)
                )
            )
