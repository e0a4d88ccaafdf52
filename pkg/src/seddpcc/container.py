"""Bitstream container framing (little-endian).

Layout: magic ``SEDD``, version u8, depth u8, flags u8 (bit0 set when the
model has no transform module), original point count u32, the three
per-scale point counts as LEB128 varints, latent channel count u8, then the
octree and feature payloads each prefixed with a u32 byte length.
"""

from __future__ import annotations

import dataclasses
import struct

MAGIC = b"SEDD"
VERSION = 1
FLAG_NO_TRANSFORM = 0x01


class BitstreamFormatError(ValueError):
    """Magic/version/flag problems: the stream is not ours or incompatible."""


class BitstreamDecodeError(ValueError):
    """Structurally truncated or corrupt stream."""


def write_varint(value: int) -> bytes:
    if value < 0:
        raise ValueError("varints are unsigned")
    out = bytearray()
    while True:
        b = value & 0x7F
        value >>= 7
        out.append(b | (0x80 if value else 0))
        if not value:
            return bytes(out)


def read_varint(data: bytes, pos: int) -> tuple[int, int]:
    value = 0
    shift = 0
    while True:
        if pos >= len(data):
            raise BitstreamDecodeError("truncated varint")
        b = data[pos]
        pos += 1
        value |= (b & 0x7F) << shift
        if not b & 0x80:
            return value, pos
        shift += 7
        if shift > 63:
            raise BitstreamDecodeError("varint too long")


@dataclasses.dataclass
class Bitstream:
    """Parsed container; ``pack``/``parse`` round-trip byte-exactly."""

    depth: int
    num_points: int
    counts: tuple[int, int, int]  # points kept at strides 4, 2, 1
    latent_channels: int
    octree_payload: bytes
    feature_payload: bytes
    no_transform: bool = False

    def pack(self) -> bytes:
        flags = FLAG_NO_TRANSFORM if self.no_transform else 0
        head = MAGIC + struct.pack(
            "<BBBI", VERSION, self.depth, flags, self.num_points
        )
        ks = b"".join(write_varint(k) for k in self.counts)
        return (
            head
            + ks
            + struct.pack("<B", self.latent_channels)
            + struct.pack("<I", len(self.octree_payload))
            + self.octree_payload
            + struct.pack("<I", len(self.feature_payload))
            + self.feature_payload
        )

    @property
    def total_bytes(self) -> int:
        return len(self.pack())

    def bits_per_point(self) -> float:
        return self.total_bytes * 8.0 / max(self.num_points, 1)


def parse(data: bytes) -> Bitstream:
    if len(data) < 11:
        raise BitstreamDecodeError("stream shorter than fixed header")
    if data[:4] != MAGIC:
        raise BitstreamFormatError(f"bad magic {data[:4]!r}")
    version, depth, flags, num_points = struct.unpack_from("<BBBI", data, 4)
    if version != VERSION:
        raise BitstreamFormatError(f"unsupported version {version}")
    if flags & ~FLAG_NO_TRANSFORM:
        raise BitstreamFormatError(f"unknown flag bits 0x{flags:02x}")
    pos = 11
    counts = []
    for _ in range(3):
        k, pos = read_varint(data, pos)
        counts.append(k)
    if pos >= len(data):
        raise BitstreamDecodeError("truncated before latent channel count")
    latent_channels = data[pos]
    pos += 1

    payloads = []
    for name in ("octree", "feature"):
        if pos + 4 > len(data):
            raise BitstreamDecodeError(f"truncated {name} payload length")
        (n,) = struct.unpack_from("<I", data, pos)
        pos += 4
        if pos + n > len(data):
            raise BitstreamDecodeError(f"truncated {name} payload")
        payloads.append(data[pos:pos + n])
        pos += n
    if pos != len(data):
        raise BitstreamDecodeError(f"{len(data) - pos} trailing bytes")
    return Bitstream(
        depth=depth,
        num_points=num_points,
        counts=(counts[0], counts[1], counts[2]),
        latent_channels=latent_channels,
        octree_payload=payloads[0],
        feature_payload=payloads[1],
        no_transform=bool(flags & FLAG_NO_TRANSFORM),
    )
