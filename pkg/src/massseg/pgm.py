"""Binary portable graymap (P5) reading and writing, 8 or 16 bit."""
from __future__ import annotations

import numpy as np

from .preprocess import RawImage

__all__ = ["PgmError", "read_pgm", "write_pgm", "parse_pgm", "format_pgm"]


class PgmError(ValueError):
    pass


def parse_pgm(data: bytes) -> RawImage:
    if data[:2] != b"P5":
        raise PgmError("not a binary PGM (missing P5 magic)")
    pos = 2
    fields = []
    while len(fields) < 3:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if pos < len(data) and data[pos:pos + 1] == b"#":
            while pos < len(data) and data[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        begin = pos
        while pos < len(data) and data[pos:pos + 1].isdigit():
            pos += 1
        if begin == pos:
            raise PgmError("malformed PGM header")
        fields.append(int(data[begin:pos]))
    if pos >= len(data) or not data[pos:pos + 1].isspace():
        raise PgmError("malformed PGM header")
    pos += 1
    width, height, maxval = fields
    if width < 1 or height < 1 or not 0 < maxval < 65536:
        raise PgmError(f"bad PGM dimensions or maxval: {width}x{height}, {maxval}")
    dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
    need = width * height * dtype.itemsize
    if len(data) - pos < need:
        raise PgmError("truncated PGM pixel data")
    samples = np.frombuffer(data, dtype=dtype, count=width * height, offset=pos)
    samples = samples.reshape(height, width)
    if samples.max() > maxval:
        raise PgmError("sample exceeds maxval")
    return RawImage(samples.astype(np.uint16 if maxval > 255 else np.uint8), 16 if maxval > 255 else 8)


def read_pgm(path) -> RawImage:
    with open(path, "rb") as fh:
        return parse_pgm(fh.read())


def format_pgm(img: RawImage) -> bytes:
    header = f"P5\n{img.width} {img.height}\n{img.maxval}\n".encode("ascii")
    dtype = ">u2" if img.bitdepth == 16 else "u1"
    return header + np.ascontiguousarray(img.samples, dtype=dtype).tobytes()


def write_pgm(path, img: RawImage):
    with open(path, "wb") as fh:
        fh.write(format_pgm(img))
