"""Binary Netpbm (P5/P6) reading and writing.

Header per the official format: ASCII magic, then whitespace-separated
width, height and maxval (comments from ``#`` to end of line allowed),
then a single whitespace byte, then the raw raster. Only 1-byte samples
(maxval <= 255) are supported.
"""

from __future__ import annotations

import numpy as np

from .errors import NetpbmParseError

_WHITESPACE = b" \t\n\r\x0b\x0c"


class _Scanner:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def _skip_separators(self) -> None:
        while self.pos < len(self.data):
            b = self.data[self.pos:self.pos + 1]
            if b in (b"#",):
                nl = self.data.find(b"\n", self.pos)
                self.pos = len(self.data) if nl == -1 else nl + 1
            elif b in _WHITESPACE:
                self.pos += 1
            else:
                return

    def token(self, what: str) -> bytes:
        self._skip_separators()
        start = self.pos
        while self.pos < len(self.data) and self.data[self.pos:self.pos + 1] not in _WHITESPACE \
                and self.data[self.pos:self.pos + 1] != b"#":
            self.pos += 1
        if self.pos == start:
            raise NetpbmParseError(f"expected {what}", start)
        return self.data[start:self.pos]

    def integer(self, what: str) -> int:
        start = self.pos
        tok = self.token(what)
        if not tok.isdigit():
            raise NetpbmParseError(f"expected integer {what}, got {tok!r}",
                                   max(start, self.pos - len(tok)))
        return int(tok)


def read_netpbm(path: str) -> np.ndarray:
    """Read a P5 file as (H, W) uint8 or a P6 file as (H, W, 3) uint8."""
    with open(path, "rb") as fh:
        data = fh.read()
    return parse_netpbm(data)


def parse_netpbm(data: bytes) -> np.ndarray:
    s = _Scanner(data)
    magic = s.token("magic number")
    if magic not in (b"P5", b"P6"):
        raise NetpbmParseError(f"unsupported magic {magic!r} (want P5 or P6)", 0)
    width = s.integer("width")
    height = s.integer("height")
    maxval = s.integer("maxval")
    if width < 1 or height < 1:
        raise NetpbmParseError(f"invalid dimensions {width}x{height}", s.pos)
    if not 1 <= maxval <= 255:
        raise NetpbmParseError(f"maxval {maxval} out of supported range 1..255", s.pos)
    if s.pos >= len(data) or data[s.pos:s.pos + 1] not in _WHITESPACE:
        raise NetpbmParseError("expected single whitespace before raster", s.pos)
    s.pos += 1
    channels = 3 if magic == b"P6" else 1
    need = width * height * channels
    raster = data[s.pos:s.pos + need]
    if len(raster) < need:
        raise NetpbmParseError(
            f"raster truncated: need {need} bytes, found {len(raster)}",
            len(data))
    arr = np.frombuffer(raster, dtype=np.uint8).copy()
    if magic == b"P6":
        return arr.reshape(height, width, 3)
    return arr.reshape(height, width)


def write_pgm(path: str, arr: np.ndarray) -> None:
    """Write a (H, W) uint8 array as binary P5 with maxval 255."""
    a = np.ascontiguousarray(np.asarray(arr, dtype=np.uint8))
    if a.ndim != 2:
        raise ValueError(f"P5 writer expects a 2-D array, got shape {a.shape}")
    with open(path, "wb") as fh:
        fh.write(b"P5\n%d %d\n255\n" % (a.shape[1], a.shape[0]))
        fh.write(a.tobytes())


def write_ppm(path: str, arr: np.ndarray) -> None:
    """Write a (H, W, 3) uint8 array as binary P6 with maxval 255."""
    a = np.ascontiguousarray(np.asarray(arr, dtype=np.uint8))
    if a.ndim != 3 or a.shape[2] != 3:
        raise ValueError(f"P6 writer expects (H, W, 3), got shape {a.shape}")
    with open(path, "wb") as fh:
        fh.write(b"P6\n%d %d\n255\n" % (a.shape[1], a.shape[0]))
        fh.write(a.tobytes())
