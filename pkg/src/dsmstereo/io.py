"""Disparity and image files: PFM maps, binary PGM/PPM images, PGM heatmaps.

PFM layout: ``Pf`` magic, width, height and a scale whose sign gives the
byte order (negative = little-endian), each separated by whitespace; after a
single whitespace byte comes the float32 payload with rows stored bottom-up.
"""

import numpy as np

from .errors import ArgumentError, FormatError

_WHITESPACE = b" \t\r\n\v\f"
_LUMA = np.array([0.299, 0.587, 0.114])


class _Header:
    """Whitespace-separated header tokens with byte offsets."""

    def __init__(self, data, comments=False):
        self.data = data
        self.pos = 0
        self.comments = comments

    def token(self, what):
        data, n = self.data, len(self.data)
        while self.pos < n:
            c = data[self.pos : self.pos + 1]
            if c in _WHITESPACE and c:
                self.pos += 1
            elif self.comments and c == b"#":
                while self.pos < n and data[self.pos : self.pos + 1] not in (b"\n", b"\r"):
                    self.pos += 1
            else:
                break
        start = self.pos
        while self.pos < n and data[self.pos : self.pos + 1] not in _WHITESPACE:
            self.pos += 1
        if start == self.pos:
            raise FormatError(f"header ends before {what}", start)
        return data[start : self.pos].decode("ascii", "replace"), start

    def integer(self, what, minimum=1):
        text, offset = self.token(what)
        if not text.isdigit() or int(text) < minimum:
            raise FormatError(f"bad {what} {text!r}", offset)
        return int(text)

    def end(self):
        """Consume the single whitespace byte that ends the header."""
        if self.pos >= len(self.data) or self.data[self.pos : self.pos + 1] not in _WHITESPACE:
            raise FormatError("missing whitespace after header", self.pos)
        self.pos += 1
        return self.pos


def _read_bytes(path):
    with open(path, "rb") as fh:
        return fh.read()


def read_pfm(path):
    """Read a single-channel PFM file as a float32 ``(H, W)`` array, top row first."""
    data = _read_bytes(path)
    head = _Header(data)
    magic, _ = head.token("magic")
    if magic == "PF":
        raise FormatError("colour PFM files are not supported, expected 'Pf'", 0)
    if magic != "Pf":
        raise FormatError(f"bad magic {magic!r}, expected 'Pf'", 0)
    width = head.integer("width")
    height = head.integer("height")
    text, offset = head.token("scale")
    try:
        scale = float(text)
    except ValueError:
        raise FormatError(f"bad scale {text!r}", offset) from None
    if scale == 0 or not np.isfinite(scale):
        raise FormatError(f"bad scale {text!r}", offset)
    start = head.end()
    need = 4 * width * height
    if len(data) - start < need:
        raise FormatError(f"payload truncated: expected {need} bytes, found {len(data) - start}", len(data))
    dtype = "<f4" if scale < 0 else ">f4"
    img = np.frombuffer(data, dtype=dtype, count=width * height, offset=start).reshape(height, width)
    return np.flipud(img).astype(np.float32)


def write_pfm(path, image, little_endian=True):
    img = np.asarray(image)
    if img.ndim != 2:
        raise ArgumentError(f"PFM maps must be 2D, got shape {img.shape}")
    h, w = img.shape
    dtype = "<f4" if little_endian else ">f4"
    with open(path, "wb") as fh:
        fh.write(f"Pf\n{w} {h}\n{-1.0 if little_endian else 1.0}\n".encode("ascii"))
        fh.write(np.flipud(img).astype(dtype).tobytes())


def read_image(path):
    """Read a binary PGM (P5) or PPM (P6) as luminance in [0, 1], shape ``(H, W)``."""
    data = _read_bytes(path)
    head = _Header(data, comments=True)
    magic, _ = head.token("magic")
    if magic not in ("P5", "P6"):
        raise FormatError(f"unsupported image type {magic!r}, expected P5 or P6", 0)
    width = head.integer("width")
    height = head.integer("height")
    maxval = head.integer("maxval")
    if maxval > 65535:
        raise FormatError(f"maxval {maxval} exceeds 65535", head.pos)
    start = head.end()
    channels = 3 if magic == "P6" else 1
    dtype = ">u2" if maxval > 255 else "u1"
    count = width * height * channels
    need = count * np.dtype(dtype).itemsize
    if len(data) - start < need:
        raise FormatError(f"payload truncated: expected {need} bytes, found {len(data) - start}", len(data))
    raw = np.frombuffer(data, dtype=dtype, count=count, offset=start).astype(np.float64) / maxval
    if channels == 3:
        return raw.reshape(height, width, 3) @ _LUMA
    return raw.reshape(height, width)


def _to_bytes(image):
    img = np.asarray(image, dtype=np.float64)
    if not np.all(np.isfinite(img)):
        raise ArgumentError("image contains non-finite values")
    return np.round(np.clip(img, 0.0, 1.0) * 255.0).astype(np.uint8)


def write_pgm(path, image):
    """Write a ``(H, W)`` image with values in [0, 1] as 8-bit binary PGM."""
    img = _to_bytes(image)
    if img.ndim != 2:
        raise ArgumentError(f"PGM images must be 2D, got shape {img.shape}")
    with open(path, "wb") as fh:
        fh.write(f"P5\n{img.shape[1]} {img.shape[0]}\n255\n".encode("ascii"))
        fh.write(img.tobytes())


def write_ppm(path, image):
    img = _to_bytes(image)
    if img.ndim != 3 or img.shape[2] != 3:
        raise ArgumentError(f"PPM images must be (H, W, 3), got shape {img.shape}")
    with open(path, "wb") as fh:
        fh.write(f"P6\n{img.shape[1]} {img.shape[0]}\n255\n".encode("ascii"))
        fh.write(img.tobytes())


def write_pgm_heatmap(path, values, value_range=None):
    """Grayscale map: ``value_range = (lo, hi)`` maps linearly to 0..255, clamped.

    Without a range the finite min and max of ``values`` are used.
    """
    v = np.asarray(values, dtype=np.float64)
    if value_range is None:
        finite = v[np.isfinite(v)]
        value_range = (finite.min(), finite.max()) if finite.size else (0.0, 1.0)
    lo, hi = map(float, value_range)
    if not hi > lo:
        raise ArgumentError(f"heatmap range must be increasing, got ({lo}, {hi})")
    scaled = np.nan_to_num((v - lo) / (hi - lo), nan=0.0, posinf=1.0, neginf=0.0)
    write_pgm(path, scaled)
