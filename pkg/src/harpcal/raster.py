"""Grayscale raster container and PGM/PNG input-output.

Coordinate convention
---------------------
``img.data[j, i]`` is the sample at column ``i`` and row ``j``. The
continuous sub-pixel position ``(x, y) = (i, j)`` is the *center* of that
pixel, so the image covers ``[-0.5, width - 0.5] x [-0.5, height - 0.5]``.
Every other module in the package follows this convention.
"""
from __future__ import annotations

import os
from dataclasses import dataclass
from pathlib import Path
from typing import Union

import numpy as np

from .errors import DimensionError, ImageFormatError

PathLike = Union[str, os.PathLike]

LUMA_WEIGHTS = (0.299, 0.587, 0.114)

__all__ = ["GrayImage", "load_image", "save_image", "LUMA_WEIGHTS"]


@dataclass(frozen=True)
class GrayImage:
    """Immutable luminance raster with samples in [0, 1].

    ``data`` has shape ``(height, width)``; it is copied and made
    read-only on construction.
    """

    data: np.ndarray

    def __post_init__(self):
        arr = np.array(self.data, dtype=np.float64, copy=True)
        if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
            raise DimensionError(f"expected a non-empty 2-D array, got shape {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ValueError("image samples must be finite")
        if arr.min() < 0.0 or arr.max() > 1.0:
            raise ValueError("image samples must lie in [0, 1]")
        arr.setflags(write=False)
        object.__setattr__(self, "data", arr)

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def samples(self) -> np.ndarray:
        """Row-major flat view of the samples."""
        return self.data.ravel()

    @classmethod
    def from_samples(cls, width: int, height: int, samples) -> "GrayImage":
        samples = np.asarray(samples, dtype=np.float64)
        if samples.size != width * height:
            raise DimensionError(
                f"{samples.size} samples do not fill a {width}x{height} image")
        return cls(samples.reshape(height, width))


# ---------------------------------------------------------------------
# PGM / PPM
# ---------------------------------------------------------------------
def _read_header_tokens(buf: bytes, count: int):
    """Parse ``count`` whitespace separated integers after the magic number.

    Returns the integers and the offset of the single whitespace byte that
    terminates the header.
    """
    tokens = []
    pos = 2
    n = len(buf)
    while len(tokens) < count:
        while pos < n and buf[pos:pos + 1].isspace():
            pos += 1
        if pos < n and buf[pos:pos + 1] == b"#":
            while pos < n and buf[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < n and buf[pos:pos + 1].isdigit():
            pos += 1
        if start == pos:
            raise ImageFormatError("PNM: truncated or malformed header")
        tokens.append(int(buf[start:pos]))
    if pos >= n or not buf[pos:pos + 1].isspace():
        raise ImageFormatError("PNM: truncated or malformed header")
    return tokens, pos + 1


def _decode_pnm(buf: bytes) -> np.ndarray:
    magic = buf[:2]
    if magic not in (b"P5", b"P6"):
        raise ImageFormatError(f"PNM: unsupported magic number {magic!r}")
    (width, height, maxval), offset = _read_header_tokens(buf, 3)
    if width < 1 or height < 1 or not 0 < maxval < 65536:
        raise ImageFormatError("PNM: invalid header values")
    channels = 3 if magic == b"P6" else 1
    dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
    expected = width * height * channels * dtype.itemsize
    payload = buf[offset:offset + expected]
    if len(payload) < expected:
        raise ImageFormatError(
            f"PNM: truncated pixel data ({len(payload)} of {expected} bytes)")
    arr = np.frombuffer(payload, dtype=dtype).astype(np.float64) / maxval
    if channels == 3:
        arr = arr.reshape(height, width, 3) @ np.asarray(LUMA_WEIGHTS)
    return np.clip(arr.reshape(height, width), 0.0, 1.0)


def _decode_with_pillow(path: Path) -> np.ndarray:
    try:
        from PIL import Image
    except ImportError as exc:  # pragma: no cover - Pillow is optional
        raise ImageFormatError(f"{path.suffix or 'unknown'}: format needs Pillow") from exc
    try:
        with Image.open(path) as im:
            fmt = im.format or path.suffix
            if im.mode in ("I;16", "I;16B", "I"):
                arr = np.asarray(im, dtype=np.float64) / 65535.0
            elif im.mode == "L":
                arr = np.asarray(im, dtype=np.float64) / 255.0
            elif im.mode in ("RGB", "RGBA"):
                rgb = np.asarray(im.convert("RGB"), dtype=np.float64) / 255.0
                arr = rgb @ np.asarray(LUMA_WEIGHTS)
            else:
                raise ImageFormatError(f"{fmt}: unsupported mode {im.mode}")
    except ImageFormatError:
        raise
    except OSError as exc:
        raise ImageFormatError(f"{path.suffix or 'unknown'}: {exc}") from exc
    return np.clip(arr, 0.0, 1.0)


def load_image(path: PathLike) -> GrayImage:
    """Read a binary PGM (8/16 bit), PPM or PNG file as a :class:`GrayImage`.

    Color inputs are converted with the fixed luma weights 0.299, 0.587,
    0.114. Raises ``OSError`` when the file cannot be read and
    :class:`ImageFormatError` for unsupported or malformed content.
    """
    path = Path(path)
    with open(path, "rb") as fh:
        buf = fh.read()
    if buf[:1] == b"P":
        return GrayImage(_decode_pnm(buf))
    if buf[:8] == b"\x89PNG\r\n\x1a\n":
        return GrayImage(_decode_with_pillow(path))
    raise ImageFormatError(f"{path.suffix or 'unknown'}: unsupported image format")


def encode_pgm(img: GrayImage, bits: int = 16) -> bytes:
    if bits == 8:
        maxval, dtype = 255, np.dtype("u1")
    elif bits == 16:
        maxval, dtype = 65535, np.dtype(">u2")
    else:
        raise ValueError(f"bits must be 8 or 16, got {bits}")
    q = np.rint(img.data * maxval).astype(dtype)
    header = f"P5\n{img.width} {img.height}\n{maxval}\n".encode("ascii")
    return header + q.tobytes()


def save_image(img: GrayImage, path: PathLike, bits: int = 16) -> None:
    """Write ``img`` as binary PGM with 8- or 16-bit samples."""
    data = encode_pgm(img, bits)
    with open(path, "wb") as fh:
        fh.write(data)
