"""8-bit RGB image I/O and the in-memory image value type.

PNG goes through Pillow; PPM (binary P6) is hand-rolled so fixtures can
be written and read with no compression layer involved. Pixel values map
linearly between [0, 255] bytes and [0, 1] floats.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

from .errors import DataError, IOFailure, ShapeError


@dataclass(frozen=True)
class ImageRGB:
    """Channel-first float image, values in [0, 1]."""

    pixels: np.ndarray  # [3, H, W] float64

    def __post_init__(self) -> None:
        p = self.pixels
        if not isinstance(p, np.ndarray) or p.ndim != 3 or p.shape[0] != 3:
            raise ShapeError(f"ImageRGB needs [3,H,W] pixels, got "
                             f"{getattr(p, 'shape', type(p))}")
        if p.dtype != np.float64:
            object.__setattr__(self, "pixels", p.astype(np.float64))
        if self.pixels.min() < 0.0 or self.pixels.max() > 1.0:
            raise ValueError("ImageRGB pixel values must lie in [0, 1]")

    @property
    def height(self) -> int:
        return self.pixels.shape[1]

    @property
    def width(self) -> int:
        return self.pixels.shape[2]


def _to_bytes(img: ImageRGB) -> np.ndarray:
    """[H, W, 3] uint8 view of the image, round-to-nearest."""
    q = np.rint(img.pixels * 255.0)
    return np.clip(q, 0, 255).astype(np.uint8).transpose(1, 2, 0)


def _from_bytes(arr: np.ndarray) -> ImageRGB:
    return ImageRGB(arr.astype(np.float64).transpose(2, 0, 1) / 255.0)


def write_image(path, img: ImageRGB) -> None:
    path = Path(path)
    try:
        if path.suffix.lower() == ".ppm":
            _write_ppm(path, img)
        else:
            Image.fromarray(_to_bytes(img), mode="RGB").save(path, format="PNG")
    except OSError as exc:
        raise IOFailure(f"cannot write image {path}: {exc}") from exc


def read_image(path) -> ImageRGB:
    path = Path(path)
    if not path.is_file():
        raise DataError(f"image not found: {path}")
    try:
        if path.suffix.lower() == ".ppm":
            return _read_ppm(path)
        with Image.open(path) as im:
            return _from_bytes(np.asarray(im.convert("RGB")))
    except UnidentifiedImageError as exc:
        raise DataError(f"not a readable image: {path}") from exc
    except OSError as exc:
        raise IOFailure(f"cannot read image {path}: {exc}") from exc


def _write_ppm(path: Path, img: ImageRGB) -> None:
    data = _to_bytes(img)
    with open(path, "wb") as fh:
        fh.write(f"P6\n{img.width} {img.height}\n255\n".encode("ascii"))
        fh.write(data.tobytes())


def _read_ppm(path: Path) -> ImageRGB:
    with open(path, "rb") as fh:
        blob = fh.read()

    # Header: magic, width, height, maxval as whitespace-separated tokens,
    # '#' comments allowed, then a single whitespace byte before the raster.
    pos = 0
    tokens = []
    while len(tokens) < 4:
        if pos >= len(blob):
            raise DataError(f"truncated PPM header: {path}")
        ch = blob[pos:pos + 1]
        if ch == b"#":
            pos = blob.find(b"\n", pos)
            if pos < 0:
                raise DataError(f"truncated PPM header: {path}")
            pos += 1
        elif ch.isspace():
            pos += 1
        else:
            end = pos
            while end < len(blob) and not blob[end:end + 1].isspace():
                end += 1
            tokens.append(blob[pos:end])
            pos = end
    pos += 1  # separator after maxval

    if tokens[0] != b"P6":
        raise DataError(f"not a binary PPM (P6) file: {path}")
    try:
        width, height, maxval = (int(t) for t in tokens[1:])
    except ValueError as exc:
        raise DataError(f"malformed PPM header: {path}") from exc
    if maxval != 255:
        raise DataError(f"unsupported PPM maxval {maxval} in {path} (need 255)")
    need = width * height * 3
    raster = blob[pos:pos + need]
    if len(raster) < need:
        raise DataError(f"truncated PPM raster: {path}")
    arr = np.frombuffer(raster, dtype=np.uint8).reshape(height, width, 3)
    return _from_bytes(arr)
