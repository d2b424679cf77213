"""Raster types, binarization and portable image I/O.

All pipeline stages exchange 8-bit grayscale rasters with the convention
0 = ink, 255 = paper.  PGM (P5, maxval 255) is the interchange format;
8-bit grayscale PNG is supported as a convenience.  Images are immutable
after construction and safe to share across threads.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import FormatError, OutOfBoundsError

WHITE = 255
INK = 0


@dataclass(frozen=True)
class GrayImage:
    """Immutable 8-bit grayscale raster; pixels[row, col], 0 = ink."""

    pixels: np.ndarray

    def __post_init__(self):
        px = np.asarray(self.pixels)
        if px.ndim != 2:
            raise FormatError(f"expected 2-d pixel array, got shape {px.shape}")
        if px.shape[0] < 1 or px.shape[1] < 1:
            raise FormatError("image must be at least 1x1")
        if px.dtype != np.uint8:
            if px.min() < 0 or px.max() > 255:
                raise FormatError("pixel intensities must lie in [0, 255]")
            px = px.astype(np.uint8)
        px = np.ascontiguousarray(px)
        px.flags.writeable = False
        object.__setattr__(self, "pixels", px)

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    def same_pixels(self, other: "GrayImage") -> bool:
        return self.pixels.shape == other.pixels.shape and bool(
            np.array_equal(self.pixels, other.pixels)
        )

    @staticmethod
    def blank(width: int, height: int, value: int = WHITE) -> "GrayImage":
        return GrayImage(np.full((height, width), value, dtype=np.uint8))


@dataclass(frozen=True)
class BoundingBox:
    """Axis-aligned box; (x, y) is the top-left corner, w/h at least 1."""

    x: int
    y: int
    w: int
    h: int

    def __post_init__(self):
        if self.x < 0 or self.y < 0 or self.w < 1 or self.h < 1:
            raise OutOfBoundsError(f"degenerate box {self}")

    def fits_inside(self, img: GrayImage) -> bool:
        return self.x + self.w <= img.width and self.y + self.h <= img.height

    def compose(self, inner: "BoundingBox") -> "BoundingBox":
        """Express a box given in this box's coordinates in parent coordinates."""
        if inner.x + inner.w > self.w or inner.y + inner.h > self.h:
            raise OutOfBoundsError(f"{inner} exceeds {self}")
        return BoundingBox(self.x + inner.x, self.y + inner.y, inner.w, inner.h)

    def iou(self, other: "BoundingBox") -> float:
        x0 = max(self.x, other.x)
        y0 = max(self.y, other.y)
        x1 = min(self.x + self.w, other.x + other.w)
        y1 = min(self.y + self.h, other.y + other.h)
        inter = max(0, x1 - x0) * max(0, y1 - y0)
        union = self.w * self.h + other.w * other.h - inter
        return inter / union if union else 0.0


@dataclass(frozen=True)
class BinaryImage:
    """Ink mask derived from a GrayImage; mask[row, col] True = ink."""

    mask: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.mask)
        if m.ndim != 2 or m.dtype != np.bool_:
            raise FormatError("mask must be a 2-d bool array")
        m = np.ascontiguousarray(m)
        m.flags.writeable = False
        object.__setattr__(self, "mask", m)

    @property
    def width(self) -> int:
        return self.mask.shape[1]

    @property
    def height(self) -> int:
        return self.mask.shape[0]


def otsu_threshold(img: GrayImage) -> int:
    """Threshold maximizing between-class variance of the 256-bin histogram.

    Ties break toward the smaller threshold; a uniform image (zero variance
    everywhere) falls back to 128.
    """
    hist = np.bincount(img.pixels.reshape(-1), minlength=256).astype(np.float64)
    total = hist.sum()
    # Class 0 is {intensity < t}; sweep all 256 candidate thresholds.
    cum_n = np.cumsum(hist)
    cum_sum = np.cumsum(hist * np.arange(256))
    best_t, best_var = 128, 0.0
    grand = cum_sum[255]
    for t in range(256):
        n0 = cum_n[t - 1] if t > 0 else 0.0
        n1 = total - n0
        if n0 == 0 or n1 == 0:
            continue
        s0 = cum_sum[t - 1] if t > 0 else 0.0
        mu0 = s0 / n0
        mu1 = (grand - s0) / n1
        var = (n0 / total) * (n1 / total) * (mu0 - mu1) ** 2
        if var > best_var:
            best_var, best_t = var, t
    return best_t


def binarize(img: GrayImage, method: str = "otsu", threshold: int = 128) -> BinaryImage:
    """Map a grayscale image to an ink mask: ink iff intensity < threshold.

    ``method`` is "fixed" (use ``threshold``) or "otsu".
    """
    if method == "fixed":
        t = threshold
    elif method == "otsu":
        t = otsu_threshold(img)
    else:
        raise ValueError(f"unknown binarization method {method!r}")
    return BinaryImage(img.pixels < np.uint8(t))


def crop(img: GrayImage, box: BoundingBox) -> GrayImage:
    if not box.fits_inside(img):
        raise OutOfBoundsError(f"{box} outside {img.width}x{img.height} image")
    return GrayImage(img.pixels[box.y : box.y + box.h, box.x : box.x + box.w])


# -- PGM / PNG I/O ----------------------------------------------------------

_PGM_TOKEN = re.compile(rb"\s*(?:#[^\n]*\n\s*)*(\S+)")


def _read_pgm(data: bytes) -> GrayImage:
    pos = 0
    fields = []
    while len(fields) < 4:
        m = _PGM_TOKEN.match(data, pos)
        if not m:
            raise FormatError("truncated PGM header")
        fields.append(m.group(1))
        pos = m.end()
    if fields[0] != b"P5":
        raise FormatError(f"not a P5 PGM (magic {fields[0]!r})")
    try:
        width, height, maxval = (int(f) for f in fields[1:])
    except ValueError as exc:
        raise FormatError("non-numeric PGM header field") from exc
    if maxval != 255:
        raise FormatError(f"only maxval 255 supported, got {maxval}")
    if width < 1 or height < 1:
        raise FormatError("degenerate PGM dimensions")
    pos += 1  # single whitespace byte after maxval
    raster = data[pos : pos + width * height]
    if len(raster) != width * height:
        raise FormatError("PGM raster shorter than header promises")
    return GrayImage(np.frombuffer(raster, dtype=np.uint8).reshape(height, width))


def _read_png(path: Path) -> GrayImage:
    from PIL import Image

    with Image.open(path) as im:
        if im.mode != "L":
            raise FormatError(f"PNG must be 8-bit grayscale, got mode {im.mode!r}")
        return GrayImage(np.asarray(im, dtype=np.uint8))


def load_image(path) -> GrayImage:
    """Load a PGM (P5) or 8-bit grayscale PNG file."""
    path = Path(path)
    if not path.is_file():
        raise OSError(f"no such image file: {path}")
    if path.suffix.lower() == ".png":
        return _read_png(path)
    data = path.read_bytes()
    return _read_pgm(data)


def save_image(img: GrayImage, path) -> None:
    """Write PGM P5, or PNG when the extension is .png."""
    path = Path(path)
    if not path.parent.is_dir():
        raise OSError(f"parent directory does not exist: {path.parent}")
    if path.suffix.lower() == ".png":
        from PIL import Image

        Image.fromarray(img.pixels, mode="L").save(path)
        return
    header = f"P5\n{img.width} {img.height}\n255\n".encode("ascii")
    path.write_bytes(header + img.pixels.tobytes())
