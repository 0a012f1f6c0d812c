"""RGB raster type and the pixel primitives everything else builds on.

Storage is 8-bit RGB, shape ``(H, W, 3)``. Arithmetic happens in the
unit-interval float view and is re-quantized with round-half-up and clamping,
so one rule governs every 8-bit value the package produces.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache
from pathlib import Path

import numpy as np
from PIL import Image as PILImage

from natrobust import kernels
from natrobust.errors import (
    CodecFailure,
    DecodeError,
    DimensionMismatch,
    InvalidSize,
    OutOfBounds,
)

RESIZE_MODES = ("bilinear", "box", "nearest")


def quantize(arr) -> np.ndarray:
    """Float view -> uint8: clamp to [0, 1], then round half up."""
    arr = np.clip(np.asarray(arr, dtype=np.float64), 0.0, 1.0)
    return np.floor(arr * 255.0 + 0.5).astype(np.uint8)


@dataclass(frozen=True, eq=False)
class Image:
    """Immutable 8-bit RGB image; ``pixels`` is a read-only ``(H, W, 3)`` array."""

    pixels: np.ndarray

    def __post_init__(self):
        px = np.asarray(self.pixels)
        if px.ndim != 3 or px.shape[2] != 3:
            raise InvalidSize(f"expected an (H, W, 3) array, got shape {px.shape}")
        if px.shape[0] < 1 or px.shape[1] < 1:
            raise InvalidSize(f"empty image {px.shape}")
        if px.dtype != np.uint8:
            if not np.issubdtype(px.dtype, np.integer) or px.min() < 0 or px.max() > 255:
                raise ValueError("pixels must be uint8 (or integers in [0, 255])")
        px = np.ascontiguousarray(px, dtype=np.uint8)
        if px is self.pixels and px.flags.writeable:
            px = px.copy()
        px.flags.writeable = False
        object.__setattr__(self, "pixels", px)

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.pixels.shape

    def to_float(self) -> np.ndarray:
        return self.pixels.astype(np.float64) / 255.0

    @classmethod
    def from_float(cls, arr) -> "Image":
        return cls(quantize(arr))

    def __eq__(self, other):
        if not isinstance(other, Image):
            return NotImplemented
        return self.shape == other.shape and bool(np.array_equal(self.pixels, other.pixels))

    def __hash__(self):
        return hash((self.shape, self.pixels.tobytes()))

    def __repr__(self):
        return f"Image({self.width}x{self.height})"


@dataclass(frozen=True)
class PixelHSV:
    h: float
    s: float
    v: float

    def __post_init__(self):
        h = math.fmod(self.h, 360.0)
        if h < 0:
            h += 360.0
        if h >= 360.0:
            h -= 360.0
        object.__setattr__(self, "h", h)
        object.__setattr__(self, "s", min(max(self.s, 0.0), 1.0))
        object.__setattr__(self, "v", min(max(self.v, 0.0), 1.0))


def rgb_to_hsv(p) -> PixelHSV:
    """Hexcone RGB -> HSV for one float pixel; hue in degrees."""
    h, s, v = kernels.rgb_to_hsv(np.asarray([p], dtype=np.float64))[0]
    return PixelHSV(float(h), float(s), float(v))


def hsv_to_rgb(p: PixelHSV) -> tuple[float, float, float]:
    r, g, b = kernels.hsv_to_rgb(np.asarray([[p.h, p.s, p.v]], dtype=np.float64))[0]
    return float(r), float(g), float(b)


def rgb_to_hsv_array(arr: np.ndarray) -> np.ndarray:
    """Vectorized conversion of a ``(..., 3)`` float array."""
    shape = arr.shape
    flat = np.ascontiguousarray(arr.reshape(-1, 3), dtype=np.float64)
    return kernels.rgb_to_hsv(flat).reshape(shape)


def hsv_to_rgb_array(arr: np.ndarray) -> np.ndarray:
    shape = arr.shape
    flat = np.ascontiguousarray(arr.reshape(-1, 3), dtype=np.float64)
    return kernels.hsv_to_rgb(flat).reshape(shape)


def linf_distance(a: Image, b: Image) -> int:
    """Largest per-channel absolute difference, in 8-bit units."""
    if a.shape != b.shape:
        raise DimensionMismatch(f"{a.shape} vs {b.shape}")
    return int(kernels.linf_u8(a.pixels, b.pixels))


def l2_distance(a: Image, b: Image) -> float:
    """Euclidean distance in the float view."""
    if a.shape != b.shape:
        raise DimensionMismatch(f"{a.shape} vs {b.shape}")
    return float(np.sqrt(np.sum((a.to_float() - b.to_float()) ** 2)))


def crop(img: Image, x0: int, y0: int, w: int, h: int) -> Image:
    if w < 1 or h < 1:
        raise InvalidSize(f"crop size {w}x{h}")
    if x0 < 0 or y0 < 0 or x0 + w > img.width or y0 + h > img.height:
        raise OutOfBounds(
            f"window ({x0}, {y0}, {w}, {h}) exceeds {img.width}x{img.height} source"
        )
    return Image(img.pixels[y0:y0 + h, x0:x0 + w])


@lru_cache(maxsize=256)
def _bilinear_axis(n_in: int, n_out: int):
    scale = n_in / n_out
    src = (np.arange(n_out) + 0.5) * scale - 0.5
    src = np.clip(src, 0.0, n_in - 1)
    i0 = np.floor(src).astype(np.intp)
    i1 = np.minimum(i0 + 1, n_in - 1)
    t = src - i0
    tables = (i0, i1, 1.0 - t, t)
    for a in tables:
        a.flags.writeable = False
    return tables


@lru_cache(maxsize=256)
def _box_axis(n_in: int, n_out: int):
    # exact rational footprints; output i covers [i*n_in/n_out, (i+1)*n_in/n_out)
    rows = []
    for i in range(n_out):
        lo = Fraction(i * n_in, n_out)
        hi = Fraction((i + 1) * n_in, n_out)
        taps = []
        for j in range(math.floor(lo), math.ceil(hi)):
            overlap = min(Fraction(j + 1), hi) - max(Fraction(j), lo)
            if overlap > 0:
                taps.append((j, float(overlap * n_out / n_in)))
        rows.append(taps)
    width = max(len(t) for t in rows)
    idx = np.zeros((n_out, width), dtype=np.intp)
    wts = np.zeros((n_out, width), dtype=np.float64)
    for i, taps in enumerate(rows):
        for k, (j, w) in enumerate(taps):
            idx[i, k] = j
            wts[i, k] = w
        # padding taps point at the last real source pixel with zero weight
        idx[i, len(taps):] = taps[-1][0]
    idx.flags.writeable = False
    wts.flags.writeable = False
    return idx, wts


def _nearest_axis(n_in: int, n_out: int) -> np.ndarray:
    idx = np.floor((np.arange(n_out) + 0.5) * (n_in / n_out)).astype(np.intp)
    return np.minimum(idx, n_in - 1)


def resize_float(arr: np.ndarray, w: int, h: int, mode: str = "bilinear") -> np.ndarray:
    """Resize a float ``(H, W, 3)`` array; see :func:`resize`."""
    if w < 1 or h < 1:
        raise InvalidSize(f"target size {w}x{h}")
    if mode not in RESIZE_MODES:
        raise ValueError(f"unknown resize mode {mode!r}")
    arr = np.ascontiguousarray(arr, dtype=np.float64)
    in_h, in_w = arr.shape[:2]
    if mode == "nearest":
        return arr[_nearest_axis(in_h, h)][:, _nearest_axis(in_w, w)]
    if mode == "bilinear":
        return kernels.resize_bilinear(arr, *_bilinear_axis(in_h, h), *_bilinear_axis(in_w, w))
    return kernels.resize_box(arr, *_box_axis(in_h, h), *_box_axis(in_w, w))


def resize(img: Image, w: int, h: int, mode: str = "bilinear") -> Image:
    """Resample to ``w`` x ``h``.

    bilinear samples at pixel centres (half-pixel convention) with edge
    clamping; box averages the exact coverage footprint of each output pixel;
    nearest takes the source pixel whose centre is closest.
    """
    if w < 1 or h < 1:
        raise InvalidSize(f"target size {w}x{h}")
    if mode == "nearest":
        return Image(img.pixels[_nearest_axis(img.height, h)][:, _nearest_axis(img.width, w)])
    return Image.from_float(resize_float(img.to_float(), w, h, mode))


@dataclass(frozen=True)
class EvalGeometry:
    """Canonical evaluation pipeline: resize the short side, then centre-crop."""

    short_side: int = 256
    crop_size: int = 224

    def resized_dims(self, width: int, height: int) -> tuple[int, int]:
        if width <= height:
            return self.short_side, max(1, round(height * self.short_side / width))
        return max(1, round(width * self.short_side / height)), self.short_side

    def frame(self, img: Image) -> Image:
        """The resized full frame that crops (and crop shifts) are taken from."""
        w, h = self.resized_dims(img.width, img.height)
        if (w, h) == (img.width, img.height):
            return img
        return resize(img, w, h, "bilinear")

    def center_origin(self, frame: Image) -> tuple[int, int]:
        return (frame.width - self.crop_size) // 2, (frame.height - self.crop_size) // 2

    def center_crop(self, frame: Image) -> Image:
        x0, y0 = self.center_origin(frame)
        return crop(frame, x0, y0, self.crop_size, self.crop_size)

    def preprocess(self, img: Image) -> Image:
        return self.center_crop(self.frame(img))


def read_image(path) -> Image:
    path = Path(path)
    try:
        with PILImage.open(path) as im:
            im.load()
            rgb = im.convert("RGB")
            return Image(np.asarray(rgb, dtype=np.uint8))
    except FileNotFoundError:
        raise
    except Exception as exc:
        raise DecodeError(f"cannot decode {path}: {exc}") from exc


def write_png(img: Image, path) -> None:
    PILImage.fromarray(np.asarray(img.pixels), mode="RGB").save(path, format="PNG")


def encode_png(img: Image) -> bytes:
    buf = io.BytesIO()
    PILImage.fromarray(np.asarray(img.pixels), mode="RGB").save(buf, format="PNG")
    return buf.getvalue()


def decode_image_bytes(data: bytes) -> Image:
    try:
        with PILImage.open(io.BytesIO(data)) as im:
            return Image(np.asarray(im.convert("RGB"), dtype=np.uint8))
    except Exception as exc:
        raise DecodeError(str(exc)) from exc


def jpeg_roundtrip(img: Image, quality: int) -> Image:
    """Baseline JPEG encode + decode (Annex K tables scaled by ``quality``, 4:2:0)."""
    buf = io.BytesIO()
    try:
        PILImage.fromarray(np.asarray(img.pixels), mode="RGB").save(
            buf, format="JPEG", quality=int(quality), subsampling=2,
            optimize=False, progressive=False,
        )
        buf.seek(0)
        with PILImage.open(buf) as im:
            out = np.asarray(im.convert("RGB"), dtype=np.uint8)
    except Exception as exc:
        raise CodecFailure(f"JPEG round trip failed at q={quality}: {exc}") from exc
    return Image(out)


def psnr(a: Image, b: Image) -> float:
    if a.shape != b.shape:
        raise DimensionMismatch(f"{a.shape} vs {b.shape}")
    mse = float(np.mean((a.pixels.astype(np.float64) - b.pixels.astype(np.float64)) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(255.0 ** 2 / mse)
