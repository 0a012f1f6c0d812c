"""Synthetic distortions at five severities, plus crop-shift translation.

Severity 0 is the identity for every family. Stochastic families draw from a
keyed Philox stream (see :mod:`natrobust.rng`) so a given
``(seed, stream_id, family, severity)`` always yields the same image.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from types import MappingProxyType

import numpy as np

from natrobust import kernels
from natrobust.errors import InvalidSeverity, InvalidSpec, OutOfBounds
from natrobust.image import (
    EvalGeometry,
    Image,
    crop,
    hsv_to_rgb_array,
    jpeg_roundtrip,
    resize,
    rgb_to_hsv_array,
)
from natrobust.rng import keyed_stream

FAMILIES = (
    "gaussian_noise",
    "shot_noise",
    "gaussian_blur",
    "pixelate",
    "jpeg_quality",
    "hue",
    "saturation",
    "brightness",
    "contrast",
    "translation",
)
STOCHASTIC = frozenset({"gaussian_noise", "shot_noise"})
DIRECTIONS = ("+x", "-x", "+y", "-y")
SEVERITIES = (1, 2, 3, 4, 5)

DEFAULT_TABLE = MappingProxyType({
    "gaussian_noise": (0.04, 0.08, 0.12, 0.18, 0.26),
    "shot_noise": (60.0, 25.0, 12.0, 5.0, 3.0),
    "gaussian_blur": (0.5, 1.0, 2.0, 3.0, 4.0),
    "pixelate": (0.8, 0.6, 0.4, 0.25, 0.15),
    "jpeg_quality": (80, 60, 40, 25, 15),
    "hue": (9.0, 18.0, 36.0, 54.0, 72.0),
    "saturation": (1.5, 2.0, 2.5, 3.0, 4.0),
    "brightness": (0.1, 0.2, 0.3, 0.4, 0.5),
    "contrast": (0.75, 0.6, 0.45, 0.3, 0.2),
    "translation": (1, 2, 4, 8, 16),
})

# +1: parameter grows with strength, -1: parameter shrinks with strength
STRENGTH_DIRECTION = MappingProxyType({
    "gaussian_noise": 1, "shot_noise": -1, "gaussian_blur": 1, "pixelate": -1,
    "jpeg_quality": -1, "hue": 1, "saturation": 1, "brightness": 1,
    "contrast": -1, "translation": 1,
})


@dataclass(frozen=True)
class SeverityTable:
    params: dict = field(default_factory=lambda: dict(DEFAULT_TABLE))

    def __post_init__(self):
        params = {}
        for family, values in self.params.items():
            if family not in FAMILIES:
                raise InvalidSpec(f"unknown distortion family {family!r}")
            values = tuple(values)
            if len(values) != 5:
                raise InvalidSpec(f"{family}: need exactly 5 severity parameters, got {len(values)}")
            sign = STRENGTH_DIRECTION[family]
            if any(sign * (b - a) <= 0 for a, b in zip(values, values[1:])):
                word = "increasing" if sign > 0 else "decreasing"
                raise InvalidSpec(f"{family}: parameters must be strictly {word}: {values}")
            params[family] = values
        missing = set(FAMILIES) - params.keys()
        if missing:
            raise InvalidSpec(f"severity table missing families {sorted(missing)}")
        object.__setattr__(self, "params", MappingProxyType(params))

    @classmethod
    def with_overrides(cls, overrides: dict | None = None) -> "SeverityTable":
        params = dict(DEFAULT_TABLE)
        params.update(overrides or {})
        return cls(params)

    def param(self, family: str, severity: int):
        check_severity(severity, allow_zero=False)
        return self.params[family][severity - 1]

    def to_dict(self) -> dict:
        return {k: list(v) for k, v in self.params.items()}


DEFAULT_SEVERITIES = SeverityTable()


def check_severity(severity, allow_zero=True) -> int:
    lo = 0 if allow_zero else 1
    if isinstance(severity, bool) or not isinstance(severity, (int, np.integer)) or not lo <= severity <= 5:
        raise InvalidSeverity(f"severity must be an integer in [{lo}, 5], got {severity!r}")
    return int(severity)


@dataclass(frozen=True)
class DistortionSpec:
    """A transformation d: family, severity (0 = identity), seed and frame key."""

    family: str
    severity: int
    seed: int | None = None
    direction: str = "+x"
    stream_id: str = ""

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise InvalidSpec(f"unknown distortion family {self.family!r}")
        check_severity(self.severity)
        if self.family in STOCHASTIC and self.severity > 0 and self.seed is None:
            raise InvalidSpec(f"{self.family} needs a seed")
        if self.direction not in DIRECTIONS:
            raise InvalidSpec(f"translation direction must be one of {DIRECTIONS}")

    def to_dict(self) -> dict:
        return {
            "family": self.family,
            "severity": self.severity,
            "seed": self.seed,
            "direction": self.direction,
            "stream_id": self.stream_id,
        }


# --- parameterized transforms ------------------------------------------------

def add_gaussian_noise(img: Image, sigma: float, rng: np.random.Generator) -> Image:
    x = img.to_float()
    return Image.from_float(x + sigma * rng.standard_normal(x.shape))


def add_shot_noise(img: Image, lam: float, rng: np.random.Generator) -> Image:
    x = img.to_float()
    return Image.from_float(rng.poisson(x * lam) / lam)


def gaussian_kernel(sigma: float) -> np.ndarray:
    radius = max(1, math.ceil(3.0 * sigma))
    t = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-(t * t) / (2.0 * sigma * sigma))
    return k / k.sum()


def gaussian_blur(img: Image, sigma: float) -> Image:
    if sigma <= 0:
        return img
    return Image.from_float(kernels.blur_separable(img.to_float(), gaussian_kernel(sigma)))


def pixelate(img: Image, factor: float) -> Image:
    w = max(1, math.ceil(img.width * factor))
    h = max(1, math.ceil(img.height * factor))
    small = resize(img, w, h, "box")
    return resize(small, img.width, img.height, "nearest")


def jpeg_compress(img: Image, quality: int) -> Image:
    return jpeg_roundtrip(img, int(quality))


def _map_hsv(img: Image, fn) -> Image:
    hsv = rgb_to_hsv_array(img.to_float())
    fn(hsv)
    return Image.from_float(hsv_to_rgb_array(hsv))


def rotate_hue(img: Image, degrees: float) -> Image:
    def shift(hsv):
        hsv[..., 0] = np.mod(hsv[..., 0] + degrees, 360.0)
    return _map_hsv(img, shift)


def scale_saturation(img: Image, factor: float) -> Image:
    def scale(hsv):
        hsv[..., 1] = np.clip(hsv[..., 1] * factor, 0.0, 1.0)
    return _map_hsv(img, scale)


def shift_brightness(img: Image, delta: float) -> Image:
    def shift(hsv):
        hsv[..., 2] = np.clip(hsv[..., 2] + delta, 0.0, 1.0)
    return _map_hsv(img, shift)


LUMA = np.array([0.299, 0.587, 0.114])


def mean_luminance(x: np.ndarray) -> float:
    return float(np.mean(x @ LUMA))


def scale_contrast(img: Image, c: float) -> Image:
    x = img.to_float()
    mu = mean_luminance(x)
    return Image.from_float(mu + c * (x - mu))


def translation_offset(offset: int, direction: str) -> tuple[int, int]:
    return {
        "+x": (offset, 0), "-x": (-offset, 0),
        "+y": (0, offset), "-y": (0, -offset),
    }[direction]


def shift_crop(frame: Image, offset: int, direction: str = "+x",
               geometry: EvalGeometry = EvalGeometry()) -> Image:
    """The evaluation crop moved by ``offset`` px; never pads."""
    cx, cy = geometry.center_origin(frame)
    dx, dy = translation_offset(int(offset), direction)
    x0, y0 = cx + dx, cy + dy
    size = geometry.crop_size
    if cx < 0 or cy < 0 or x0 < 0 or y0 < 0 or x0 + size > frame.width or y0 + size > frame.height:
        raise OutOfBounds(
            f"{size}px crop shifted by {offset}px {direction} leaves the "
            f"{frame.width}x{frame.height} frame"
        )
    return crop(frame, x0, y0, size, size)


# --- severity-indexed operations --------------------------------------------

def noise_stream(seed, stream_id, family, severity) -> np.random.Generator:
    return keyed_stream(int(seed), str(stream_id), family, int(severity))


def apply_noise(family: str, severity: int, seed: int, img: Image,
                table: SeverityTable = DEFAULT_SEVERITIES, stream_id: str = "") -> Image:
    if family not in STOCHASTIC:
        raise InvalidSpec(f"{family} is not a noise family")
    if check_severity(severity) == 0:
        return img
    if seed is None:
        raise InvalidSpec(f"{family} needs a seed")
    rng = noise_stream(seed, stream_id, family, severity)
    p = table.param(family, severity)
    if family == "gaussian_noise":
        return add_gaussian_noise(img, p, rng)
    return add_shot_noise(img, p, rng)


def apply_blur(severity: int, img: Image, table: SeverityTable = DEFAULT_SEVERITIES) -> Image:
    if check_severity(severity) == 0:
        return img
    return gaussian_blur(img, table.param("gaussian_blur", severity))


def apply_pixelate(severity: int, img: Image, table: SeverityTable = DEFAULT_SEVERITIES) -> Image:
    if check_severity(severity) == 0:
        return img
    return pixelate(img, table.param("pixelate", severity))


def apply_jpeg(severity: int, img: Image, table: SeverityTable = DEFAULT_SEVERITIES) -> Image:
    if check_severity(severity) == 0:
        return img
    return jpeg_compress(img, table.param("jpeg_quality", severity))


_COLOR_OPS = {
    "hue": rotate_hue,
    "saturation": scale_saturation,
    "brightness": shift_brightness,
    "contrast": scale_contrast,
}


def apply_color(family: str, severity: int, img: Image,
                table: SeverityTable = DEFAULT_SEVERITIES) -> Image:
    if family not in _COLOR_OPS:
        raise InvalidSpec(f"{family} is not a colour family")
    if check_severity(severity) == 0:
        return img
    return _COLOR_OPS[family](img, table.param(family, severity))


def apply_translation(severity: int, direction: str, frame: Image,
                      geometry: EvalGeometry = EvalGeometry(),
                      table: SeverityTable = DEFAULT_SEVERITIES) -> Image:
    offset = 0 if check_severity(severity) == 0 else table.param("translation", severity)
    return shift_crop(frame, offset, direction, geometry)


def apply(spec: DistortionSpec, img: Image, table: SeverityTable = DEFAULT_SEVERITIES,
          geometry: EvalGeometry = EvalGeometry()) -> Image:
    """Apply ``spec`` to ``img``.

    For translation ``img`` is the resized full frame and the result is the
    shifted evaluation crop; every other family maps the evaluation crop to
    an image of the same size.
    """
    family, sev = spec.family, spec.severity
    if family == "translation":
        return apply_translation(sev, spec.direction, img, geometry, table)
    if family in STOCHASTIC:
        return apply_noise(family, sev, spec.seed, img, table, spec.stream_id)
    if family == "gaussian_blur":
        return apply_blur(sev, img, table)
    if family == "pixelate":
        return apply_pixelate(sev, img, table)
    if family == "jpeg_quality":
        return apply_jpeg(sev, img, table)
    return apply_color(family, sev, img, table)


def evaluation_view(frame: Image, spec: DistortionSpec | None,
                    table: SeverityTable = DEFAULT_SEVERITIES,
                    geometry: EvalGeometry = EvalGeometry()) -> Image:
    """Canonical preprocessing of a raw frame followed by ``spec``."""
    full = geometry.frame(frame)
    if spec is not None and spec.family == "translation":
        return apply(spec, full, table, geometry)
    view = geometry.center_crop(full)
    if spec is None:
        return view
    return apply(spec, view, table, geometry)
