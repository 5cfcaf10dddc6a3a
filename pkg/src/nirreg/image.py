"""Image representation, PGM/PPM/PNG I/O, grayscale conversion and pixel gradients."""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

BT601_WEIGHTS = (0.299, 0.587, 0.114)


class ImageError(ValueError):
    """Base class for image I/O and validation failures."""


class MalformedHeaderError(ImageError):
    pass


class TruncatedPayloadError(ImageError):
    pass


class UnsupportedFormatError(ImageError):
    pass


class InvalidChannelsError(ImageError):
    pass


class TooSmallError(ImageError):
    pass


@dataclass(frozen=True)
class PixelCoord:
    """Sub-pixel position: x is the column (j) axis, y the row (i) axis."""

    x: float
    y: float

    def __post_init__(self):
        if not (math.isfinite(self.x) and math.isfinite(self.y)):
            raise ValueError(f"non-finite pixel coordinate ({self.x}, {self.y})")

    def as_array(self):
        return np.array([self.x, self.y], dtype=float)


@dataclass(frozen=True)
class Image:
    """Intensity grid in [0,1], shape (h, w) for gray or (h, w, 3) for color."""

    data: np.ndarray

    def __post_init__(self):
        data = np.asarray(self.data, dtype=float)
        if data.ndim == 3 and data.shape[2] == 1:
            data = data[:, :, 0]
        if data.ndim not in (2, 3) or (data.ndim == 3 and data.shape[2] != 3):
            raise InvalidChannelsError(f"expected (h,w) or (h,w,3) data, got shape {data.shape}")
        if data.shape[0] < 1 or data.shape[1] < 1:
            raise ImageError("image must be at least 1x1")
        if not np.all(np.isfinite(data)) or data.min() < 0.0 or data.max() > 1.0:
            raise ImageError("intensities must be finite and within [0, 1]")
        data = data.copy()
        data.setflags(write=False)
        object.__setattr__(self, "data", data)

    @property
    def height(self):
        return self.data.shape[0]

    @property
    def width(self):
        return self.data.shape[1]

    @property
    def channels(self):
        return 1 if self.data.ndim == 2 else 3


@dataclass(frozen=True)
class GradientField:
    """Per-pixel gradient magnitude and orientation (angle in [0, 2pi))."""

    magnitude: np.ndarray
    orientation: np.ndarray

    def __post_init__(self):
        mag = np.asarray(self.magnitude, dtype=float)
        ori = np.asarray(self.orientation, dtype=float)
        if mag.shape != ori.shape or mag.ndim != 2:
            raise ValueError("magnitude/orientation must be equal-shape 2-D arrays")
        mag = mag.copy()
        ori = ori.copy()
        mag.setflags(write=False)
        ori.setflags(write=False)
        object.__setattr__(self, "magnitude", mag)
        object.__setattr__(self, "orientation", ori)

    @property
    def height(self):
        return self.magnitude.shape[0]

    @property
    def width(self):
        return self.magnitude.shape[1]


def _read_pnm_token(buf, pos):
    """Next whitespace-delimited header token, skipping '#' comments."""
    n = len(buf)
    while pos < n:
        c = buf[pos:pos + 1]
        if c.isspace():
            pos += 1
        elif c == b"#":
            while pos < n and buf[pos:pos + 1] != b"\n":
                pos += 1
        else:
            break
    start = pos
    while pos < n and not buf[pos:pos + 1].isspace():
        pos += 1
    if start == pos:
        raise MalformedHeaderError("unexpected end of header")
    return buf[start:pos], pos


def _load_pnm(buf):
    magic = buf[:2]
    if magic not in (b"P5", b"P6"):
        raise MalformedHeaderError(f"unsupported magic {magic!r}")
    pos = 2
    fields = []
    for _ in range(3):
        tok, pos = _read_pnm_token(buf, pos)
        try:
            fields.append(int(tok))
        except ValueError:
            raise MalformedHeaderError(f"non-numeric header token {tok!r}") from None
    width, height, maxval = fields
    if width < 1 or height < 1:
        raise MalformedHeaderError(f"invalid dimensions {width}x{height}")
    if maxval != 255:
        raise UnsupportedFormatError(f"only maxval 255 supported, got {maxval}")
    pos += 1  # single whitespace byte after maxval
    channels = 1 if magic == b"P5" else 3
    count = width * height * channels
    payload = buf[pos:pos + count]
    if len(payload) < count:
        raise TruncatedPayloadError(f"expected {count} payload bytes, got {len(payload)}")
    data = np.frombuffer(payload, dtype=np.uint8).astype(float) / 255.0
    if channels == 1:
        data = data.reshape(height, width)
    else:
        data = data.reshape(height, width, 3)
    return Image(data)


def _load_png(path):
    from PIL import Image as PILImage

    with PILImage.open(path) as im:
        if im.mode not in ("L", "RGB"):
            if im.mode in ("I;16", "I", "F"):
                raise UnsupportedFormatError(f"unsupported PNG bit depth/mode {im.mode}")
            im = im.convert("RGB" if len(im.getbands()) >= 3 else "L")
        arr = np.asarray(im, dtype=float) / 255.0
    return Image(arr)


def load_image(path):
    """Load a binary PGM (P5), binary PPM (P6), or 8-bit gray/RGB PNG."""
    path = Path(path)
    buf = path.read_bytes()
    if buf[:8] == b"\x89PNG\r\n\x1a\n":
        return _load_png(path)
    if buf[:2] in (b"P5", b"P6"):
        return _load_pnm(buf)
    raise UnsupportedFormatError(f"unrecognized image format in {path}")


def save_image(img, path):
    """Write a PGM (gray) or PPM (color) file with maxval 255, bit-exact layout."""
    path = Path(path)
    magic = b"P5" if img.channels == 1 else b"P6"
    samples = np.rint(np.asarray(img.data) * 255.0).astype(np.uint8)
    header = magic + b"\n" + f"{img.width} {img.height}\n255\n".encode()
    path.write_bytes(header + samples.tobytes())


def rgb_to_gray(img):
    """BT.601 luma: 0.299 R + 0.587 G + 0.114 B."""
    if img.channels != 3:
        raise InvalidChannelsError("rgb_to_gray requires a 3-channel image")
    r, g, b = BT601_WEIGHTS
    gray = r * img.data[:, :, 0] + g * img.data[:, :, 1] + b * img.data[:, :, 2]
    return Image(np.clip(gray, 0.0, 1.0))


def compute_gradient_field(img):
    """Gradient magnitude and full-quadrant orientation of a grayscale image.

    Central differences in the interior, one-sided differences on borders.
    Orientation is atan2(df/di, df/dj) mapped into [0, 2pi); a zero-gradient
    pixel gets orientation 0.
    """
    if img.channels != 1:
        raise InvalidChannelsError("gradient requires a single-channel image")
    if img.height < 3 or img.width < 3:
        raise TooSmallError("gradient needs at least a 3x3 image")
    df_di, df_dj = np.gradient(np.asarray(img.data, dtype=float))
    magnitude = np.hypot(df_di, df_dj)
    orientation = np.mod(np.arctan2(df_di, df_dj), 2.0 * np.pi)
    orientation[magnitude == 0.0] = 0.0
    orientation[orientation >= 2.0 * np.pi] = 0.0
    return GradientField(magnitude, orientation)
