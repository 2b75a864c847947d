"""Decoding, grayscale conversion, 3x3 convolution, and population statistics.

Everything downstream (blur gate, flat gate, quality proxy) is built on the
four operations in this module. All pixel math happens on the 0-255 intensity
scale in float64; the screening thresholds are only meaningful on that scale.
"""

from __future__ import annotations

import io
from dataclasses import dataclass

import numpy as np
from PIL import Image, UnidentifiedImageError


class DecodeError(Exception):
    """The byte stream is not a decodable image."""


# 3x3 kernels used by the gates. convolve3x3 applies kernels as a sliding
# dot product (correlation orientation, the cv2 convention); for Sobel this
# only flips the sign of the response field, which the magnitude discards.
LAPLACIAN_KERNEL = np.array([[0.0, 1.0, 0.0],
                             [1.0, -4.0, 1.0],
                             [0.0, 1.0, 0.0]])
SOBEL_X_KERNEL = np.array([[-1.0, 0.0, 1.0],
                           [-2.0, 0.0, 2.0],
                           [-1.0, 0.0, 1.0]])
SOBEL_Y_KERNEL = SOBEL_X_KERNEL.T.copy()


@dataclass(frozen=True, eq=False)
class ImageBuffer:
    """Decoded 8-bit image. `samples` is uint8, shape (height, width, channels)."""

    width: int
    height: int
    channels: int
    samples: np.ndarray

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise ValueError("image dimensions must be >= 1")
        if self.channels not in (1, 3):
            raise ValueError("channels must be 1 or 3")
        if self.samples.dtype != np.uint8:
            raise ValueError("samples must be uint8")
        if self.samples.shape != (self.height, self.width, self.channels):
            raise ValueError(
                f"samples shape {self.samples.shape} != "
                f"{(self.height, self.width, self.channels)}"
            )


@dataclass(frozen=True, eq=False)
class GrayImage:
    """Single-channel float view of an image, values on the 0-255 scale."""

    width: int
    height: int
    intensities: np.ndarray  # float64, shape (height, width)

    def __post_init__(self):
        if self.intensities.shape != (self.height, self.width):
            raise ValueError("intensities shape mismatch")


@dataclass(frozen=True, eq=False)
class ScalarField:
    """A filter response over an image; values are unbounded reals."""

    width: int
    height: int
    values: np.ndarray  # float64, shape (height, width)


def from_array(arr: np.ndarray) -> ImageBuffer:
    """Wrap a uint8 array of shape (h, w), (h, w, 1) or (h, w, 3)."""
    a = np.asarray(arr)
    if a.ndim == 2:
        a = a[:, :, np.newaxis]
    a = np.ascontiguousarray(a, dtype=np.uint8)
    h, w, c = a.shape
    return ImageBuffer(width=w, height=h, channels=c, samples=a)


def decode(data: bytes) -> ImageBuffer:
    """Decode an encoded image file (PNG and JPEG at minimum).

    Alpha channels are dropped, palettes expanded, and 16-bit sources scaled
    to 8-bit. Raises DecodeError on corrupt or unsupported input; callers are
    expected to record the rejection and keep going.
    """
    try:
        img = Image.open(io.BytesIO(data))
        img.load()
    except (UnidentifiedImageError, OSError, SyntaxError, ValueError) as exc:
        raise DecodeError(str(exc)) from exc

    try:
        if img.mode in ("I", "I;16", "I;16B", "I;16L", "I;16N"):
            arr = np.asarray(img, dtype=np.float64)
            arr = np.clip(arr, 0, 65535)
            arr = np.round(arr / 257.0).astype(np.uint8)
            return from_array(arr)
        if img.mode == "F":
            arr = np.clip(np.asarray(img, dtype=np.float64), 0, 255)
            return from_array(np.round(arr).astype(np.uint8))
        if img.mode == "1":
            img = img.convert("L")
        elif img.mode == "LA":
            img = img.convert("L")
        elif img.mode not in ("L", "RGB"):
            # P, PA, RGBA, CMYK, YCbCr, ...
            img = img.convert("RGB")
        return from_array(np.asarray(img))
    except (OSError, ValueError) as exc:
        raise DecodeError(str(exc)) from exc


def encode_png(img: ImageBuffer) -> bytes:
    """Lossless PNG encoding of an ImageBuffer."""
    buf = io.BytesIO()
    _to_pil(img).save(buf, format="PNG")
    return buf.getvalue()


def encode_jpeg(img: ImageBuffer, quality: int) -> bytes:
    buf = io.BytesIO()
    _to_pil(img).save(buf, format="JPEG", quality=int(quality))
    return buf.getvalue()


def _to_pil(img: ImageBuffer) -> Image.Image:
    if img.channels == 1:
        return Image.fromarray(img.samples[:, :, 0])
    return Image.fromarray(img.samples)


def to_grayscale(img: ImageBuffer) -> GrayImage:
    """Luma conversion, Y = 0.299 R + 0.587 G + 0.114 B, unrounded.

    Evaluated as (299R + 587G + 114B) / 1000 so equal-channel pixels map to
    their exact value and the result stays within [0, 255]. Single-channel
    inputs pass through unchanged.
    """
    if img.channels == 1:
        gray = img.samples[:, :, 0].astype(np.float64)
    else:
        s = img.samples.astype(np.float64)
        gray = (299.0 * s[:, :, 0] + 587.0 * s[:, :, 1] + 114.0 * s[:, :, 2]) / 1000.0
    return GrayImage(width=img.width, height=img.height, intensities=gray)


def convolve3x3(g: GrayImage, kernel: np.ndarray) -> ScalarField:
    """Same-size 3x3 sliding dot product with replicate (clamp-to-edge) borders."""
    k = np.asarray(kernel, dtype=np.float64)
    if k.shape != (3, 3):
        raise ValueError("kernel must be 3x3")
    h, w = g.height, g.width
    padded = np.pad(g.intensities, 1, mode="edge")
    out = np.zeros((h, w), dtype=np.float64)
    for dy in range(3):
        for dx in range(3):
            kv = k[dy, dx]
            if kv != 0.0:
                out += kv * padded[dy:dy + h, dx:dx + w]
    return ScalarField(width=w, height=h, values=out)


def population_variance(f: ScalarField) -> float:
    """Population variance, Var = mean(v^2) - mean(v)^2, accumulated in float64.

    Divides by N (not N-1). Tiny negative results from cancellation on
    near-constant fields are clamped to zero.
    """
    v = f.values
    if v.size == 0:
        raise ValueError("field is empty")
    m2 = float(np.mean(v * v, dtype=np.float64))
    m = float(np.mean(v, dtype=np.float64))
    return max(m2 - m * m, 0.0)
