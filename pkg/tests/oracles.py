"""Independent reference implementations used only by tests.

These intentionally avoid the library's vectorized code paths: convolution is
a per-pixel nested loop, variance is the two-pass formula with exact
summation, and retention counts come from integer arithmetic. Slow and
obviously correct.
"""

from __future__ import annotations

import math
from fractions import Fraction

import numpy as np

FNV_OFFSET = 0xCBF29CE484222325
FNV_PRIME = 0x100000001B3


def fnv1a64_reference(data: bytes) -> int:
    h = FNV_OFFSET
    for b in data:
        h = ((h ^ b) * FNV_PRIME) % 2**64
    return h


def naive_convolve3x3(image: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    """O(n*k^2) sliding dot product with replicate borders."""
    h, w = image.shape
    out = np.zeros((h, w), dtype=np.float64)
    for y in range(h):
        for x in range(w):
            acc = 0.0
            for dy in (-1, 0, 1):
                for dx in (-1, 0, 1):
                    yy = min(max(y + dy, 0), h - 1)
                    xx = min(max(x + dx, 0), w - 1)
                    acc += kernel[dy + 1, dx + 1] * image[yy, xx]
            out[y, x] = acc
    return out


def naive_variance(values: np.ndarray) -> float:
    """Two-pass population variance with exact (fsum) accumulation."""
    flat = [float(v) for v in np.asarray(values).ravel()]
    n = len(flat)
    mean = math.fsum(flat) / n
    return math.fsum((v - mean) ** 2 for v in flat) / n


SOBEL_X = np.array([[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]])
SOBEL_Y = SOBEL_X.T.copy()
LAPLACIAN = np.array([[0.0, 1.0, 0.0], [1.0, -4.0, 1.0], [0.0, 1.0, 0.0]])


def naive_blur_score(gray: np.ndarray) -> float:
    return naive_variance(naive_convolve3x3(gray, LAPLACIAN))


def naive_flat_patch_score(patch: np.ndarray) -> float:
    gx = naive_convolve3x3(patch, SOBEL_X)
    gy = naive_convolve3x3(patch, SOBEL_Y)
    return naive_variance(np.sqrt(gx * gx + gy * gy))


def exact_retention_count(n: int, fraction: float) -> int:
    """ceil(fraction * n) over the exact rational the decimal denotes."""
    if n == 0:
        return 0
    frac = Fraction(str(fraction))
    return -((-frac.numerator * n) // frac.denominator)


def brute_force_retained(records: list[tuple[str, float]], fraction: float) -> set[str]:
    """Full sort, worst-first scan: top ceil(f*N) by (score desc, id asc)."""
    k = exact_retention_count(len(records), fraction)
    ordered = sorted(records, key=lambda r: (-r[1], r[0]))
    return {image_id for image_id, _ in ordered[:k]}
