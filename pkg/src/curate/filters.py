"""Blur gate and flat-region gate.

Blur screening keeps images whose Laplacian-response variance sits inside a
band: too low means defocus, extremely high means sensor noise. Flat-region
screening tiles the image into patches, scores each patch by the variance of
its Sobel gradient magnitude, and discards images dominated by textureless
patches.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .imagecore import (
    GrayImage,
    LAPLACIAN_KERNEL,
    SOBEL_X_KERNEL,
    SOBEL_Y_KERNEL,
    ScalarField,
    convolve3x3,
    population_variance,
)

DEFAULT_BLUR_LO = 150.0
DEFAULT_BLUR_HI = 8000.0
DEFAULT_PATCH_SIZE = 240
DEFAULT_FLAT_THRESHOLD = 800.0
DEFAULT_FLAT_RATIO_LIMIT = 0.5


@dataclass(frozen=True)
class FilterThresholds:
    blur_lo: float = DEFAULT_BLUR_LO
    blur_hi: float = DEFAULT_BLUR_HI
    patch_size: int = DEFAULT_PATCH_SIZE
    flat_threshold: float = DEFAULT_FLAT_THRESHOLD
    flat_ratio_limit: float = DEFAULT_FLAT_RATIO_LIMIT

    def __post_init__(self):
        if not 0 <= self.blur_lo < self.blur_hi:
            raise ValueError("require 0 <= blur_lo < blur_hi")
        if self.patch_size < 1:
            raise ValueError("patch_size must be >= 1")
        if self.flat_threshold < 0:
            raise ValueError("flat_threshold must be >= 0")
        if not 0.0 <= self.flat_ratio_limit <= 1.0:
            raise ValueError("flat_ratio_limit must be in [0, 1]")


@dataclass(frozen=True)
class BlurResult:
    score: float
    passed: bool


@dataclass(frozen=True)
class FlatResult:
    patch_scores: tuple[float, ...]
    flat_count: int
    patch_count: int
    flat_ratio: float
    passed: bool


def blur_score(g: GrayImage) -> float:
    """Variance of the 3x3 Laplacian response."""
    return population_variance(convolve3x3(g, LAPLACIAN_KERNEL))


def blur_gate(g: GrayImage, t: FilterThresholds) -> BlurResult:
    """Accept iff blur_lo <= score <= blur_hi (both bounds inclusive)."""
    score = blur_score(g)
    return BlurResult(score=score, passed=t.blur_lo <= score <= t.blur_hi)


def patch_grid(g: GrayImage, patch_size: int) -> list[GrayImage]:
    """Non-overlapping patch tiling, row-major from the top-left corner.

    Partial tiles at the right/bottom edges are dropped. An image smaller
    than patch_size in either dimension becomes a single whole-image patch,
    so every image still receives a flatness decision.
    """
    if g.height < patch_size or g.width < patch_size:
        return [g]
    rows = g.height // patch_size
    cols = g.width // patch_size
    patches = []
    for r in range(rows):
        for c in range(cols):
            view = g.intensities[r * patch_size:(r + 1) * patch_size,
                                 c * patch_size:(c + 1) * patch_size]
            patches.append(GrayImage(width=patch_size, height=patch_size,
                                     intensities=view))
    return patches


def sobel_magnitude(g: GrayImage) -> ScalarField:
    """sqrt(Gx^2 + Gy^2) with standard unnormalized 3x3 Sobel kernels.

    Borders replicate; a patch never reads pixels from its neighbors, which
    keeps patch scores independent of the surrounding image.
    """
    gx = convolve3x3(g, SOBEL_X_KERNEL).values
    gy = convolve3x3(g, SOBEL_Y_KERNEL).values
    return ScalarField(width=g.width, height=g.height,
                       values=np.sqrt(gx * gx + gy * gy))


def flat_patch_score(patch: GrayImage) -> float:
    """Variance of the Sobel gradient magnitude over one patch."""
    return population_variance(sobel_magnitude(patch))


def flat_gate(g: GrayImage, t: FilterThresholds) -> FlatResult:
    """A patch is flat iff its score < flat_threshold (strict); the image
    fails iff flat_ratio > flat_ratio_limit (strict "more than")."""
    scores = tuple(flat_patch_score(p) for p in patch_grid(g, t.patch_size))
    flat_count = sum(1 for s in scores if s < t.flat_threshold)
    ratio = flat_count / len(scores)
    return FlatResult(
        patch_scores=scores,
        flat_count=flat_count,
        patch_count=len(scores),
        flat_ratio=ratio,
        passed=ratio <= t.flat_ratio_limit,
    )
