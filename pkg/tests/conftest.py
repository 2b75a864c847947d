"""Shared synthetic-corpus builders.

Four image families with analytically forced gate decisions:
  constant   -> blur score 0, rejected below the band
  noise      -> blur score far above the band (i.i.d. uniform pixels)
  textured   -> smoothed noise, inside the blur band, richly textured
  composite  -> 3 constant quadrants + 1 textured quadrant: passes the blur
                band but 75% of its patches are flat, so the flat gate rejects
Builders self-verify the forced decision at generation time.
"""

from __future__ import annotations

import sys
from pathlib import Path

import numpy as np
import pytest
from PIL import Image
from scipy.ndimage import gaussian_filter

sys.path.insert(0, str(Path(__file__).parent))

from curate.filters import FilterThresholds, blur_gate, flat_gate
from curate.imagecore import from_array, to_grayscale

DEFAULTS = FilterThresholds()


def constant_image(value: int = 128, size: int = 128) -> np.ndarray:
    return np.full((size, size, 3), value, dtype=np.uint8)


def noise_image(rng: np.random.Generator, size: int = 128) -> np.ndarray:
    return rng.integers(0, 256, size=(size, size, 3)).astype(np.uint8)


def textured_image(rng: np.random.Generator, size: int = 128,
                   sigma: float = 1.1) -> np.ndarray:
    base = rng.uniform(0.0, 255.0, size=(size, size))
    sm = gaussian_filter(base, sigma=sigma, mode="nearest")
    sm = (sm - sm.min()) / max(sm.max() - sm.min(), 1e-9) * 255.0
    return np.stack([np.round(sm).astype(np.uint8)] * 3, axis=-1)


def composite_image(rng: np.random.Generator, size: int = 480) -> np.ndarray:
    """3 constant quadrants + 1 textured quadrant (flat ratio 0.75).

    The texture occupies a quarter of the area, which dilutes its Laplacian
    variance into the blur band, so the image passes the blur gate and the
    flat gate must be the one to reject it.
    """
    half = size // 2
    img = np.full((size, size), 128.0)
    base = rng.uniform(0.0, 255.0, size=(half, half))
    sm = gaussian_filter(base, sigma=1.0, mode="nearest")
    sm = (sm - sm.min()) / max(sm.max() - sm.min(), 1e-9)
    img[:half, :half] = sm * 255.0
    img = np.clip(np.round(img), 0, 255).astype(np.uint8)
    return np.stack([img] * 3, axis=-1)


EXPECT_BLUR_REJECT_LOW = "blur_reject_low"
EXPECT_BLUR_REJECT_HIGH = "blur_reject_high"
EXPECT_FLAT_REJECT = "flat_reject"
EXPECT_SURVIVOR = "survivor"


def verify_expectation(arr: np.ndarray, expectation: str,
                       t: FilterThresholds = DEFAULTS) -> None:
    gray = to_grayscale(from_array(arr))
    b = blur_gate(gray, t)
    if expectation == EXPECT_BLUR_REJECT_LOW:
        assert b.score < t.blur_lo, f"forced low-blur image scored {b.score}"
        return
    if expectation == EXPECT_BLUR_REJECT_HIGH:
        assert b.score > t.blur_hi, f"forced noisy image scored {b.score}"
        return
    assert b.passed, f"forced in-band image scored {b.score}"
    f = flat_gate(gray, t)
    if expectation == EXPECT_FLAT_REJECT:
        assert not f.passed and f.flat_ratio >= 0.75, f"flat_ratio {f.flat_ratio}"
    else:
        assert f.passed, f"forced textured image flat_ratio {f.flat_ratio}"


def build_corpus(root: Path, spec: dict[str, int], seed: int = 20240901,
                 verify: bool = True) -> dict[str, str]:
    """Write a corpus per {family: count}; returns {filename: expectation}."""
    rng = np.random.default_rng(seed)
    root.mkdir(parents=True, exist_ok=True)
    expectations: dict[str, str] = {}

    def emit(name: str, arr: np.ndarray, expectation: str) -> None:
        Image.fromarray(arr).save(root / name)
        if verify:
            verify_expectation(arr, expectation)
        expectations[name] = expectation

    for i in range(spec.get("constant", 0)):
        emit(f"constant_{i:03d}.png", constant_image(value=20 + (i * 37) % 216),
             EXPECT_BLUR_REJECT_LOW)
    for i in range(spec.get("noise", 0)):
        emit(f"noise_{i:03d}.png", noise_image(rng), EXPECT_BLUR_REJECT_HIGH)
    for i in range(spec.get("textured", 0)):
        emit(f"textured_{i:03d}.png", textured_image(rng), EXPECT_SURVIVOR)
    for i in range(spec.get("composite", 0)):
        emit(f"composite_{i:03d}.png", composite_image(rng), EXPECT_FLAT_REJECT)
    return expectations


@pytest.fixture(scope="session")
def echo_scorer_cmd() -> str:
    """Command line for the in-repo echo scorer test double."""
    script = Path(__file__).parent / "echo_scorer.py"
    return f"{sys.executable} {script} --score 0.5"


@pytest.fixture()
def small_corpus(tmp_path) -> tuple[Path, dict[str, str]]:
    root = tmp_path / "corpus"
    expectations = build_corpus(
        root, {"constant": 3, "noise": 2, "textured": 5}, seed=11)
    return root, expectations
