"""Seeded synthesis of degraded (LQ) counterparts for retained HQ images.

The chain is a simplified second-order recipe in the Real-ESRGAN family:
blur -> random resize -> noise -> JPEG, applied twice with a milder second
round, then a resize back to the original resolution and a final JPEG. The
parameter ranges here are explicit configuration following the shape of that
recipe, not values taken from any particular implementation.

Every random draw comes from a generator seeded per (image, epoch), so pair
synthesis is reproducible regardless of worker scheduling. Each applied op is
logged with its sampled parameters (noise ops log their own sub-seed), and
replaying the log reproduces the LQ image byte for byte.
"""

from __future__ import annotations

import logging
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from PIL import Image
from scipy.ndimage import gaussian_filter

from .hashing import fnv1a64
from .imagecore import DecodeError, ImageBuffer, decode, encode_jpeg, encode_png, from_array

log = logging.getLogger("curate.degrade")

_PIL_FILTERS = {
    "nearest": Image.NEAREST,
    "bilinear": Image.BILINEAR,
    "bicubic": Image.BICUBIC,
    "area": Image.BOX,
}
RESIZE_MODES = tuple(sorted(_PIL_FILTERS))


class DegradeError(Exception):
    """A sampled intermediate dimension violated the configured floor."""


@dataclass(frozen=True)
class StageRanges:
    """Sampling ranges for one degradation order."""

    blur_prob: float
    blur_sigma: tuple[float, float]
    resize_scale: tuple[float, float]
    resize_modes: tuple[str, ...]
    gauss_noise_sigma: tuple[float, float]
    poisson_prob: float
    jpeg_quality: tuple[int, int]

    def __post_init__(self):
        for name in ("blur_sigma", "resize_scale", "gauss_noise_sigma", "jpeg_quality"):
            lo, hi = getattr(self, name)
            if lo > hi:
                raise ValueError(f"{name}: require lo <= hi, got ({lo}, {hi})")
        if not 0.0 <= self.blur_prob <= 1.0:
            raise ValueError("blur_prob must be in [0, 1]")
        if not 0.0 <= self.poisson_prob <= 1.0:
            raise ValueError("poisson_prob must be in [0, 1]")
        if not self.resize_modes:
            raise ValueError("resize_modes must be non-empty")
        for m in self.resize_modes:
            if m not in _PIL_FILTERS:
                raise ValueError(f"unknown resize mode {m!r}")
        qlo, qhi = self.jpeg_quality
        if qlo < 1 or qhi > 100:
            raise ValueError("jpeg_quality must be within [1, 100]")


def default_first_stage() -> StageRanges:
    return StageRanges(
        blur_prob=1.0,
        blur_sigma=(0.2, 3.0),
        resize_scale=(0.15, 1.5),
        resize_modes=RESIZE_MODES,
        gauss_noise_sigma=(1.0, 30.0),
        poisson_prob=0.4,
        jpeg_quality=(30, 95),
    )


def default_second_stage() -> StageRanges:
    return StageRanges(
        blur_prob=0.8,
        blur_sigma=(0.2, 1.5),
        resize_scale=(0.3, 1.2),
        resize_modes=RESIZE_MODES,
        gauss_noise_sigma=(1.0, 25.0),
        poisson_prob=0.4,
        jpeg_quality=(30, 95),
    )


@dataclass(frozen=True)
class DegradationConfig:
    epochs: int = 4
    global_seed: int = 0
    first: StageRanges = field(default_factory=default_first_stage)
    second: StageRanges = field(default_factory=default_second_stage)
    lq_format: str = "png"  # "png" or "jpg"; jpg stores LQ at quality 95
    min_dimension: int = 16

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.lq_format not in ("png", "jpg"):
            raise ValueError("lq_format must be png or jpg")

    def to_dict(self) -> dict:
        def ranges(r: StageRanges) -> dict:
            return {
                "blur_prob": r.blur_prob,
                "blur_sigma": list(r.blur_sigma),
                "resize_scale": list(r.resize_scale),
                "resize_modes": list(r.resize_modes),
                "gauss_noise_sigma": list(r.gauss_noise_sigma),
                "poisson_prob": r.poisson_prob,
                "jpeg_quality": list(r.jpeg_quality),
            }

        return {
            "epochs": self.epochs,
            "global_seed": self.global_seed,
            "first": ranges(self.first),
            "second": ranges(self.second),
            "lq_format": self.lq_format,
            "min_dimension": self.min_dimension,
        }


@dataclass(frozen=True)
class PairRecord:
    """One synthesized pair. Paths are relative to the output root."""

    image_id: str
    epoch: int
    derived_seed: int
    hq_path: str
    lq_path: str
    applied_ops: tuple[dict, ...]


def derive_seed(global_seed: int, image_id: str, epoch: int) -> int:
    """FNV-1a 64 over "global_seed|image_id|epoch", decimal fields, UTF-8."""
    return fnv1a64(f"{global_seed}|{image_id}|{epoch}".encode("utf-8"))


def _resize_float(arr: np.ndarray, width: int, height: int, mode: str) -> np.ndarray:
    """Per-channel float32 resample via PIL; identity when dims are unchanged."""
    h, w = arr.shape[:2]
    if (w, h) == (width, height):
        return arr
    filt = _PIL_FILTERS[mode]
    out = np.empty((height, width, arr.shape[2]), dtype=np.float64)
    for c in range(arr.shape[2]):
        plane = Image.fromarray(arr[:, :, c].astype(np.float32))
        out[:, :, c] = np.asarray(plane.resize((width, height), filt), dtype=np.float64)
    return np.clip(out, 0.0, 255.0)


def _jpeg_roundtrip(arr: np.ndarray, quality: int) -> np.ndarray:
    buf = from_array(np.clip(np.round(arr), 0, 255).astype(np.uint8))
    return decode(encode_jpeg(buf, quality)).samples.astype(np.float64)


def apply_op(arr: np.ndarray, op: dict) -> np.ndarray:
    """Apply one logged operation. Pure function of (pixels, op params)."""
    name = op["op"]
    if name == "gaussian_blur":
        sigma = op["sigma"]
        if sigma > 0:
            arr = gaussian_filter(arr, sigma=(sigma, sigma, 0), mode="nearest")
        return np.clip(arr, 0.0, 255.0)
    if name == "resize":
        return _resize_float(arr, op["width"], op["height"], op["mode"])
    if name == "gaussian_noise":
        rng = np.random.Generator(np.random.PCG64(op["noise_seed"]))
        noisy = arr + rng.standard_normal(arr.shape) * op["sigma"]
        return np.clip(noisy, 0.0, 255.0)
    if name == "poisson_noise":
        # signal-dependent Gaussian stand-in for Poisson shot noise:
        # per-pixel sigma = sigma * sqrt(I/255)
        rng = np.random.Generator(np.random.PCG64(op["noise_seed"]))
        sigma_map = op["sigma"] * np.sqrt(np.clip(arr, 0.0, 255.0) / 255.0)
        noisy = arr + rng.standard_normal(arr.shape) * sigma_map
        return np.clip(noisy, 0.0, 255.0)
    if name == "jpeg":
        return _jpeg_roundtrip(arr, op["quality"])
    raise ValueError(f"unknown op {name!r}")


def _draw_mode(rng: np.random.Generator, modes: tuple[str, ...]) -> str:
    return modes[int(rng.integers(0, len(modes)))]


def _sample_stage(
    arr: np.ndarray,
    ranges: StageRanges,
    rng: np.random.Generator,
    ops: list[dict],
    orig_w: int,
    orig_h: int,
    min_dim: int,
    with_jpeg: bool,
) -> np.ndarray:
    if rng.random() < ranges.blur_prob:
        op = {"op": "gaussian_blur", "sigma": float(rng.uniform(*ranges.blur_sigma))}
        arr = apply_op(arr, op)
        ops.append(op)

    scale = float(rng.uniform(*ranges.resize_scale))
    mode = _draw_mode(rng, ranges.resize_modes)
    # targets are relative to the original dimensions, so the two orders
    # do not compound into degenerate sizes
    width, height = round(orig_w * scale), round(orig_h * scale)
    if width < min_dim or height < min_dim:
        raise DegradeError(
            f"sampled resize {width}x{height} below the {min_dim}px floor "
            f"(scale {scale:.4f} on {orig_w}x{orig_h}); narrow resize_scale"
        )
    op = {"op": "resize", "width": width, "height": height, "mode": mode, "scale": scale}
    arr = apply_op(arr, op)
    ops.append(op)

    kind = "poisson_noise" if rng.random() < ranges.poisson_prob else "gaussian_noise"
    op = {
        "op": kind,
        "sigma": float(rng.uniform(*ranges.gauss_noise_sigma)),
        "noise_seed": int(rng.integers(0, 2**63)),
    }
    arr = apply_op(arr, op)
    ops.append(op)

    if with_jpeg:
        op = {"op": "jpeg", "quality": int(rng.integers(ranges.jpeg_quality[0], ranges.jpeg_quality[1] + 1))}
        arr = apply_op(arr, op)
        ops.append(op)
    return arr


def degrade_once(
    hq: ImageBuffer, cfg: DegradationConfig, seed: int
) -> tuple[ImageBuffer, list[dict]]:
    """Run the full two-order chain once; returns (lq, applied_ops).

    The LQ image always has the HQ dimensions. The second order ends with the
    resize back to the original resolution and the final JPEG round-trip, so
    a fully disabled config still applies exactly two JPEG passes.
    """
    rng = np.random.Generator(np.random.PCG64(seed))
    orig_w, orig_h = hq.width, hq.height
    arr = hq.samples.astype(np.float64)
    ops: list[dict] = []

    arr = _sample_stage(arr, cfg.first, rng, ops, orig_w, orig_h, cfg.min_dimension, with_jpeg=True)
    arr = _sample_stage(arr, cfg.second, rng, ops, orig_w, orig_h, cfg.min_dimension, with_jpeg=False)

    op = {"op": "resize", "width": orig_w, "height": orig_h,
          "mode": _draw_mode(rng, cfg.second.resize_modes), "scale": 1.0}
    arr = apply_op(arr, op)
    ops.append(op)
    op = {"op": "jpeg", "quality": int(rng.integers(cfg.second.jpeg_quality[0], cfg.second.jpeg_quality[1] + 1))}
    arr = apply_op(arr, op)
    ops.append(op)

    lq = from_array(np.clip(np.round(arr), 0, 255).astype(np.uint8))
    return lq, ops


def replay_ops(hq: ImageBuffer, ops: Sequence[dict]) -> ImageBuffer:
    """Re-run a logged op sequence; bit-identical to the original LQ."""
    arr = hq.samples.astype(np.float64)
    for op in ops:
        arr = apply_op(arr, op)
    return from_array(np.clip(np.round(arr), 0, 255).astype(np.uint8))


def hq_file(out_root: str | Path, image_id: str) -> Path:
    return Path(out_root) / "hq" / f"{image_id}.png"


def lq_file(out_root: str | Path, image_id: str, epoch: int, fmt: str = "png") -> Path:
    return Path(out_root) / "lq" / f"{image_id}_e{epoch}.{fmt}"


def _write_atomic(path: Path, data: bytes) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + f".tmp{os.getpid()}")
    tmp.write_bytes(data)
    os.replace(tmp, path)


def synthesize_image_pairs(task: tuple) -> dict:
    """Worker task: produce the requested epochs for one image.

    task = (image_id, src_path, epochs, cfg, out_root). Returns a result dict;
    never raises, so one bad image cannot abort a corpus run.
    """
    image_id, src_path, epochs, cfg, out_root = task
    try:
        with open(src_path, "rb") as fh:
            hq = decode(fh.read())
    except (DecodeError, OSError) as exc:
        return {"image_id": image_id, "error": f"decode: {exc}", "epochs": []}

    hq_path = hq_file(out_root, image_id)
    try:
        if not hq_path.exists():
            _write_atomic(hq_path, encode_png(hq))
    except OSError as exc:
        return {"image_id": image_id, "error": f"write hq: {exc}", "epochs": []}

    # paths in results are relative to out_root, keeping manifests portable
    results = []
    for epoch in epochs:
        seed = derive_seed(cfg.global_seed, image_id, epoch)
        entry = {"epoch": epoch, "derived_seed": seed}
        try:
            lq, ops = degrade_once(hq, cfg, seed)
            lq_path = lq_file(out_root, image_id, epoch, cfg.lq_format)
            if cfg.lq_format == "jpg":
                _write_atomic(lq_path, encode_jpeg(lq, 95))
            else:
                _write_atomic(lq_path, encode_png(lq))
            entry.update(lq_path=lq_path.relative_to(out_root).as_posix(),
                         applied_ops=ops)
        except (DegradeError, OSError) as exc:
            entry["error"] = str(exc)
        results.append(entry)
    return {"image_id": image_id,
            "hq_path": hq_path.relative_to(out_root).as_posix(),
            "epochs": results}


def generate_pairs(
    retained: Sequence[tuple[str, str]],
    cfg: DegradationConfig,
    out_root: str | Path,
    workers: int = 1,
    on_record: Callable[[PairRecord], None] | None = None,
) -> list[PairRecord]:
    """Synthesize cfg.epochs pairs per retained (image_id, path).

    Per-image failures are logged and skipped. Emits records in (image_id,
    epoch) order; `on_record` fires per record as results stream in.
    """
    from concurrent.futures import ProcessPoolExecutor

    tasks = [
        (image_id, path, tuple(range(cfg.epochs)), cfg, str(out_root))
        for image_id, path in sorted(retained)
    ]
    records: list[PairRecord] = []

    def consume(result: dict) -> None:
        if "error" in result and not result["epochs"]:
            log.warning("degrade skipped %s: %s", result["image_id"], result["error"])
            return
        for entry in result["epochs"]:
            if "error" in entry:
                log.warning("degrade failed %s epoch %d: %s",
                            result["image_id"], entry["epoch"], entry["error"])
                continue
            rec = PairRecord(
                image_id=result["image_id"],
                epoch=entry["epoch"],
                derived_seed=entry["derived_seed"],
                hq_path=result["hq_path"],
                lq_path=entry["lq_path"],
                applied_ops=tuple(entry["applied_ops"]),
            )
            records.append(rec)
            if on_record is not None:
                on_record(rec)

    if workers > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            for result in pool.map(synthesize_image_pairs, tasks):
                consume(result)
    else:
        for t in tasks:
            consume(synthesize_image_pairs(t))
    return records
