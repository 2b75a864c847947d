"""Dataset attribute reports: quality score, blur score, flatness, resolution.

Attributes are read from manifest payloads, never recomputed, so the report
describes exactly what the pipeline decided on. Histograms for multiple
corpora share bin edges per attribute (equal width over the union range),
making counts directly comparable. Output is plot-ready CSV plus a JSON
mirror.
"""

from __future__ import annotations

import csv
import json
import random
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .manifest import read_manifest

ATTRIBUTES = ("iqa_score", "blur_score", "flat_ratio", "resolution")


class ReportError(Exception):
    """The manifest is missing fields the report needs."""


@dataclass(frozen=True)
class AttributeSample:
    image_id: str
    iqa_score: float
    blur_score: float
    flat_ratio: float
    width: int
    height: int

    @property
    def resolution(self) -> int:
        """Pixel count; the scalar stand-in for "resolution diversity"."""
        return self.width * self.height

    def attribute(self, name: str) -> float:
        if name == "resolution":
            return float(self.resolution)
        return float(getattr(self, name))


@dataclass
class AttributeDistribution:
    edges: list[float]  # len(counts) + 1, strictly increasing
    counts: list[int]
    mean: float
    median: float
    std: float  # population


@dataclass
class DistributionReport:
    label: str
    sample_size: int
    attributes: dict[str, AttributeDistribution]


def collect(
    manifest_path: str | Path,
    sample_size: int | None = None,
    seed: int = 0,
) -> list[AttributeSample]:
    """Build attribute samples from every image scored by the iqa stage.

    sample_size of None (or >= population) takes everything; otherwise a
    uniform random sample without replacement drawn with the stated seed.
    Missing payload fields are fatal and name the offending manifest line.
    """
    events, _ = read_manifest(manifest_path)
    per_image: dict[str, dict[str, dict]] = {}
    for ev in events:
        if ev["stage"] in ("blur", "flat", "iqa"):
            per_image.setdefault(ev["image_id"], {})[ev["stage"]] = ev

    samples = []
    for image_id in sorted(per_image):
        stages = per_image[image_id]
        iqa_ev = stages.get("iqa")
        if iqa_ev is None:
            continue
        blur_ev = stages.get("blur")
        flat_ev = stages.get("flat")
        if blur_ev is None or flat_ev is None:
            raise ReportError(
                f"image {image_id} was scored but has no gate events "
                f"(manifest line {iqa_ev['line_no']})"
            )
        try:
            samples.append(AttributeSample(
                image_id=image_id,
                iqa_score=float(iqa_ev["payload"]["score"]),
                blur_score=float(blur_ev["payload"]["score"]),
                flat_ratio=float(flat_ev["payload"]["flat_ratio"]),
                width=int(blur_ev["payload"]["width"]),
                height=int(blur_ev["payload"]["height"]),
            ))
        except (KeyError, TypeError, ValueError) as exc:
            bad = min(blur_ev, flat_ev, iqa_ev, key=lambda e: e["line_no"])
            raise ReportError(
                f"manifest line {bad['line_no']} is missing report fields: {exc}"
            ) from exc

    if sample_size is None or sample_size >= len(samples):
        return samples
    if sample_size < 0:
        raise ValueError("sample_size must be >= 0")
    return random.Random(seed).sample(samples, sample_size)


def summarize(
    corpora: Sequence[tuple[str, Sequence[AttributeSample]]],
    bins: int = 50,
) -> list[DistributionReport]:
    """Histogram + summary stats per attribute per corpus, on shared edges."""
    if bins < 1:
        raise ValueError("bins must be >= 1")
    for label, samples in corpora:
        if not samples:
            raise ValueError(f"corpus {label!r} has no samples")

    edges_by_attr: dict[str, np.ndarray] = {}
    for attr in ATTRIBUTES:
        values = np.concatenate([
            np.array([s.attribute(attr) for s in samples], dtype=np.float64)
            for _, samples in corpora
        ])
        lo, hi = float(values.min()), float(values.max())
        if lo == hi:
            # degenerate attribute: one bin holding every sample
            edges_by_attr[attr] = np.array([lo, lo + 1.0])
        else:
            edges_by_attr[attr] = np.linspace(lo, hi, bins + 1)

    reports = []
    for label, samples in corpora:
        attrs = {}
        for attr in ATTRIBUTES:
            values = np.array([s.attribute(attr) for s in samples], dtype=np.float64)
            counts, edges = np.histogram(values, bins=edges_by_attr[attr])
            attrs[attr] = AttributeDistribution(
                edges=[float(e) for e in edges],
                counts=[int(c) for c in counts],
                mean=float(np.mean(values)),
                median=float(np.median(values)),
                std=float(np.std(values)),
            )
        reports.append(DistributionReport(
            label=label, sample_size=len(samples), attributes=attrs))
    return reports


def write_report(reports: Sequence[DistributionReport], out_dir: str | Path) -> tuple[Path, Path]:
    """Write attributes.csv and attributes.json; returns both paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    csv_path = out / "attributes.csv"
    json_path = out / "attributes.json"

    with open(csv_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["corpus", "attribute", "bin_lo", "bin_hi", "count"])
        for rep in reports:
            for attr in ATTRIBUTES:
                dist = rep.attributes[attr]
                for i, count in enumerate(dist.counts):
                    writer.writerow([rep.label, attr,
                                     repr(dist.edges[i]), repr(dist.edges[i + 1]),
                                     count])

    payload = {
        rep.label: {
            "sample_size": rep.sample_size,
            "attributes": {
                attr: {
                    "edges": dist.edges,
                    "counts": dist.counts,
                    "mean": dist.mean,
                    "median": dist.median,
                    "std": dist.std,
                }
                for attr, dist in rep.attributes.items()
            },
        }
        for rep in reports
    }
    json_path.write_text(json.dumps(payload, indent=2) + "\n", encoding="utf-8")
    return csv_path, json_path
