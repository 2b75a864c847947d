"""Perceptual-quality scoring and top-fraction retention.

Scoring goes through a pluggable backend: an external process speaking a
newline-delimited JSON protocol (the intended home for a neural no-reference
metric), or a builtin sharpness-energy proxy that keeps the pipeline fully
offline. Retention is count-based top-k over the scored survivors.
"""

from __future__ import annotations

import json
import logging
import math
import shlex
import subprocess
import threading
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from fractions import Fraction
from typing import Sequence

import numpy as np

from .filters import blur_score, sobel_magnitude
from .imagecore import DecodeError, decode, to_grayscale

log = logging.getLogger("curate.iqa")

BACKEND_KINDS = ("builtin-proxy", "external-process")


class ScorerLaunchError(Exception):
    """The external scorer command could not be started."""


class ScorerProtocolError(Exception):
    """The external scorer violated the wire protocol."""


@dataclass(frozen=True)
class ScoreRecord:
    image_id: str
    score: float
    retained: bool = False


@dataclass(frozen=True)
class ScorerBackend:
    kind: str = "builtin-proxy"
    command: str = ""  # external-process only; parsed with shlex

    def __post_init__(self):
        if self.kind not in BACKEND_KINDS:
            raise ValueError(f"unknown backend kind {self.kind!r}")
        if self.kind == "external-process" and not self.command.strip():
            raise ValueError("external-process backend requires a command")

    @property
    def label(self) -> str:
        if self.kind == "external-process":
            return f"external:{self.command}"
        return "builtin-proxy"


def builtin_proxy_score(g) -> float:
    """Deterministic sharpness-energy proxy: log1p(blur score) x mean Sobel
    magnitude / 255.

    This is NOT a perceptual metric and is not comparable with scores from
    any external backend; it exists so the pipeline runs with no external
    model. Monotone in edge energy: constant images score 0, blurring a
    textured image lowers the score.
    """
    energy = float(np.mean(sobel_magnitude(g).values)) / 255.0
    return math.log1p(blur_score(g)) * energy


def _proxy_score_path(item: tuple[str, str]) -> tuple[str, float]:
    image_id, path = item
    with open(path, "rb") as fh:
        img = decode(fh.read())
    return image_id, builtin_proxy_score(to_grayscale(img))


def score_corpus(
    items: Sequence[tuple[str, str]],
    backend: ScorerBackend,
    workers: int = 1,
) -> list[ScoreRecord]:
    """Score images, one ScoreRecord per (image_id, path), in input order.

    The external backend receives every request up front and may answer out
    of order; responses are matched by id. Missing, duplicate, or non-finite
    scores raise ScorerProtocolError naming the offending line. The builtin
    backend decodes and scores locally (optionally across worker processes).
    """
    if not items:
        return []
    ids = [i for i, _ in items]
    if len(set(ids)) != len(ids):
        raise ValueError("duplicate image ids in scoring request")
    if backend.kind == "builtin-proxy":
        scores = _score_builtin(items, workers)
    else:
        scores = _score_external(items, backend.command)
    return [ScoreRecord(image_id=i, score=scores[i]) for i in ids]


def _score_builtin(items: Sequence[tuple[str, str]], workers: int) -> dict[str, float]:
    try:
        if workers > 1 and len(items) > 1:
            with ProcessPoolExecutor(max_workers=workers) as pool:
                chunk = max(1, len(items) // (workers * 4))
                results = list(pool.map(_proxy_score_path, items, chunksize=chunk))
        else:
            results = [_proxy_score_path(it) for it in items]
    except (DecodeError, OSError) as exc:
        raise ScorerProtocolError(f"builtin proxy could not score an image: {exc}") from exc
    return dict(results)


def _score_external(items: Sequence[tuple[str, str]], command: str) -> dict[str, float]:
    argv = shlex.split(command)
    if not argv:
        raise ScorerLaunchError("empty scorer command")
    try:
        proc = subprocess.Popen(
            argv,
            stdin=subprocess.PIPE,
            stdout=subprocess.PIPE,
            stderr=subprocess.PIPE,
            text=True,
            encoding="utf-8",
        )
    except OSError as exc:
        raise ScorerLaunchError(f"cannot launch scorer {argv[0]!r}: {exc}") from exc

    def _feed():
        try:
            for image_id, path in items:
                proc.stdin.write(json.dumps({"id": image_id, "path": path}) + "\n")
            proc.stdin.close()
        except (BrokenPipeError, OSError):
            pass  # scorer died; the read loop reports the real error

    def _drain_stderr():
        for line in proc.stderr:
            log.warning("scorer stderr: %s", line.rstrip("\n"))

    feeder = threading.Thread(target=_feed, daemon=True)
    drainer = threading.Thread(target=_drain_stderr, daemon=True)
    feeder.start()
    drainer.start()

    expected = {i for i, _ in items}
    scores: dict[str, float] = {}
    error = None
    for line in proc.stdout:
        stripped = line.strip()
        if not stripped:
            continue
        try:
            msg = json.loads(stripped)
            image_id = msg["id"]
            score = msg["score"]
        except (json.JSONDecodeError, KeyError, TypeError):
            error = f"malformed scorer response line: {stripped!r}"
            break
        if not isinstance(image_id, str) or image_id not in expected:
            error = f"scorer answered unknown id in line: {stripped!r}"
            break
        if image_id in scores:
            error = f"scorer answered id {image_id!r} twice, line: {stripped!r}"
            break
        if not isinstance(score, (int, float)) or isinstance(score, bool) or not math.isfinite(score):
            error = f"non-finite or non-numeric score in line: {stripped!r}"
            break
        scores[image_id] = float(score)

    if error is not None:
        proc.kill()
    proc.wait()
    feeder.join(timeout=10)
    drainer.join(timeout=10)

    if error is not None:
        raise ScorerProtocolError(error)
    if proc.returncode != 0:
        raise ScorerProtocolError(f"scorer exited with status {proc.returncode}")
    missing = sorted(expected - scores.keys())
    if missing:
        raise ScorerProtocolError(f"scorer never answered ids: {missing[:10]}")
    return scores


def retention_count(n: int, fraction: float) -> int:
    """ceil(fraction * n) in exact arithmetic.

    The fraction arrives as a float; Fraction(str(...)) recovers the decimal
    the user wrote, so 0.2 means exactly 1/5 (float 0.2 * 55 would round up
    to 12 instead of the intended 11).
    """
    if n <= 0:
        return 0
    frac = Fraction(str(fraction))
    if not 0 < frac <= 1:
        raise ValueError("fraction must be in (0, 1]")
    return int(math.ceil(frac * n))


def retain_top_fraction(
    records: Sequence[ScoreRecord], fraction: float = 0.2
) -> list[ScoreRecord]:
    """Mark the ceil(fraction x N) highest-scoring records retained.

    Ties break by ascending image_id, making the retained set a deterministic
    function of the (id, score) multiset: independent of input order and of
    any strictly increasing rescoring. Returns new records in input order.
    """
    k = retention_count(len(records), fraction)
    ranked = sorted(records, key=lambda r: (-r.score, r.image_id))
    keep = {r.image_id for r in ranked[:k]}
    return [replace(r, retained=r.image_id in keep) for r in records]
