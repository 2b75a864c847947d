"""Append-only NDJSON ledger of every image's journey through the pipeline.

One line per (image, stage event). Lines are flushed as written, so a killed
run loses at most a torn final line, which resume drops with a warning. A
completed run ends with a terminal summary line carrying the stage counts.
"""

from __future__ import annotations

import json
import logging
import os
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Any

log = logging.getLogger("curate.manifest")

STAGES = ("scan", "blur", "flat", "iqa", "select", "degrade")
OUTCOMES = ("pass", "reject", "error")
SUMMARY_STAGE = "summary"


class ManifestError(Exception):
    """The manifest cannot be parsed or does not match the current config."""


@dataclass(frozen=True)
class ManifestEvent:
    image_id: str
    path: str
    stage: str
    outcome: str
    reason: str
    payload: dict
    line_no: int


class ManifestWriter:
    """Serialized appender; the single mutable endpoint of a pipeline run."""

    def __init__(self, path: str | Path, tool_version: str, config_hash: str):
        self.path = Path(path)
        self.tool_version = tool_version
        self.config_hash = config_hash
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self._fh = open(self.path, "a", encoding="utf-8")

    def append_event(
        self,
        image_id: str,
        path: str,
        stage: str,
        outcome: str,
        reason: str = "",
        payload: dict | None = None,
    ) -> None:
        if stage not in STAGES:
            raise ValueError(f"unknown stage {stage!r}")
        if outcome not in OUTCOMES:
            raise ValueError(f"unknown outcome {outcome!r}")
        line = {
            "ts": time.time(),
            "image_id": image_id,
            "path": path,
            "stage": stage,
            "outcome": outcome,
            "reason": reason,
            "payload": payload or {},
            "tool_version": self.tool_version,
            "config_hash": self.config_hash,
        }
        self._write(line)

    def append_summary(self, stats: dict) -> None:
        self._write({
            "ts": time.time(),
            "stage": SUMMARY_STAGE,
            "stats": stats,
            "tool_version": self.tool_version,
            "config_hash": self.config_hash,
        })

    def _write(self, line: dict) -> None:
        self._fh.write(json.dumps(line, sort_keys=True) + "\n")
        self._fh.flush()

    def fsync(self) -> None:
        os.fsync(self._fh.fileno())

    def close(self) -> None:
        if not self._fh.closed:
            self._fh.flush()
            os.fsync(self._fh.fileno())
            self._fh.close()

    def __enter__(self) -> "ManifestWriter":
        return self

    def __exit__(self, *exc) -> None:
        self.close()


def repair_torn_tail(path: str | Path) -> bool:
    """Truncate a torn final line left by a crash; returns True if repaired.

    Only resume calls this (it owns the file before appending); readers keep
    their drop-with-warning behavior and never rewrite.
    """
    path = Path(path)
    raw = path.read_bytes()
    if not raw:
        return False
    if raw.endswith(b"\n"):
        body, _, last = raw[:-1].rpartition(b"\n")
        keep = len(body) + 1 if body else 0
    else:
        body, _, last = raw.rpartition(b"\n")
        keep = len(body) + 1 if body else 0
    try:
        obj = json.loads(last.decode("utf-8"))
        complete = raw.endswith(b"\n") and isinstance(obj, dict) and "stage" in obj
    except (UnicodeDecodeError, ValueError):
        complete = False
    if complete:
        return False
    log.warning("truncating torn final manifest line (%d bytes)", len(raw) - keep)
    with open(path, "r+b") as fh:
        fh.truncate(keep)
    return True


def read_manifest(path: str | Path) -> tuple[list[dict], dict | None]:
    """Parse a manifest into (event lines, last summary or None).

    A torn final line (crash artifact) is dropped with a warning; any other
    unparsable line is fatal. Raises ManifestError.
    """
    path = Path(path)
    try:
        raw = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ManifestError(f"cannot read manifest {path}: {exc}") from exc

    lines = raw.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    events: list[dict] = []
    summary: dict | None = None
    last_idx = len(lines) - 1
    for idx, text in enumerate(lines):
        try:
            obj = json.loads(text)
            if not isinstance(obj, dict) or "stage" not in obj:
                raise ValueError("not a manifest line")
        except ValueError as exc:
            if idx == last_idx:
                log.warning("dropping torn final manifest line %d: %s", idx + 1, exc)
                continue
            raise ManifestError(f"unparsable manifest line {idx + 1}: {text[:120]!r}") from exc
        obj["line_no"] = idx + 1
        if obj["stage"] == SUMMARY_STAGE:
            summary = obj
        else:
            events.append(obj)
    return events, summary


def check_config_hash(events: list[dict], summary: dict | None, expected: str) -> None:
    for obj in events + ([summary] if summary else []):
        found = obj.get("config_hash")
        if found != expected:
            raise ManifestError(
                f"config drift: manifest line {obj.get('line_no', '?')} was written "
                f"with config_hash {found}, current config hashes to {expected}"
            )


def latest_events(events: list[dict]) -> dict[tuple, dict]:
    """Last event per (image_id, stage[, epoch for degrade]) wins."""
    latest: dict[tuple, dict] = {}
    for ev in events:
        stage = ev["stage"]
        if stage == "degrade":
            key: tuple[Any, ...] = (ev["image_id"], stage, ev["payload"].get("epoch"))
        else:
            key = (ev["image_id"], stage)
        latest[key] = ev
    return latest
