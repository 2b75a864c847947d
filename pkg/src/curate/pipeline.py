"""Orchestration: scan -> blur gate -> flat gate -> scoring -> selection ->
pair synthesis, with parallel workers and a crash-resumable manifest.

Worker tasks are pure functions of their inputs and results are consumed in
deterministic (sorted) order, so outputs and manifests do not depend on the
worker count or scheduling. The manifest is the unit of resumability: the
last event per (image, stage) reconstructs progress, and only missing work
is scheduled.
"""

from __future__ import annotations

import logging
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Sequence

from . import __version__
from .degrade import DegradationConfig, synthesize_image_pairs
from .filters import FilterThresholds, blur_gate, flat_gate
from .hashing import config_fingerprint, fnv1a64_hex
from .imagecore import DecodeError, decode, to_grayscale
from .iqa import (
    ScoreRecord,
    ScorerBackend,
    ScorerLaunchError,
    ScorerProtocolError,
    retain_top_fraction,
    score_corpus,
)
from .manifest import (
    ManifestError,
    ManifestWriter,
    check_config_hash,
    read_manifest,
    repair_torn_tail,
)

log = logging.getLogger("curate.pipeline")

IMAGE_EXTENSIONS = {".png", ".jpg", ".jpeg", ".bmp", ".webp", ".tif", ".tiff"}
MANIFEST_NAME = "manifest.ndjson"

# stop points for the stage subcommands
STOP_SCAN = "scan"
STOP_GATES = "gates"
STOP_IQA = "iqa"
STOP_SELECT = "select"
STOP_FULL = "full"
_STOP_POINTS = (STOP_SCAN, STOP_GATES, STOP_IQA, STOP_SELECT, STOP_FULL)

CRASH_ENV = "CURATE_CRASH_AFTER"


class PipelineError(Exception):
    """Fatal pipeline condition (bad config, config drift, scorer protocol)."""


@dataclass(frozen=True)
class PipelineConfig:
    input_roots: tuple[str, ...]
    output_root: str
    thresholds: FilterThresholds = FilterThresholds()
    backend: ScorerBackend = ScorerBackend()
    degradation: DegradationConfig = field(default_factory=DegradationConfig)
    iqa_fraction: float = 0.2
    worker_count: int = 1
    resume: bool = False
    preapproved_roots: tuple[str, ...] = ()
    # test hook: gate evaluation order; the retained set is order-independent
    gate_order: tuple[str, str] = ("blur", "flat")

    def __post_init__(self):
        if not self.input_roots and not self.preapproved_roots:
            raise ValueError("at least one input root is required")
        if not 0.0 < self.iqa_fraction <= 1.0:
            raise ValueError("iqa_fraction must be in (0, 1]")
        if self.worker_count < 1:
            raise ValueError("worker_count must be >= 1")
        if sorted(self.gate_order) != ["blur", "flat"]:
            raise ValueError("gate_order must be a permutation of (blur, flat)")

    def result_config(self) -> dict:
        """Result-affecting configuration; the input to config_hash.

        worker_count, resume, and the output root are deliberately excluded:
        results are invariant to them, and resuming with a different worker
        count must not look like config drift.
        """
        t = self.thresholds
        return {
            "input_roots": list(self.input_roots),
            "preapproved_roots": list(self.preapproved_roots),
            "thresholds": {
                "blur_lo": t.blur_lo,
                "blur_hi": t.blur_hi,
                "patch_size": t.patch_size,
                "flat_threshold": t.flat_threshold,
                "flat_ratio_limit": t.flat_ratio_limit,
            },
            "backend": {"kind": self.backend.kind, "command": self.backend.command},
            "degradation": self.degradation.to_dict(),
            "iqa_fraction": self.iqa_fraction,
            "gate_order": list(self.gate_order),
        }

    def config_hash(self) -> str:
        return config_fingerprint(self.result_config())


@dataclass
class StageCount:
    input_count: int = 0
    pass_count: int = 0
    reject_count: int = 0
    error_count: int = 0

    def to_dict(self) -> dict:
        return {
            "input": self.input_count,
            "pass": self.pass_count,
            "reject": self.reject_count,
            "error": self.error_count,
        }


@dataclass
class StageStats:
    stages: dict[str, StageCount]
    pairs_written: int = 0
    wall_seconds: dict[str, float] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "stages": {name: sc.to_dict() for name, sc in self.stages.items()},
            "pairs": self.pairs_written,
            "wall_seconds": {k: round(v, 3) for k, v in self.wall_seconds.items()},
        }

    @classmethod
    def from_dict(cls, d: dict) -> "StageStats":
        stages = {
            name: StageCount(
                input_count=sc["input"],
                pass_count=sc["pass"],
                reject_count=sc["reject"],
                error_count=sc["error"],
            )
            for name, sc in d["stages"].items()
        }
        return cls(stages=stages, pairs_written=d["pairs"],
                   wall_seconds=dict(d.get("wall_seconds", {})))


@dataclass(frozen=True)
class ScanEntry:
    image_id: str
    path: str
    preapproved: bool = False


def _enumerate_root(root: str) -> list[tuple[str, str]]:
    """(relpath, abspath) for every image file under root, lexicographic."""
    base = Path(root)
    if not base.is_dir():
        raise PipelineError(f"input root is not a readable directory: {root}")
    found = []
    try:
        for p in base.rglob("*"):
            if p.is_file() and p.suffix.lower() in IMAGE_EXTENSIONS:
                found.append((p.relative_to(base).as_posix(), str(p.resolve())))
    except OSError as exc:
        raise PipelineError(f"cannot enumerate {root}: {exc}") from exc
    found.sort(key=lambda t: t[0])
    return found


def scan_roots(
    roots: Sequence[str], preapproved_roots: Sequence[str] = ()
) -> tuple[list[ScanEntry], list[ScanEntry]]:
    """Deterministic enumeration. Returns (accepted, duplicate_rejects).

    image_id is the FNV-1a 64 hex of the path relative to its root; a second
    occurrence of an id (same relpath under two roots) is rejected.
    """
    accepted: list[ScanEntry] = []
    rejects: list[ScanEntry] = []
    seen: set[str] = set()
    for preapproved, group in ((False, roots), (True, preapproved_roots)):
        for root in group:
            for rel, path in _enumerate_root(root):
                image_id = fnv1a64_hex(rel)
                entry = ScanEntry(image_id=image_id, path=path, preapproved=preapproved)
                if image_id in seen:
                    rejects.append(entry)
                else:
                    seen.add(image_id)
                    accepted.append(entry)
    return accepted, rejects


def scan(roots: Sequence[str]) -> list[tuple[str, str]]:
    """Enumeration as (image_id, path) pairs, duplicates dropped."""
    accepted, _ = scan_roots(roots)
    return [(e.image_id, e.path) for e in accepted]


def _gate_task(task: tuple) -> dict:
    """Worker: decode once, evaluate the needed gates in configured order."""
    image_id, path, needs, order, thresholds, bypass = task
    out: dict = {"image_id": image_id}
    try:
        with open(path, "rb") as fh:
            img = decode(fh.read())
    except (DecodeError, OSError) as exc:
        out["error"] = f"decode: {exc}"
        return out
    gray = to_grayscale(img)
    out["width"], out["height"] = img.width, img.height
    chain_ok = True
    for gate in order:
        if gate in needs:
            if not chain_ok and not bypass:
                break
            if gate == "blur":
                r = blur_gate(gray, thresholds)
                out["blur"] = {"score": r.score, "passed": r.passed}
                ok = r.passed
            else:
                r = flat_gate(gray, thresholds)
                out["flat"] = {
                    "flat_ratio": r.flat_ratio,
                    "flat_count": r.flat_count,
                    "patch_count": r.patch_count,
                    "passed": r.passed,
                }
                ok = r.passed
            chain_ok = chain_ok and (ok or bypass)
        # a gate not in needs already passed in a previous session
    return out


@dataclass
class _CrashHook:
    """Deterministic crash injection for resume tests: CURATE_CRASH_AFTER=
    "<stage>" exits after that stage completes; "<stage>:N" exits after the
    Nth event line of that stage is flushed this session."""

    stage: str
    after_events: int | None

    @classmethod
    def from_env(cls) -> "_CrashHook | None":
        raw = os.environ.get(CRASH_ENV, "").strip()
        if not raw:
            return None
        if ":" in raw:
            stage, _, count = raw.partition(":")
            return cls(stage=stage, after_events=int(count))
        return cls(stage=raw, after_events=None)


class _Engine:
    def __init__(self, cfg: PipelineConfig, stop_after: str = STOP_FULL):
        if stop_after not in _STOP_POINTS:
            raise ValueError(f"unknown stop point {stop_after!r}")
        self.cfg = cfg
        self.stop_after = stop_after
        self.config_hash = cfg.config_hash()
        self.out_root = Path(cfg.output_root)
        self.manifest_path = self.out_root / MANIFEST_NAME
        self.hook = _CrashHook.from_env()
        self._session_counts: dict[str, int] = {}
        self.writer: ManifestWriter | None = None

        # state, reconstructed from the manifest and updated as events append
        self.scan_pass: dict[str, dict] = {}     # image_id -> scan pass event
        self.scan_rejects: list[dict] = []
        self.latest: dict[tuple, dict] = {}      # (id, stage[, epoch]) -> event
        self.wall: dict[str, float] = {}

    # ---- state bookkeeping -------------------------------------------------

    def _ingest(self, ev: dict) -> None:
        stage = ev["stage"]
        if stage == "scan":
            if ev["outcome"] == "pass":
                self.scan_pass.setdefault(ev["image_id"], ev)
            else:
                self.scan_rejects.append(ev)
        elif stage == "degrade":
            self.latest[(ev["image_id"], stage, ev["payload"].get("epoch"))] = ev
        else:
            self.latest[(ev["image_id"], stage)] = ev

    def _append(self, image_id: str, path: str, stage: str, outcome: str,
                reason: str = "", payload: dict | None = None) -> None:
        self.writer.append_event(image_id, path, stage, outcome, reason, payload)
        self._ingest({
            "image_id": image_id, "path": path, "stage": stage,
            "outcome": outcome, "reason": reason, "payload": payload or {},
        })
        n = self._session_counts.get(stage, 0) + 1
        self._session_counts[stage] = n
        if (self.hook is not None and self.hook.stage == stage
                and self.hook.after_events is not None
                and n >= self.hook.after_events):
            self._crash()

    def _stage_done(self, stage: str) -> None:
        self.writer.fsync()
        if (self.hook is not None and self.hook.stage == stage
                and self.hook.after_events is None):
            self._crash()

    def _crash(self) -> None:
        self.writer.fsync()
        log.warning("crash hook fired (%s)", os.environ.get(CRASH_ENV))
        os._exit(70)

    # ---- parallel map ------------------------------------------------------

    def _pmap(self, fn, items: list) -> Iterator:
        workers = self.cfg.worker_count
        if workers <= 1 or len(items) <= 1:
            return map(fn, items)
        chunk = max(1, len(items) // (workers * 4))
        pool = ProcessPoolExecutor(max_workers=workers)

        def gen() -> Iterator:
            with pool:
                yield from pool.map(fn, items, chunksize=chunk)

        return gen()

    # ---- stages ------------------------------------------------------------

    def run(self) -> StageStats:
        cfg = self.cfg
        existing_events: list[dict] = []
        summary = None
        if self.manifest_path.exists():
            if not cfg.resume:
                raise PipelineError(
                    f"manifest already exists at {self.manifest_path}; "
                    "pass resume=True (--resume) or use a fresh output directory"
                )
            try:
                repair_torn_tail(self.manifest_path)
                existing_events, summary = read_manifest(self.manifest_path)
                check_config_hash(existing_events, summary, self.config_hash)
            except ManifestError as exc:
                raise PipelineError(str(exc)) from exc
            for ev in existing_events:
                self._ingest(ev)
        elif cfg.resume and self.stop_after == STOP_FULL:
            log.info("resume requested but no manifest found; starting fresh")

        if summary is not None:
            log.info("manifest already complete; nothing to do")
            return StageStats.from_dict(summary["stats"])

        self.out_root.mkdir(parents=True, exist_ok=True)
        self.writer = ManifestWriter(self.manifest_path, __version__, self.config_hash)
        try:
            self._run_stages()
        finally:
            self.writer.close()
        return self._derive_stats()

    def _run_stages(self) -> None:
        t0 = time.perf_counter()
        self._scan_stage()
        self.wall["scan"] = time.perf_counter() - t0
        if self.stop_after == STOP_SCAN:
            return

        t0 = time.perf_counter()
        self._gates_stage()
        self.wall["gates"] = time.perf_counter() - t0
        if self.stop_after == STOP_GATES:
            return

        t0 = time.perf_counter()
        self._iqa_stage()
        self.wall["iqa"] = time.perf_counter() - t0
        if self.stop_after == STOP_IQA:
            return

        t0 = time.perf_counter()
        self._select_stage()
        self.wall["select"] = time.perf_counter() - t0
        if self.stop_after == STOP_SELECT:
            return

        t0 = time.perf_counter()
        self._degrade_stage()
        self.wall["degrade"] = time.perf_counter() - t0

        self.writer.append_summary(self._derive_stats().to_dict())
        self.writer.fsync()

    def _scan_stage(self) -> None:
        accepted, rejects = scan_roots(self.cfg.input_roots, self.cfg.preapproved_roots)
        known = set(self.scan_pass)
        for entry in accepted:
            if entry.image_id in known:
                continue
            self._append(entry.image_id, entry.path, "scan", "pass",
                         payload={"preapproved": entry.preapproved})
        already_rejected = {(ev["image_id"], ev["path"]) for ev in self.scan_rejects}
        for entry in rejects:
            if (entry.image_id, entry.path) in already_rejected:
                continue
            self._append(entry.image_id, entry.path, "scan", "reject",
                         reason="duplicate_id",
                         payload={"preapproved": entry.preapproved})
        self._stage_done("scan")

    def _images(self) -> list[dict]:
        """Accepted scan events, sorted by image_id."""
        return sorted(self.scan_pass.values(), key=lambda ev: ev["image_id"])

    def _gates_stage(self) -> None:
        gate_a, gate_b = self.cfg.gate_order
        tasks = []
        for ev in self._images():
            image_id = ev["image_id"]
            eva = self.latest.get((image_id, gate_a))
            evb = self.latest.get((image_id, gate_b))
            bypass = bool(ev["payload"].get("preapproved"))
            needs = []
            if eva is None:
                needs.append(gate_a)
            if evb is None and (eva is None or eva["outcome"] == "pass" or bypass):
                needs.append(gate_b)
            if needs:
                tasks.append((image_id, ev["path"], tuple(needs),
                              self.cfg.gate_order, self.cfg.thresholds, bypass))

        second_gate_events: list[tuple] = []
        for task, result in zip(tasks, self._pmap(_gate_task, tasks)):
            image_id, path, needs, order, _, bypass = task
            if "error" in result:
                # decode failure lands on the first gate still owed an event
                self._append(image_id, path, needs[0], "error", reason=result["error"])
                continue
            for gate in order:
                if gate not in needs or gate not in result:
                    continue
                outcome, reason, payload = self._gate_event(gate, result, bypass)
                if gate == needs[0]:
                    self._append(image_id, path, gate, outcome, reason, payload)
                else:
                    second_gate_events.append((image_id, path, gate, outcome, reason, payload))
        self._stage_done(gate_a)
        for args in second_gate_events:
            self._append(*args)
        self._stage_done(gate_b)

    def _gate_event(self, gate: str, result: dict, bypass: bool) -> tuple[str, str, dict]:
        if gate == "blur":
            r = result["blur"]
            payload = {"score": r["score"], "width": result["width"],
                       "height": result["height"]}
            raw_pass = r["passed"]
            reason = "" if raw_pass else (
                "blur_below_lo" if r["score"] < self.cfg.thresholds.blur_lo
                else "blur_above_hi")
        else:
            r = result["flat"]
            payload = {"flat_ratio": r["flat_ratio"], "flat_count": r["flat_count"],
                       "patch_count": r["patch_count"]}
            raw_pass = r["passed"]
            reason = "" if raw_pass else "flat_ratio_above_limit"
        if bypass:
            payload["bypass"] = True
            if not raw_pass:
                return "pass", "preapproved_bypass", payload
            return "pass", "", payload
        return ("pass", "", payload) if raw_pass else ("reject", reason, payload)

    def _survivors(self) -> list[dict]:
        """Scan events of images that passed both gates, sorted by id."""
        _, gate_b = self.cfg.gate_order
        out = []
        for ev in self._images():
            evb = self.latest.get((ev["image_id"], gate_b))
            if evb is not None and evb["outcome"] == "pass":
                out.append(ev)
        return out

    def _iqa_stage(self) -> None:
        survivors = self._survivors()
        missing = [ev for ev in survivors
                   if (ev["image_id"], "iqa") not in self.latest]
        items = [(ev["image_id"], ev["path"]) for ev in missing]
        try:
            records = score_corpus(items, self.cfg.backend,
                                   workers=self.cfg.worker_count)
        except (ScorerProtocolError, ScorerLaunchError) as exc:
            raise PipelineError(f"iqa stage aborted: {exc}") from exc
        path_by_id = {ev["image_id"]: ev["path"] for ev in missing}
        for rec in records:
            self._append(rec.image_id, path_by_id[rec.image_id], "iqa", "pass",
                         payload={"score": rec.score,
                                  "backend": self.cfg.backend.label})
        self._stage_done("iqa")

    def _select_stage(self) -> None:
        survivors = self._survivors()
        if all((ev["image_id"], "select") in self.latest for ev in survivors):
            self._stage_done("select")
            return
        preapproved = {ev["image_id"] for ev in survivors
                       if ev["payload"].get("preapproved")}
        records = []
        for ev in survivors:
            iqa_ev = self.latest[(ev["image_id"], "iqa")]
            records.append(ScoreRecord(image_id=ev["image_id"],
                                       score=iqa_ev["payload"]["score"]))
        normal = [r for r in records if r.image_id not in preapproved]
        marked = {r.image_id: r for r in retain_top_fraction(normal, self.cfg.iqa_fraction)}
        path_by_id = {ev["image_id"]: ev["path"] for ev in survivors}
        for rec in records:
            if rec.image_id in preapproved:
                outcome, reason, retained = "pass", "preapproved", True
            elif marked[rec.image_id].retained:
                outcome, reason, retained = "pass", "", True
            else:
                outcome, reason, retained = "reject", "below_cutoff", False
            self._append(rec.image_id, path_by_id[rec.image_id], "select", outcome,
                         reason, payload={"score": rec.score, "retained": retained})
        self._stage_done("select")

    def _retained(self) -> list[dict]:
        out = []
        for ev in self._images():
            sel = self.latest.get((ev["image_id"], "select"))
            if sel is not None and sel["outcome"] == "pass":
                out.append(ev)
        return out

    def _degrade_stage(self) -> None:
        dc = self.cfg.degradation
        tasks = []
        for ev in self._retained():
            image_id = ev["image_id"]
            missing = tuple(e for e in range(dc.epochs)
                            if (image_id, "degrade", e) not in self.latest)
            if missing:
                tasks.append((image_id, ev["path"], missing, dc, str(self.out_root)))

        for task, result in zip(tasks, self._pmap(synthesize_image_pairs, tasks)):
            image_id, path, missing, _, _ = task
            if "error" in result and not result["epochs"]:
                for epoch in missing:
                    self._append(image_id, path, "degrade", "error",
                                 reason=result["error"], payload={"epoch": epoch})
                continue
            for entry in result["epochs"]:
                if "error" in entry:
                    self._append(image_id, path, "degrade", "error",
                                 reason=entry["error"],
                                 payload={"epoch": entry["epoch"],
                                          "derived_seed": entry["derived_seed"]})
                else:
                    self._append(image_id, path, "degrade", "pass", payload={
                        "epoch": entry["epoch"],
                        "derived_seed": entry["derived_seed"],
                        "hq_path": result["hq_path"],
                        "lq_path": entry["lq_path"],
                        "applied_ops": entry["applied_ops"],
                    })
        self._stage_done("degrade")

    # ---- stats -------------------------------------------------------------

    def _derive_stats(self) -> StageStats:
        gate_a, gate_b = self.cfg.gate_order
        order = ["scan", gate_a, gate_b, "iqa", "select", "degrade"]
        stages: dict[str, StageCount] = {}
        images = [ev["image_id"] for ev in self._images()]

        n_scan = len(images) + len(self.scan_rejects)
        stages["scan"] = StageCount(n_scan, len(images), len(self.scan_rejects), 0)

        def count_stage(name: str, ids: list[str]) -> tuple[StageCount, list[str]]:
            sc = StageCount(input_count=len(ids))
            passed = []
            for image_id in ids:
                ev = self.latest.get((image_id, name))
                if ev is None:
                    continue
                if ev["outcome"] == "pass":
                    sc.pass_count += 1
                    passed.append(image_id)
                elif ev["outcome"] == "reject":
                    sc.reject_count += 1
                else:
                    sc.error_count += 1
            return sc, passed

        stages[gate_a], passed = count_stage(gate_a, images)
        stages[gate_b], passed = count_stage(gate_b, passed)
        stages["iqa"], passed = count_stage("iqa", passed)
        stages["select"], retained = count_stage("select", passed)

        dc = self.cfg.degradation
        deg = StageCount(input_count=len(retained))
        pairs = 0
        for image_id in retained:
            oks = errs = 0
            for epoch in range(dc.epochs):
                ev = self.latest.get((image_id, "degrade", epoch))
                if ev is None:
                    continue
                if ev["outcome"] == "pass":
                    oks += 1
                else:
                    errs += 1
            pairs += oks
            if errs:
                deg.error_count += 1
            elif oks == dc.epochs:
                deg.pass_count += 1
        stages["degrade"] = deg

        ordered = {name: stages[name] for name in order}
        return StageStats(stages=ordered, pairs_written=pairs,
                          wall_seconds=dict(self.wall))


def run(cfg: PipelineConfig, stop_after: str = STOP_FULL) -> StageStats:
    """Execute the pipeline (or its prefix, for the stage subcommands)."""
    return _Engine(cfg, stop_after).run()
