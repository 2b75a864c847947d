"""curate: deterministic, resumable image-corpus curation and HQ/LQ pair synthesis."""

__version__ = "0.1.0"

from .filters import FilterThresholds, blur_gate, blur_score, flat_gate, patch_grid
from .imagecore import DecodeError, GrayImage, ImageBuffer, decode, to_grayscale
from .iqa import ScoreRecord, ScorerBackend, builtin_proxy_score, retain_top_fraction, score_corpus
from .degrade import DegradationConfig, PairRecord, degrade_once, derive_seed, generate_pairs
from .pipeline import PipelineConfig, PipelineError, StageStats, run, scan
from .report import AttributeSample, DistributionReport, collect, summarize

__all__ = [
    "__version__",
    "FilterThresholds", "blur_gate", "blur_score", "flat_gate", "patch_grid",
    "DecodeError", "GrayImage", "ImageBuffer", "decode", "to_grayscale",
    "ScoreRecord", "ScorerBackend", "builtin_proxy_score", "retain_top_fraction", "score_corpus",
    "DegradationConfig", "PairRecord", "degrade_once", "derive_seed", "generate_pairs",
    "PipelineConfig", "PipelineError", "StageStats", "run", "scan",
    "AttributeSample", "DistributionReport", "collect", "summarize",
]
