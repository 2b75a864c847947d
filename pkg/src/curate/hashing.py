"""FNV-1a 64-bit hashing: stable ids, derived seeds, config fingerprints."""

from __future__ import annotations

import json

FNV_OFFSET = 0xCBF29CE484222325
FNV_PRIME = 0x100000001B3
_MASK64 = 0xFFFFFFFFFFFFFFFF


def fnv1a64(data: bytes) -> int:
    h = FNV_OFFSET
    for b in data:
        h ^= b
        h = (h * FNV_PRIME) & _MASK64
    return h


def fnv1a64_hex(text: str) -> str:
    return f"{fnv1a64(text.encode('utf-8')):016x}"


def config_fingerprint(config: dict) -> str:
    """Hash of the canonical (sorted-key, compact) JSON rendering."""
    canonical = json.dumps(config, sort_keys=True, separators=(",", ":"))
    return fnv1a64_hex(canonical)
