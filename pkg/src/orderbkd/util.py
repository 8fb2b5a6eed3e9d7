"""Small shared helpers: seed derivation and canonical JSON hashing."""

from __future__ import annotations

import hashlib
import json


def derive_seed(base: int, label: str) -> int:
    """Stable per-stage seed derived from the experiment's top-level seed."""
    digest = hashlib.sha256(f"{base}:{label}".encode()).digest()
    return int.from_bytes(digest[:8], "big")


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False)


def fingerprint(obj) -> str:
    """Hex digest of the canonical JSON encoding of ``obj``."""
    return hashlib.sha256(canonical_json(obj).encode()).hexdigest()
