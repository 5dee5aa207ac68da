"""Deterministic hashing, seeding, and serialization helpers."""

from __future__ import annotations

import hashlib
import json
import pickle
import zlib
from pathlib import Path
from typing import Any


def stable_token_bucket(token: str, n_buckets: int) -> int:
    """Map a token into a fixed bucket space, stably across processes.

    Uses crc32 rather than ``hash()`` so embeddings line up between runs
    (Python string hashing is salted per process).
    """
    return zlib.crc32(token.encode("utf-8")) % n_buckets


def canonical_json(obj: Any) -> str:
    """JSON with sorted keys and fixed separators; stable input for hashing."""
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False)


def sha256_hex(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def config_hash(obj: Any) -> str:
    return sha256_hex(canonical_json(obj).encode("utf-8"))


def file_sha256(path: str | Path) -> str:
    return sha256_hex(Path(path).read_bytes())


def derive_seed(master_seed: int, component: str) -> int:
    """Fan a single run seed out to one per component.

    seed_component = first 8 hex digits of sha256("<master>:<component>"),
    so components never share RNG streams and the derivation is documented
    and reproducible.
    """
    digest = hashlib.sha256(f"{master_seed}:{component}".encode("utf-8")).hexdigest()
    return int(digest[:8], 16)


def save_checkpoint(path: str | Path, payload: dict) -> None:
    """Write a checkpoint as a pickle of plain dicts / numpy arrays.

    Avoids archive formats that embed timestamps: identical model state
    must produce byte-identical files for reproducibility checks.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as f:
        pickle.dump(payload, f, protocol=4)


def load_checkpoint(path: str | Path) -> dict:
    with open(path, "rb") as f:
        return pickle.load(f)


def write_json(path: str | Path, obj: Any) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, ensure_ascii=False) + "\n", encoding="utf-8")


def read_json(path: str | Path) -> Any:
    return json.loads(Path(path).read_text(encoding="utf-8"))
