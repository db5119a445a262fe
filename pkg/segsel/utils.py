"""
Shared helpers: logging setup, named random streams and config digests.
"""

import dataclasses
import hashlib
import json
import logging
import os
from typing import Any, Optional

import numpy as np

LOG_ENV_VAR = "SEGSEL_LOG"
LOG_FORMAT = "%(asctime)s [%(levelname)s] %(name)s: %(message)s"

logger = logging.getLogger(__name__)


def configure_logging(level: Optional[str] = None) -> int:
    """
    Install the segsel log handler.

    Args:
        level: Level name; falls back to $SEGSEL_LOG, then WARNING

    Returns:
        The numeric level that was applied
    """
    name = (level or os.environ.get(LOG_ENV_VAR) or "WARNING").strip().upper()
    numeric = logging.getLevelName(name)
    unknown = not isinstance(numeric, int)
    if unknown:
        numeric = logging.WARNING
    logging.basicConfig(level=numeric, format=LOG_FORMAT, force=True)
    if unknown:
        logger.warning("Unknown log level %r, using WARNING", name)
    return numeric


def stable_hash(text: str) -> int:
    """31-bit integer hash of a string, identical across processes."""
    digest = hashlib.sha256(text.encode("utf-8")).hexdigest()[:16]
    return int(digest, 16) & 0x7FFFFFFF


def rng_stream(seed: int, name: str) -> np.random.Generator:
    """Independent generator for the named sub-stream of a master seed."""
    return np.random.default_rng([int(seed), stable_hash(name)])


def _to_jsonable(value: Any) -> Any:
    if dataclasses.is_dataclass(value) and not isinstance(value, type):
        return _to_jsonable(dataclasses.asdict(value))
    if isinstance(value, dict):
        return {str(k): _to_jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_to_jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        return _to_jsonable(value.tolist())
    if isinstance(value, np.generic):
        return value.item()
    if hasattr(value, "value") and hasattr(type(value), "__members__"):
        return value.value
    return value


def canonical_json(value: Any) -> str:
    """Sorted-key, compact JSON used for digests."""
    return json.dumps(_to_jsonable(value), sort_keys=True, separators=(",", ":"))


def digest(value: Any, length: int = 16) -> str:
    """Short SHA-256 digest of the canonical JSON form of a value."""
    return hashlib.sha256(canonical_json(value).encode("utf-8")).hexdigest()[:length]


def write_json(path, payload: Any) -> None:
    """Write a JSON document deterministically (sorted keys, trailing newline)."""
    with open(path, "w", encoding="utf-8") as f:
        json.dump(_to_jsonable(payload), f, sort_keys=True, indent=2)
        f.write("\n")


def read_json(path) -> Any:
    with open(path, "r", encoding="utf-8") as f:
        return json.load(f)
