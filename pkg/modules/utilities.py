#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
#==============================================================================
#                    geodemo v1.0 - UTILITIES MODULE
#                    Common Utility Functions
#==============================================================================
"""

import hashlib
import json
import os
from contextlib import contextmanager
from typing import Any, List, Optional

PARTIAL_SUFFIX = ".partial"

# ==============================================================================
# FINGERPRINTS
# ==============================================================================

def fingerprint(obj: Any) -> str:
    """
    SHA-256 of the canonical JSON form of obj (sorted keys, no spaces)

    Args:
        obj: JSON-serialisable value

    Returns:
        Hex digest
    """
    payload = json.dumps(obj, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()


def file_digest(path: str) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


# ==============================================================================
# FILE OUTPUT
# ==============================================================================

@contextmanager
def atomic_output(path: str, mode: str = "w"):
    """
    Write to <path>.partial and rename to path once the block succeeds.
    On error the .partial file stays behind for inspection.

    Args:
        path: Final output path
        mode: "w" for text (UTF-8, \\n newlines) or "wb" for binary
    """
    parent = os.path.dirname(os.path.abspath(path))
    os.makedirs(parent, exist_ok=True)
    partial = path + PARTIAL_SUFFIX
    if "b" in mode:
        f = open(partial, mode)
    else:
        f = open(partial, mode, encoding="utf-8", newline="\n")
    with f:
        yield f
    os.replace(partial, path)


def write_json(path: str, obj: Any) -> None:
    with atomic_output(path) as f:
        json.dump(obj, f, indent=2, sort_keys=True)
        f.write("\n")


# ==============================================================================
# ARGUMENT PARSING
# ==============================================================================

def parse_float_list(text: str) -> List[float]:
    """
    Parse "1e-6,1e-5, 0.1" into floats

    Raises:
        ValueError: on an empty list or a non-numeric entry
    """
    values = [float(p) for p in str(text).split(",") if p.strip()]
    if not values:
        raise ValueError("empty list: %r" % text)
    return values


def parse_int_list(text: str) -> List[int]:
    values = [int(p) for p in str(text).split(",") if p.strip()]
    if not values:
        raise ValueError("empty list: %r" % text)
    return values


def resolve_workers(workers: Optional[int]) -> int:
    """
    Worker count; None or 0 means every available CPU
    """
    if not workers:
        return os.cpu_count() or 1
    if workers < 0:
        raise ValueError("workers must be positive")
    return int(workers)
