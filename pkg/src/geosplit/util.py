from __future__ import annotations

import re
import zlib
from typing import Iterable

import numpy as np

SUBSTREAMS = ("dataset", "init", "noise", "shuffle", "check")

_RUN_NAME_RE = re.compile(r"[^a-z0-9-]+")


def substream(seed: int, name: str) -> np.random.Generator:
    if name not in SUBSTREAMS:
        raise ValueError(f"unknown substream {name!r}; expected one of {', '.join(SUBSTREAMS)}")
    sequence = np.random.SeedSequence([seed % 2**63, zlib.crc32(name.encode("utf-8"))])
    return np.random.default_rng(sequence)


def substream_seed(seed: int, name: str) -> int:
    return int(substream(seed, name).integers(0, 2**63 - 1))


def normalize_run_name(value: str, *, max_length: int = 63) -> str:
    value = value.strip().lower()
    value = _RUN_NAME_RE.sub("-", value)
    value = re.sub(r"-+", "-", value).strip("-")
    if len(value) > max_length:
        value = value[:max_length].rstrip("-")
    return value or "run"


def ensure_unique(items: Iterable[str]) -> list[str]:
    seen: set[str] = set()
    output: list[str] = []
    for item in items:
        if item in seen:
            continue
        seen.add(item)
        output.append(item)
    return output


def format_float(value: float | None) -> str:
    """CSV cell for a float: shortest round-trip repr, blank for missing."""
    if value is None:
        return ""
    return repr(float(value))
