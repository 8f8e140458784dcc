from __future__ import annotations

import json
from dataclasses import dataclass
from io import StringIO
from pathlib import Path, PurePosixPath
from typing import Any, Literal
from urllib.parse import urlparse

import httpx
from ruamel.yaml import YAML
from ruamel.yaml.error import YAMLError

from .errors import ConfigError, FetchError

FETCH_TIMEOUT = 20.0
YAML_SUFFIXES = (".yaml", ".yml")

DocFormat = Literal["json", "yaml"]


@dataclass(frozen=True)
class ConfigDocument:
    data: dict[str, Any]
    source: str
    # where the bytes actually came from (raw URL or resolved path)
    location: str
    format: DocFormat


def is_remote(source: str) -> bool:
    return urlparse(source).scheme in ("http", "https")


def document_format(location: str) -> DocFormat:
    path = urlparse(location).path if is_remote(location) else location
    return "yaml" if PurePosixPath(path).suffix.lower() in YAML_SUFFIXES else "json"


def raw_github_url(url: str) -> str:
    parsed = urlparse(url)
    if parsed.netloc.removeprefix("www.") != "github.com":
        return url
    owner, repo, *tail = parsed.path.strip("/").split("/")
    if len(tail) < 3 or tail[0] != "blob":
        return url
    ref, *path = tail[1:]
    return f"https://raw.githubusercontent.com/{owner}/{repo}/{ref}/{'/'.join(path)}"


def decode_document(text: str, fmt: DocFormat, location: str) -> dict[str, Any]:
    try:
        data = YAML(typ="safe").load(StringIO(text)) if fmt == "yaml" else json.loads(text)
    except (json.JSONDecodeError, YAMLError) as exc:
        raise ConfigError(f"{location} is not a valid {fmt.upper()} document", ["config"]) from exc
    if not isinstance(data, dict):
        raise ConfigError(f"{location} must hold a mapping at the top level", ["config"])
    return data


def _read_remote(url: str) -> str:
    try:
        response = httpx.get(url, timeout=FETCH_TIMEOUT, follow_redirects=True)
        response.raise_for_status()
    except httpx.HTTPError as exc:
        raise FetchError(f"could not fetch {url}: {exc}") from exc
    return response.text


def _read_local(path: Path) -> str:
    if not path.is_file():
        raise FetchError(f"config file not found: {path}")
    try:
        return path.read_text(encoding="utf-8")
    except OSError as exc:
        raise FetchError(f"could not read {path}: {exc}") from exc


def load_document(source: str) -> ConfigDocument:
    """Read a JSON or YAML config from a local path or an http(s) URL.

    The format follows the file suffix; anything that is not .yaml/.yml is JSON.
    """
    if is_remote(source):
        location = raw_github_url(source)
        text = _read_remote(location)
    else:
        location = str(Path(source))
        text = _read_local(Path(source))
    fmt = document_format(location)
    return ConfigDocument(decode_document(text, fmt, location), source, location, fmt)
