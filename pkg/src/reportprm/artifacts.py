"""Artifact files: line-delimited records and CSV curves with meta headers.

Every artifact starts with a meta object carrying the tool version, a hash
of the semantically relevant options (paths excluded, so reruns into other
directories stay byte-identical), and the seeds in effect. Writers go
through a temp file and rename, so readers never observe partial output.
"""
from __future__ import annotations

import csv
import hashlib
import io
import json
import os
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from . import __version__
from .errors import ArtifactMissingError, SchemaError


def config_hash(options: Mapping) -> str:
    canonical = json.dumps(options, sort_keys=True, default=str)
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()[:12]


def meta_header(options: Mapping, seeds: Mapping[str, int]) -> dict:
    return {
        "meta": {
            "tool_version": __version__,
            "config_hash": config_hash(options),
            "seeds": dict(seeds),
        }
    }


def atomic_write_text(path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text, encoding="utf-8")
    os.replace(tmp, path)


def atomic_write_bytes(path, data: bytes) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(data)
    os.replace(tmp, path)


def write_jsonl(path, records: Iterable[Mapping], meta: Mapping | None = None) -> None:
    buffer = io.StringIO()
    if meta is not None:
        buffer.write(json.dumps(meta, sort_keys=True) + "\n")
    for record in records:
        buffer.write(json.dumps(record, sort_keys=True) + "\n")
    atomic_write_text(path, buffer.getvalue())


def read_jsonl(path) -> list[dict]:
    """All non-meta records of a line-delimited artifact."""
    require_artifact(path)
    records = []
    with open(path, encoding="utf-8") as handle:
        for lineno, line in enumerate(handle, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise SchemaError(f"line {lineno}: malformed JSON ({exc.msg})") from exc
            if isinstance(record, dict) and set(record) == {"meta"}:
                continue
            records.append(record)
    return records


def write_csv(
    path,
    rows: Sequence[Mapping],
    fieldnames: Sequence[str],
    meta: Mapping | None = None,
) -> None:
    buffer = io.StringIO()
    if meta is not None:
        buffer.write("# " + json.dumps(meta, sort_keys=True) + "\n")
    writer = csv.DictWriter(buffer, fieldnames=list(fieldnames), lineterminator="\n")
    writer.writeheader()
    for row in rows:
        writer.writerow({k: row.get(k, "") for k in fieldnames})
    atomic_write_text(path, buffer.getvalue())


def read_csv(path) -> list[dict]:
    require_artifact(path)
    with open(path, encoding="utf-8") as handle:
        lines = [line for line in handle if not line.startswith("#")]
    return list(csv.DictReader(lines))


def require_artifact(path) -> Path:
    path = Path(path)
    if not path.exists():
        raise ArtifactMissingError(f"required artifact {path} does not exist")
    return path
