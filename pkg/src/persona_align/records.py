"""Line-delimited JSON storage used for every artifact the pipeline writes.

The first line of each file is a header ``{"schema": ..., "version": ...}``;
every following line is one record.  Keys are sorted and separators fixed so
that equal content always serializes to identical bytes.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path
from typing import Any, Iterable


def dumps(obj: Any) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False, allow_nan=False)


def write_jsonl(path, schema: str, version: int, records: Iterable[dict], **header_extra) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    header = {"schema": schema, "version": version, **header_extra}
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(dumps(header) + "\n")
        for rec in records:
            fh.write(dumps(rec) + "\n")
    return path


def read_jsonl(path, schema: str | None = None) -> tuple[dict, list[dict]]:
    from .errors import SchemaError

    path = Path(path)
    with open(path, encoding="utf-8") as fh:
        lines = [ln for ln in fh.read().splitlines() if ln.strip()]
    if not lines:
        raise SchemaError(f"{path}: empty record file")
    header = json.loads(lines[0])
    if schema is not None and header.get("schema") != schema:
        raise SchemaError(f"{path}: expected schema {schema!r}, found {header.get('schema')!r}")
    return header, [json.loads(ln) for ln in lines[1:]]


def write_json(path, obj: Any) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, sort_keys=True, indent=2, ensure_ascii=False) + "\n", encoding="utf-8")
    return path


def file_sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()
