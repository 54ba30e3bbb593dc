# infrastructure/writers.py
"""CSV/JSON result files: exact floats, config hash header, atomic replace."""
import csv
import hashlib
import io
import json
import logging
import os
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence

import numpy as np

logger = logging.getLogger(__name__)


def config_sha256(config: Mapping[str, Any]) -> str:
    """sha256 of the canonical JSON form of the resolved config"""
    canonical = json.dumps(to_jsonable(config), sort_keys=True, separators=(",", ":"), ensure_ascii=False)
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def fmt(value: Any) -> str:
    if isinstance(value, (float, np.floating)):
        return "%.17g" % float(value)
    if isinstance(value, (np.integer,)):
        return str(int(value))
    return "" if value is None else str(value)


def to_jsonable(obj: Any) -> Any:
    """numpy и вложенные контейнеры -> JSON-совместимые типы"""
    if isinstance(obj, Mapping):
        return {str(k): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return to_jsonable(obj.tolist())
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        # nan/inf не представимы в строгом JSON
        return v if np.isfinite(v) else repr(v)
    if hasattr(obj, "to_dict"):
        return to_jsonable(obj.to_dict())
    return obj


def atomic_write(path: str | Path, payload: bytes) -> Path:
    """Write to <path>.tmp, then os.replace into place."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as f:
        f.write(payload)
    os.replace(tmp, path)
    logger.info("wrote %s (%d bytes)", path, len(payload))
    return path


def render_csv(rows: Sequence[Mapping[str, Any]], config_hash: str, fieldnames: Sequence[str] | None = None) -> str:
    fields = list(fieldnames) if fieldnames else _fieldnames(rows)
    buf = io.StringIO()
    buf.write(f"# config_sha256={config_hash}\n")
    w = csv.DictWriter(buf, fieldnames=fields, lineterminator="\n")
    w.writeheader()
    for row in rows:
        w.writerow({k: fmt(row.get(k)) for k in fields})
    return buf.getvalue()


def _fieldnames(rows: Iterable[Mapping[str, Any]]) -> list[str]:
    seen: dict[str, None] = {}
    for row in rows:
        for k in row:
            seen.setdefault(k, None)
    return list(seen)


def render_json(document: Mapping[str, Any], config_hash: str) -> str:
    body = {"config_sha256": config_hash, **to_jsonable(document)}
    # repr float в json уже точен при обратном чтении
    return json.dumps(body, sort_keys=True, indent=2, ensure_ascii=False) + "\n"


def write_csv(path: str | Path, rows: Sequence[Mapping[str, Any]], config_hash: str,
              fieldnames: Sequence[str] | None = None) -> Path:
    return atomic_write(path, render_csv(rows, config_hash, fieldnames).encode("utf-8"))


def write_json(path: str | Path, document: Mapping[str, Any], config_hash: str) -> Path:
    return atomic_write(path, render_json(document, config_hash).encode("utf-8"))


def sidecar(path: str | Path, suffix: str) -> Path:
    """<stem>.<suffix>.csv next to path (e.g. the atoms table of `measure`)"""
    path = Path(path)
    return path.with_name(f"{path.stem}.{suffix}{path.suffix or '.csv'}")
