"""Helpers for reading and writing JSON records.

Readers transparently prefer a gzipped ``<name>.gz`` sibling and fall back
to the plain file, so callers only ever refer to the logical ``.json`` name.
Writers emit sorted, indented JSON so identical content gives identical bytes.
"""

from __future__ import annotations

import gzip
import json
from pathlib import Path
from typing import Any, Iterable, Mapping, Union

PathLike = Union[str, Path]


def load_json(path: PathLike) -> Any:
    """Load ``path``, preferring a gzipped ``<path>.gz`` if present.

    Raises ``FileNotFoundError`` if neither variant exists.
    """
    path = Path(path)
    gz_path = path.with_name(path.name + ".gz")
    if gz_path.exists():
        with gzip.open(gz_path, "rt", encoding="utf-8") as fh:
            return json.load(fh)

    with open(path, "r", encoding="utf-8") as fh:
        return json.load(fh)


def dump_json(data: Any, path: PathLike) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(data, fh, indent=2, sort_keys=True, ensure_ascii=False)
        fh.write("\n")
    return path


def dump_jsonl(records: Iterable[Mapping[str, Any]], path: PathLike) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        for record in records:
            fh.write(json.dumps(record, sort_keys=True))
            fh.write("\n")
    return path


def load_jsonl(path: PathLike) -> list:
    with open(path, "r", encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]
