"""Exemplar store with exact cosine retrieval.

The store is append-only; each record gets a monotone insertion index used to
break similarity ties. Persistence is line-delimited JSON with a version
header record. Exhaustive scan is intentional: store sizes here stay small
enough that exactness beats indexing.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, ParseError, PreconditionError


class RetrievalError(ValueError):
    """Query vector unusable for similarity search (zero norm)."""


@dataclass
class ExemplarRecord:
    embedding: np.ndarray
    fragment: str
    polarities: dict[int, int]       # concept index -> +1 / -1
    source: str = ""
    approved: bool = False
    index: int = -1                  # insertion order, set by the store

    def __post_init__(self):
        self.embedding = np.asarray(self.embedding, dtype=np.float64)
        if self.embedding.ndim != 1:
            raise ConfigurationError("exemplar embedding must be a vector")
        if float(np.linalg.norm(self.embedding)) == 0.0:
            raise ConfigurationError("exemplar embedding must have positive norm")
        for k, v in self.polarities.items():
            if int(k) < 0 or int(v) not in (1, -1):
                raise ConfigurationError(
                    f"polarity entries must map concept index to +1/-1, got {k}:{v}")
        self.polarities = {int(k): int(v) for k, v in self.polarities.items()}


class ExemplarStore:
    def __init__(self):
        self._records: list[ExemplarRecord] = []

    def __len__(self) -> int:
        return len(self._records)

    def add(self, record: ExemplarRecord) -> int:
        record.index = len(self._records)
        self._records.append(record)
        return record.index

    def records(self) -> list[ExemplarRecord]:
        return list(self._records)

    def get(self, index: int) -> ExemplarRecord:
        return self._records[index]


def retrieve(v: np.ndarray, store: ExemplarStore, n_r: int) -> list[ExemplarRecord]:
    """Top n_r records by cosine similarity to v, descending; ties keep
    insertion order. Returns fewer when the store is smaller."""
    if n_r < 0:
        raise PreconditionError(f"n_r must be >= 0, got {n_r}")
    v = np.asarray(v, dtype=np.float64)
    vn = float(np.linalg.norm(v))
    if vn == 0.0:
        raise RetrievalError("query vector has zero norm")
    if n_r == 0 or len(store) == 0:
        return []
    recs = store.records()
    sims = np.array([float(v @ r.embedding) / (vn * float(np.linalg.norm(r.embedding)))
                     for r in recs])
    order = sorted(range(len(recs)), key=lambda i: (-sims[i], recs[i].index))
    return [recs[i] for i in order[:n_r]]


def cosine_similarity(v: np.ndarray, record: ExemplarRecord) -> float:
    v = np.asarray(v, dtype=np.float64)
    vn = float(np.linalg.norm(v))
    if vn == 0.0:
        raise RetrievalError("query vector has zero norm")
    return float(v @ record.embedding) / (vn * float(np.linalg.norm(record.embedding)))


# ---------------------------------------------------------------------------
# persistence (versioned JSONL, append-only layout)
# ---------------------------------------------------------------------------

_HEADER = {"format": "exemplars", "version": 1}


def dump_store(store: ExemplarStore) -> str:
    lines = [json.dumps(_HEADER, sort_keys=True)]
    for r in store.records():
        lines.append(json.dumps({
            "embedding": [float(x) for x in r.embedding],
            "fragment": r.fragment,
            "polarities": {str(k): v for k, v in sorted(r.polarities.items())},
            "source": r.source,
            "approved": r.approved,
        }, sort_keys=True))
    return "\n".join(lines) + "\n"


def load_store(text: str) -> ExemplarStore:
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines:
        raise ParseError("empty exemplar store file", 1, 1)
    try:
        header = json.loads(lines[0])
    except json.JSONDecodeError as e:
        raise ParseError(f"bad header: {e.msg}", 1, e.colno) from e
    if header != _HEADER:
        raise ParseError(f"unsupported store header {header!r}", 1, 1)
    store = ExemplarStore()
    for lineno, line in enumerate(lines[1:], start=2):
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as e:
            raise ParseError(f"bad record: {e.msg}", lineno, e.colno) from e
        try:
            store.add(ExemplarRecord(
                embedding=np.array(obj["embedding"], dtype=np.float64),
                fragment=obj["fragment"],
                polarities={int(k): int(v) for k, v in obj["polarities"].items()},
                source=obj.get("source", ""),
                approved=bool(obj.get("approved", False)),
            ))
        except (KeyError, ConfigurationError) as e:
            raise ParseError(f"bad record: {e}", lineno, 1) from e
    return store


def save_store_file(store: ExemplarStore, path: str) -> None:
    with open(path, "w", encoding="utf-8") as f:
        f.write(dump_store(store))


def load_store_file(path: str) -> ExemplarStore:
    with open(path, "r", encoding="utf-8") as f:
        return load_store(f.read())
