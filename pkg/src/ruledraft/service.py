"""Review service: adjudication queue, immutable clinician decisions, a
bounded promptbook of approved exemplar fragments, and plain-file state
with an append-only audit log that replays to the exact promptbook.

State lives in one directory (override with RULEDRAFT_STATE):

    cases.json        every review case, rewritten on mutation
    promptbook.json   bounded approved-exemplar store, rewritten on mutation
    exemplars.txt     retrieval store mirror of promptbook additions
    audit.jsonl       one immutable record per decision (header line first)
    feedback.jsonl    (draft, correction) pairs for annotator calibration
    metrics.json      last evaluation record, served at /api/metrics

All mutation funnels through one lock; HTTP handlers only ever call the
service object, so concurrent requests see consistent snapshots.
"""

from __future__ import annotations

import json
import os
import threading
import time
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Any, Callable, Mapping

import numpy as np
from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse

from .errors import (ConfigurationError, DecisionError, ParseError,
                     PreconditionError, VersionError)
from .generation import Draft
from .model import ForwardCache, PipelineModel
from .retrieval import ExemplarRecord, ExemplarStore, dump_store, load_store

STATE_ENV = "RULEDRAFT_STATE"

PROMPTBOOK_CAPACITY = 50

CASE_STATUSES = ("pending", "approved", "edited", "rejected")

DECISION_ACTIONS = ("approve", "edit", "reject")

_STATUS_BY_ACTION = {"approve": "approved", "edit": "edited", "reject": "rejected"}

_CASES_HEADER = {"format": "review-cases", "version": 1}
_PROMPTBOOK_HEADER = {"format": "promptbook", "version": 1}
_AUDIT_HEADER = {"format": "decision-audit", "version": 1}
_FEEDBACK_HEADER = {"format": "feedback-log", "version": 1}
_METRICS_HEADER = {"format": "metrics-record", "version": 1}


def resolve_state_dir(explicit: str | Path | None = None) -> Path:
    """Explicit argument wins, then the environment override, then ./state."""
    if explicit is not None:
        return Path(explicit)
    env = os.environ.get(STATE_ENV)
    return Path(env) if env else Path("state")


@dataclass(frozen=True)
class DecisionRecord:
    editor: str
    timestamp_ms: int
    action: str
    edited_clauses: tuple[str, ...] = ()

    def __post_init__(self):
        if self.action not in DECISION_ACTIONS:
            raise PreconditionError(f"unknown decision action {self.action!r}")


@dataclass
class ReviewCase:
    """One draft awaiting adjudication, with the decoded reasoning chain
    (per-rule node values) the UI renders as the explanation."""

    case_id: str
    sample_id: int
    draft_text: str
    clauses: list[dict]
    reasoning: list[dict]
    entropy: float
    flags: list[dict]
    embedding: list[float]
    status: str = "pending"
    decision: DecisionRecord | None = None

    def __post_init__(self):
        if not self.case_id:
            raise PreconditionError("case id must be non-empty")
        if self.status not in CASE_STATUSES:
            raise PreconditionError(f"unknown status {self.status!r}")
        if not np.isfinite(self.entropy) or self.entropy < 0:
            raise PreconditionError(f"entropy {self.entropy} must be finite, >= 0")

    @property
    def flagged(self) -> bool:
        return bool(self.flags)


def _clause_payload(clause) -> dict:
    return {
        "rule_id": clause.rule_id,
        "template_id": clause.template_id,
        "activation": clause.activation,
        "qualifier": clause.qualifier,
        "claims": [[int(k), int(v)] for k, v in sorted(clause.claims.items())],
        "bindings": {name: {"value": b.value, "provenance": b.provenance,
                            "confidence": b.confidence}
                     for name, b in sorted(clause.bindings.items())},
        "text": clause.text,
    }


def _reasoning_payload(model: PipelineModel, fc: ForwardCache,
                       rule_ids: list[int]) -> list[dict]:
    """Per-node soft values for each rule behind a clause, preorder."""
    by_id = {r.rule_id: j for j, r in enumerate(model.rules)}
    chains = []
    for rid in rule_ids:
        j = by_id[rid]
        tree, cache = model.rules[j], fc.tree_caches[j]
        nodes = []
        for node, value in zip(tree.nodes(), cache.values):
            entry: dict[str, Any] = {"kind": node.kind, "value": float(value)}
            if node.kind == "leaf":
                entry["concept"] = node.concept
                entry["negated"] = node.negated
            if node.kind == "BLEND":
                entry["alpha"] = node.alpha
            nodes.append(entry)
        chains.append({"rule_id": rid, "name": tree.name,
                       "activation": float(fc.r[j]), "nodes": nodes})
    return chains


def case_from_draft(case_id: str, sample_id: int, draft: Draft,
                    model: PipelineModel, fc: ForwardCache,
                    entropy: float) -> ReviewCase:
    flags = [{"kind": f.kind, "clause_index": f.clause_index,
              "exemplar_index": f.exemplar_index, "concept": f.concept,
              "score": f.score} for f in draft.flags]
    embedding = np.concatenate([fc.v, fc.c_hat])
    return ReviewCase(
        case_id=case_id, sample_id=sample_id, draft_text=draft.text,
        clauses=[_clause_payload(c) for c in draft.clauses],
        reasoning=_reasoning_payload(model, fc, [c.rule_id for c in draft.clauses]),
        entropy=float(entropy), flags=flags,
        embedding=[float(x) for x in embedding])


def case_payload(case: ReviewCase) -> dict:
    out = asdict(case)
    out["flagged"] = case.flagged
    out["decision"] = asdict(case.decision) if case.decision else None
    if out["decision"]:
        out["decision"]["edited_clauses"] = list(case.decision.edited_clauses)
    return out


def case_from_payload(payload: Mapping[str, Any]) -> ReviewCase:
    fields = {k: payload[k] for k in ("case_id", "sample_id", "draft_text",
                                      "clauses", "reasoning", "entropy",
                                      "flags", "embedding", "status")}
    decision = payload.get("decision")
    if decision:
        fields["decision"] = DecisionRecord(
            editor=decision["editor"], timestamp_ms=decision["timestamp_ms"],
            action=decision["action"],
            edited_clauses=tuple(decision["edited_clauses"]))
    return ReviewCase(**fields)


# --- promptbook --------------------------------------------------------------


@dataclass(frozen=True)
class PromptbookEntry:
    fragment: str
    embedding: tuple[float, ...]
    provenance: str                 # "case:<case_id>"
    approved_ms: int
    soft_prompt: tuple[float, ...] = ()   # opaque; stored for format fidelity


class Promptbook:
    """Bounded store of approved exemplar entries; oldest evicted first."""

    def __init__(self, capacity: int = PROMPTBOOK_CAPACITY):
        if capacity < 1:
            raise ConfigurationError("promptbook capacity must be >= 1")
        self.capacity = int(capacity)
        self._entries: list[PromptbookEntry] = []

    def __len__(self) -> int:
        return len(self._entries)

    def entries(self) -> tuple[PromptbookEntry, ...]:
        return tuple(self._entries)

    def add(self, entry: PromptbookEntry) -> PromptbookEntry | None:
        self._entries.append(entry)
        if len(self._entries) > self.capacity:
            return self._entries.pop(0)
        return None

    def to_payload(self) -> dict:
        return {**_PROMPTBOOK_HEADER, "capacity": self.capacity,
                "entries": [{"fragment": e.fragment,
                             "embedding": list(e.embedding),
                             "provenance": e.provenance,
                             "approved_ms": e.approved_ms,
                             "soft_prompt": list(e.soft_prompt)}
                            for e in self._entries]}

    @classmethod
    def from_payload(cls, payload: Mapping[str, Any]) -> "Promptbook":
        _check_header(payload, _PROMPTBOOK_HEADER, "promptbook")
        book = cls(capacity=payload["capacity"])
        for e in payload["entries"]:
            book._entries.append(PromptbookEntry(
                fragment=e["fragment"], embedding=tuple(e["embedding"]),
                provenance=e["provenance"], approved_ms=e["approved_ms"],
                soft_prompt=tuple(e.get("soft_prompt", ()))))
        if len(book._entries) > book.capacity:
            raise ParseError("promptbook holds more entries than its capacity", 1, 1)
        return book


def _check_header(payload: Mapping[str, Any], header: Mapping[str, Any],
                  what: str) -> None:
    if payload.get("format") != header["format"]:
        raise ParseError(f"not a {what} file", 1, 1)
    if payload.get("version") != header["version"]:
        raise VersionError(
            f"{what} version {payload.get('version')!r} unsupported")


# --- service ----------------------------------------------------------------


class ReviewService:
    """Owns all review state under one directory; single-writer locking."""

    def __init__(self, state_dir: str | Path | None = None,
                 capacity: int = PROMPTBOOK_CAPACITY,
                 clock_ms: Callable[[], int] | None = None):
        self.state_dir = resolve_state_dir(state_dir)
        self.state_dir.mkdir(parents=True, exist_ok=True)
        self._lock = threading.RLock()
        self._clock_ms = clock_ms or (lambda: time.time_ns() // 1_000_000)
        self._cases: dict[str, ReviewCase] = {}
        self._order: list[str] = []            # insertion order of case ids
        self.promptbook = Promptbook(capacity)
        self.store = ExemplarStore()
        self._metrics: dict[str, Any] = {}
        self._audit_seq = 0
        self._load()

    # paths

    def _path(self, name: str) -> Path:
        return self.state_dir / name

    def _load(self) -> None:
        cases_path = self._path("cases.json")
        if cases_path.exists():
            payload = json.loads(cases_path.read_text(encoding="utf-8"))
            _check_header(payload, _CASES_HEADER, "review-cases")
            for raw in payload["cases"]:
                case = case_from_payload(raw)
                self._cases[case.case_id] = case
                self._order.append(case.case_id)
        book_path = self._path("promptbook.json")
        if book_path.exists():
            payload = json.loads(book_path.read_text(encoding="utf-8"))
            self.promptbook = Promptbook.from_payload(payload)
        store_path = self._path("exemplars.txt")
        if store_path.exists():
            self.store = load_store(store_path.read_text(encoding="utf-8"))
        metrics_path = self._path("metrics.json")
        if metrics_path.exists():
            payload = json.loads(metrics_path.read_text(encoding="utf-8"))
            _check_header(payload, _METRICS_HEADER, "metrics-record")
            self._metrics = payload["record"]
        audit_path = self._path("audit.jsonl")
        if audit_path.exists():
            records = _read_jsonl(audit_path, _AUDIT_HEADER, "audit log")
            self._audit_seq = len(records)

    def _write_json(self, name: str, payload: dict) -> None:
        tmp = self._path(name + ".tmp")
        tmp.write_text(json.dumps(payload, sort_keys=True) + "\n",
                       encoding="utf-8")
        os.replace(tmp, self._path(name))

    def _append_jsonl(self, name: str, header: Mapping[str, Any],
                      record: dict) -> None:
        path = self._path(name)
        with open(path, "a", encoding="utf-8") as f:
            if f.tell() == 0:
                f.write(json.dumps(dict(header), sort_keys=True) + "\n")
            f.write(json.dumps(record, sort_keys=True) + "\n")

    def _persist_cases(self) -> None:
        payload = {**_CASES_HEADER,
                   "cases": [case_payload(self._cases[cid]) for cid in self._order]}
        self._write_json("cases.json", payload)

    def _persist_promptbook(self) -> None:
        self._write_json("promptbook.json", self.promptbook.to_payload())
        self._path("exemplars.txt").write_text(dump_store(self.store),
                                               encoding="utf-8")

    # case lifecycle

    def add_case(self, case: ReviewCase) -> None:
        with self._lock:
            if case.case_id in self._cases:
                raise DecisionError(f"case {case.case_id!r} already exists")
            self._cases[case.case_id] = case
            self._order.append(case.case_id)
            self._persist_cases()

    def case(self, case_id: str) -> ReviewCase | None:
        with self._lock:
            return self._cases.get(case_id)

    def cases(self) -> list[ReviewCase]:
        with self._lock:
            return [self._cases[cid] for cid in self._order]

    def queue(self) -> list[ReviewCase]:
        """Pending cases: verifier-flagged first, then entropy-descending;
        case id breaks exact ties so repeated reads agree."""
        with self._lock:
            pending = [c for c in self.cases() if c.status == "pending"]
        return sorted(pending,
                      key=lambda c: (not c.flagged, -c.entropy, c.case_id))

    def decide(self, case_id: str, action: str, editor: str = "anonymous",
               edited_clauses: list[str] | None = None) -> ReviewCase:
        """Apply a clinician decision. Approved and edited drafts push their
        fragments into the promptbook and exemplar store; rejections are
        logged only. Exactly one immutable audit record per decision."""
        if action not in DECISION_ACTIONS:
            raise PreconditionError(f"unknown decision action {action!r}")
        if action == "edit" and not edited_clauses:
            raise PreconditionError("edit decision needs edited clauses")
        with self._lock:
            case = self._cases.get(case_id)
            if case is None:
                raise DecisionError(f"unknown case {case_id!r}")
            if case.status != "pending":
                raise DecisionError(
                    f"case {case_id!r} already decided ({case.status})")
            now = self._clock_ms()
            record = DecisionRecord(editor=editor, timestamp_ms=now,
                                    action=action,
                                    edited_clauses=tuple(edited_clauses or ()))
            case.status = _STATUS_BY_ACTION[action]
            case.decision = record

            added = []
            if action in ("approve", "edit"):
                texts = (list(record.edited_clauses) if action == "edit"
                         else [c["text"] for c in case.clauses])
                for i, text in enumerate(texts):
                    claims = {}
                    if i < len(case.clauses):
                        claims = {int(k): int(v)
                                  for k, v in case.clauses[i]["claims"]}
                    entry = PromptbookEntry(
                        fragment=text, embedding=tuple(case.embedding),
                        provenance=f"case:{case.case_id}", approved_ms=now)
                    self.promptbook.add(entry)
                    self.store.add(ExemplarRecord(
                        embedding=np.asarray(case.embedding, dtype=np.float64),
                        fragment=text, polarities=claims,
                        source=f"case:{case.case_id}", approved=True))
                    added.append({"fragment": entry.fragment,
                                  "embedding": list(entry.embedding),
                                  "provenance": entry.provenance,
                                  "approved_ms": entry.approved_ms})

            self._audit_seq += 1
            self._append_jsonl("audit.jsonl", _AUDIT_HEADER, {
                "seq": self._audit_seq, "ts_ms": now, "case_id": case_id,
                "action": action, "editor": editor,
                "edited_clauses": list(record.edited_clauses),
                "entries": added})
            self._append_jsonl("feedback.jsonl", _FEEDBACK_HEADER, {
                "case_id": case_id, "action": action,
                "draft": case.draft_text,
                "correction": (list(record.edited_clauses) if action == "edit"
                               else [c["text"] for c in case.clauses])})
            self._persist_cases()
            if added:
                self._persist_promptbook()
            return case

    # metrics

    def metrics(self) -> dict[str, Any]:
        with self._lock:
            return dict(self._metrics)

    def set_metrics(self, record: Mapping[str, Any]) -> None:
        with self._lock:
            self._metrics = dict(record)
            self._write_json("metrics.json",
                             {**_METRICS_HEADER, "record": self._metrics})


def _read_jsonl(path: Path, header: Mapping[str, Any],
                what: str) -> list[dict]:
    records = []
    header_seen = False
    with open(path, encoding="utf-8") as f:
        for i, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as e:
                raise ParseError(f"bad {what} record: {e.msg}", i, 1) from e
            if not header_seen:
                _check_header(rec, header, what)
                header_seen = True
                continue
            records.append(rec)
    return records


def load_audit_log(state_dir: str | Path) -> list[dict]:
    path = resolve_state_dir(state_dir) / "audit.jsonl"
    if not path.exists():
        return []
    return _read_jsonl(path, _AUDIT_HEADER, "audit log")


def load_feedback_log(state_dir: str | Path) -> list[dict]:
    path = resolve_state_dir(state_dir) / "feedback.jsonl"
    if not path.exists():
        return []
    return _read_jsonl(path, _FEEDBACK_HEADER, "feedback log")


def replay_audit(state_dir: str | Path,
                 capacity: int = PROMPTBOOK_CAPACITY) -> Promptbook:
    """Rebuild the promptbook from the audit log alone. Each record carries
    the entries its decision appended, so a fold reproduces the live book,
    including evictions."""
    book = Promptbook(capacity)
    for rec in load_audit_log(state_dir):
        for e in rec["entries"]:
            book.add(PromptbookEntry(
                fragment=e["fragment"], embedding=tuple(e["embedding"]),
                provenance=e["provenance"], approved_ms=e["approved_ms"]))
    return book


# --- HTTP layer ---------------------------------------------------------------


def validate_decision_body(body: Any) -> tuple[dict, dict[str, str]]:
    """Manual field validation so malformed posts give 400s with per-field
    messages instead of framework-shaped errors."""
    errors: dict[str, str] = {}
    if not isinstance(body, dict):
        return {}, {"body": "expected a JSON object"}
    action = body.get("action")
    if action is None:
        errors["action"] = "required"
    elif action not in DECISION_ACTIONS:
        errors["action"] = f"must be one of {', '.join(DECISION_ACTIONS)}"
    editor = body.get("editor", "anonymous")
    if not isinstance(editor, str) or not editor:
        errors["editor"] = "must be a non-empty string"
    edited = body.get("edited_clauses")
    if action == "edit":
        if (not isinstance(edited, list) or not edited
                or not all(isinstance(t, str) and t.strip() for t in edited)):
            errors["edited_clauses"] = "edit needs a non-empty list of non-empty strings"
    elif edited:
        errors["edited_clauses"] = "only valid for edit decisions"
    if errors:
        return {}, errors
    return {"action": action, "editor": editor,
            "edited_clauses": list(edited or [])}, {}


def create_app(service: ReviewService, token: str | None = None) -> FastAPI:
    """FastAPI app over a ReviewService. When a token is configured every
    /api route requires the X-Auth-Token header to match."""
    app = FastAPI(title="ruledraft review service", docs_url=None,
                  redoc_url=None, openapi_url=None)

    def unauthorized(request: Request) -> JSONResponse | None:
        if token is not None and request.headers.get("x-auth-token") != token:
            return JSONResponse({"error": "missing or wrong auth token"},
                                status_code=401)
        return None

    @app.get("/api/queue")
    def get_queue(request: Request):
        if (resp := unauthorized(request)) is not None:
            return resp
        return {"cases": [case_payload(c) for c in service.queue()]}

    @app.get("/api/case/{case_id}")
    def get_case(case_id: str, request: Request):
        if (resp := unauthorized(request)) is not None:
            return resp
        case = service.case(case_id)
        if case is None:
            return JSONResponse({"error": f"unknown case {case_id!r}"},
                                status_code=404)
        return {"case": case_payload(case)}

    @app.post("/api/case/{case_id}/decision")
    async def post_decision(case_id: str, request: Request):
        if (resp := unauthorized(request)) is not None:
            return resp
        try:
            body = await request.json()
        except Exception:
            return JSONResponse({"errors": {"body": "invalid JSON"}},
                                status_code=400)
        decision, errors = validate_decision_body(body)
        if errors:
            return JSONResponse({"errors": errors}, status_code=400)
        if service.case(case_id) is None:
            return JSONResponse({"error": f"unknown case {case_id!r}"},
                                status_code=404)
        try:
            case = service.decide(case_id, decision["action"],
                                  editor=decision["editor"],
                                  edited_clauses=decision["edited_clauses"])
        except DecisionError as e:
            return JSONResponse({"error": str(e)}, status_code=409)
        return {"case": case_payload(case)}

    @app.get("/api/metrics")
    def get_metrics(request: Request):
        if (resp := unauthorized(request)) is not None:
            return resp
        return {"metrics": service.metrics()}

    @app.get("/api/health")
    def get_health(request: Request):
        if (resp := unauthorized(request)) is not None:
            return resp
        with service._lock:
            pending = sum(1 for c in service.cases() if c.status == "pending")
            return {"status": "ok", "cases": len(service.cases()),
                    "pending": pending, "promptbook": len(service.promptbook)}

    return app
