"""In-process agent bus: signed request-response messages, weighted-vote slot
coordination with knowledge-graph plausibility penalties, and thin agent
adapters over the model, logic, and generation layers.

Everything runs in one process. The "signature" is a keyed hash over the
sender id and the message payload, good for catching tampering and routing
bugs, not an identity scheme. Each agent's handler runs under a per-agent
lock so an agent sees its inbox serially even when the bus is dispatched
from many threads.
"""

from __future__ import annotations

import hmac
import hashlib
import itertools
import json
import math
import threading
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Callable, Iterable, Mapping, Sequence

import numpy as np

from .errors import (ConfigurationError, CoordinationError, ParseError,
                     PreconditionError, RoutingError, SignatureError)
from .generation import DecodeLibrary, decode_rules, fill_templates
from .logic import evaluate_rules, harden

BODY_FIELDS = ("evidence", "claims", "templates", "confidence", "action_req")

DEFAULT_BUS_KEY = b"ruledraft-bus-v1"

KG_HEADER = "concept_a\tconcept_b\tscore"

KG_DEFAULT_SCORE = 0.5


def _check_confidence(value: Any) -> None:
    """Every numeric confidence entry must lie in [0,1], however nested."""
    if value is None:
        return
    if isinstance(value, Mapping):
        for v in value.values():
            _check_confidence(v)
        return
    if isinstance(value, (list, tuple)):
        for v in value:
            _check_confidence(v)
        return
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise PreconditionError(f"confidence entries must be numbers, got {value!r}")
    if not (0.0 <= float(value) <= 1.0) or not math.isfinite(float(value)):
        raise PreconditionError(f"confidence entry {value} outside [0,1]")


@dataclass(frozen=True)
class AgentMessage:
    """One signed request or response on the bus.

    The five body fields are optional and free-form but must be JSON
    serializable; `confidence` entries are range-checked at construction.
    The correlation id links a request to its response.
    """

    sender: str
    recipient: str
    timestamp_ms: int
    correlation_id: str
    evidence: Any = None
    claims: Any = None
    templates: Any = None
    confidence: Any = None
    action_req: Any = None
    signature: str = ""

    def __post_init__(self):
        if not self.sender or not self.recipient:
            raise PreconditionError("message needs non-empty sender and recipient")
        if self.timestamp_ms < 0:
            raise PreconditionError("timestamp must be non-negative milliseconds")
        _check_confidence(self.confidence)

    def body(self) -> dict[str, Any]:
        return {k: getattr(self, k) for k in BODY_FIELDS if getattr(self, k) is not None}


def canonical_payload(sender: str, body: Mapping[str, Any]) -> bytes:
    # key order must not affect the digest
    return json.dumps({"agent": sender, "payload": dict(body)},
                      sort_keys=True, separators=(",", ":")).encode("utf-8")


def sign_payload(key: bytes, sender: str, body: Mapping[str, Any]) -> str:
    return hmac.new(key, canonical_payload(sender, body), hashlib.sha256).hexdigest()


def signature_valid(key: bytes, msg: AgentMessage) -> bool:
    expected = sign_payload(key, msg.sender, msg.body())
    return hmac.compare_digest(expected, msg.signature)


class AgentBus:
    """Registry plus dispatcher. Every dispatch yields exactly one response
    or raises exactly one logged error; correlation ids are unique per bus."""

    def __init__(self, key: bytes = DEFAULT_BUS_KEY,
                 audit_path: str | Path | None = None):
        if not key:
            raise ConfigurationError("bus key must be non-empty")
        self._key = bytes(key)
        self._registry: dict[str, Any] = {}
        self._mailbox_locks: dict[str, threading.Lock] = {}
        self._corr = itertools.count()
        self._corr_lock = threading.Lock()
        self._clock_lock = threading.Lock()
        self._last_ms = 0
        self._audit_path = Path(audit_path) if audit_path is not None else None
        self._audit_lock = threading.Lock()

    def register(self, agent: Any) -> None:
        name = agent.name
        if not name:
            raise ConfigurationError("agent name must be non-empty")
        if name in self._registry:
            raise ConfigurationError(f"agent {name!r} already registered")
        self._registry[name] = agent
        self._mailbox_locks[name] = threading.Lock()

    def agents(self) -> list[str]:
        return sorted(self._registry)

    def now_ms(self) -> int:
        """Monotonic non-decreasing milliseconds, shared across threads."""
        with self._clock_lock:
            t = time.monotonic_ns() // 1_000_000
            self._last_ms = max(self._last_ms, t)
            return self._last_ms

    def next_correlation_id(self) -> str:
        with self._corr_lock:
            return f"corr-{next(self._corr):08d}"

    def message(self, sender: str, recipient: str, *,
                correlation_id: str | None = None, **body: Any) -> AgentMessage:
        """Build and sign a message; fresh correlation id unless given."""
        unknown = set(body) - set(BODY_FIELDS)
        if unknown:
            raise PreconditionError(f"unknown body fields: {sorted(unknown)}")
        cid = correlation_id if correlation_id is not None else self.next_correlation_id()
        msg = AgentMessage(sender=sender, recipient=recipient,
                           timestamp_ms=self.now_ms(), correlation_id=cid, **body)
        return replace(msg, signature=sign_payload(self._key, sender, msg.body()))

    def dispatch(self, msg: AgentMessage) -> AgentMessage:
        if not signature_valid(self._key, msg):
            self._audit("rejected", msg, detail="signature mismatch")
            raise SignatureError(
                f"signature mismatch on message from {msg.sender!r}")
        handler = self._registry.get(msg.recipient)
        if handler is None:
            self._audit("routing-error", msg,
                        detail=f"unknown recipient {msg.recipient!r}")
            raise RoutingError(f"no agent registered as {msg.recipient!r}")
        self._audit("request", msg)
        with self._mailbox_locks[msg.recipient]:
            body = handler.handle(msg)
        response = self.message(msg.recipient, msg.sender,
                                correlation_id=msg.correlation_id, **(body or {}))
        self._audit("response", response)
        return response

    def request(self, sender: str, recipient: str, **body: Any) -> AgentMessage:
        return self.dispatch(self.message(sender, recipient, **body))

    def _audit(self, event: str, msg: AgentMessage, detail: str = "") -> None:
        if self._audit_path is None:
            return
        record = {"ts_ms": msg.timestamp_ms, "event": event, "sender": msg.sender,
                  "recipient": msg.recipient, "correlation_id": msg.correlation_id}
        if detail:
            record["detail"] = detail
        line = json.dumps(record, sort_keys=True)
        with self._audit_lock:
            with open(self._audit_path, "a", encoding="utf-8") as f:
                f.write(line + "\n")


def load_message_log(path: str | Path) -> list[dict[str, Any]]:
    out = []
    with open(path, encoding="utf-8") as f:
        for i, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as e:
                raise ParseError(f"bad audit record: {e.msg}", i, 1) from e
            out.append(rec)
    return out


# --- knowledge graph -------------------------------------------------------


class KnowledgeGraph:
    """File-backed symmetric concept-pair plausibility scores.

    Entries live in a TTL cache; a lookup past its TTL reloads the file.
    Pairs absent from the file score `default` (0.5 unless configured).
    """

    def __init__(self, path: str | Path, default: float = KG_DEFAULT_SCORE,
                 ttl_seconds: float = math.inf,
                 clock: Callable[[], float] = time.monotonic):
        if not 0.0 <= default <= 1.0:
            raise ConfigurationError(f"default score {default} outside [0,1]")
        if ttl_seconds < 0:
            raise ConfigurationError("ttl must be non-negative")
        self._path = Path(path)
        self._default = float(default)
        self._ttl = float(ttl_seconds)
        self._clock = clock
        self._lock = threading.Lock()
        self._entries: dict[tuple[str, str], float] = {}
        self._loaded_at: float | None = None

    @staticmethod
    def _key(a: str, b: str) -> tuple[str, str]:
        return (a, b) if a <= b else (b, a)

    def _load(self) -> None:
        self._entries = dict(load_knowledge_file(self._path))
        self._loaded_at = self._clock()

    def plausibility(self, a: str, b: str) -> float:
        if not a or not b:
            raise PreconditionError("concept names must be non-empty")
        with self._lock:
            now = self._clock()
            if self._loaded_at is None or now - self._loaded_at > self._ttl:
                self._load()
            return self._entries.get(self._key(a, b), self._default)

    def loaded_at(self) -> float | None:
        return self._loaded_at


def load_knowledge_file(path: str | Path) -> dict[tuple[str, str], float]:
    with open(path, encoding="utf-8") as f:
        lines = f.read().splitlines()
    if not lines or lines[0] != KG_HEADER:
        raise ParseError(f"expected header {KG_HEADER!r}", 1, 1)
    entries: dict[tuple[str, str], float] = {}
    for i, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != 3:
            raise ParseError(f"expected 3 tab-separated fields, got {len(parts)}", i, 1)
        a, b, raw = parts
        if not a or not b:
            raise ParseError("empty concept name", i, 1)
        try:
            score = float(raw)
        except ValueError:
            raise ParseError(f"score {raw!r} is not a number", i, 3) from None
        if not 0.0 <= score <= 1.0:
            raise ParseError(f"score {score} outside [0,1]", i, 3)
        entries[KnowledgeGraph._key(a, b)] = score
    return entries


def save_knowledge_file(path: str | Path,
                        scores: Mapping[tuple[str, str], float]) -> None:
    rows = sorted((KnowledgeGraph._key(a, b), s) for (a, b), s in scores.items())
    body = "".join(f"{a}\t{b}\t{json.dumps(s)}\n" for (a, b), s in rows)
    Path(path).write_text(KG_HEADER + "\n" + body, encoding="utf-8")


def confidence_adjust(gamma: float, claims: Sequence[str],
                      graph: KnowledgeGraph) -> float:
    """Scale a vote weight by the least plausible pair among the claims.

    gamma' = gamma * min over unordered claim pairs of pair plausibility;
    fewer than two distinct claims leave gamma unchanged.
    """
    if not 0.0 <= gamma <= 1.0:
        raise PreconditionError(f"gamma {gamma} outside [0,1]")
    names = sorted(set(claims))
    scores = [graph.plausibility(a, b) for a, b in itertools.combinations(names, 2)]
    if not scores:
        return float(gamma)
    return float(gamma) * min(scores)


# --- coordinator -----------------------------------------------------------


@dataclass(frozen=True)
class SlotCandidate:
    value: str
    gamma: float
    agent: str = ""

    def __post_init__(self):
        if not 0.0 <= self.gamma <= 1.0:
            raise PreconditionError(f"gamma {self.gamma} outside [0,1]")


@dataclass(frozen=True)
class SlotResolution:
    slot: str
    value: str
    mass: float                     # summed weight behind the winning value
    uncertain: bool                 # exact tie broken lexicographically


def coordinate_slot(slot: str, candidates: Iterable[SlotCandidate | tuple],
                    priorities: Mapping[str, float] | None = None) -> SlotResolution:
    """Weighted vote: the value with the largest summed gamma wins.

    Agent priorities multiply gamma before summation. Sums use fsum, so the
    winner is invariant under candidate permutation and under candidates
    with zero weight. An exact tie resolves to the lexicographically
    smallest value and is annotated as uncertain.
    """
    cands = [c if isinstance(c, SlotCandidate) else SlotCandidate(*c)
             for c in candidates]
    if not cands:
        raise CoordinationError(f"slot {slot!r} has no candidates")
    priorities = priorities or {}
    for p in priorities.values():
        if p < 0:
            raise ConfigurationError("agent priority must be non-negative")
    weighted: dict[str, list[float]] = {}
    for c in cands:
        weighted.setdefault(c.value, []).append(
            c.gamma * priorities.get(c.agent, 1.0))
    masses = {value: math.fsum(ws) for value, ws in weighted.items()}
    top = max(masses.values())
    winners = sorted(v for v, m in masses.items() if m == top)
    return SlotResolution(slot=slot, value=winners[0], mass=top,
                          uncertain=len(winners) > 1)


class Coordinator:
    """Collects per-slot candidates and resolves them; the resolution log is
    append-only. Slot mutation is serialized under one lock (slot counts are
    desk-scale; finer locking buys nothing)."""

    def __init__(self, priorities: Mapping[str, float] | None = None):
        self._priorities = dict(priorities or {})
        for p in self._priorities.values():
            if p < 0:
                raise ConfigurationError("agent priority must be non-negative")
        self._candidates: dict[str, list[SlotCandidate]] = {}
        self._log: list[SlotResolution] = []
        self._lock = threading.Lock()

    def propose(self, slot: str, value: str, gamma: float, agent: str = "") -> None:
        cand = SlotCandidate(value=value, gamma=gamma, agent=agent)
        with self._lock:
            self._candidates.setdefault(slot, []).append(cand)

    def candidates(self, slot: str) -> tuple[SlotCandidate, ...]:
        with self._lock:
            return tuple(self._candidates.get(slot, ()))

    def resolve(self, slot: str) -> SlotResolution:
        with self._lock:
            res = coordinate_slot(slot, self._candidates.get(slot, ()),
                                  self._priorities)
            self._log.append(res)
            return res

    def resolution_log(self) -> tuple[SlotResolution, ...]:
        with self._lock:
            return tuple(self._log)


# --- agents ----------------------------------------------------------------
#
# The bus protocol needs only `name` and `handle(msg) -> body dict`. These
# five are deliberately thin: the work happens in the modules they wrap.


class VisualEvidenceAgent:
    """Feature matrix in, concept probabilities out."""

    name = "visual-evidence"

    def __init__(self, model):
        self._model = model

    def handle(self, msg: AgentMessage) -> dict[str, Any]:
        features = np.asarray((msg.evidence or {})["features"], dtype=np.float64)
        c_hat = self._model.concepts(features)
        return {"evidence": {"concepts": [float(x) for x in c_hat]},
                "confidence": float(np.max(np.abs(c_hat - 0.5)) * 2.0)}


class KnowledgeAgent:
    """Claim pairs in, plausibility scores out."""

    name = "knowledge"

    def __init__(self, graph: KnowledgeGraph):
        self._graph = graph

    def handle(self, msg: AgentMessage) -> dict[str, Any]:
        pairs = [tuple(p) for p in (msg.claims or [])]
        scores = [self._graph.plausibility(a, b) for a, b in pairs]
        return {"evidence": {"plausibility": scores},
                "confidence": min(scores) if scores else 1.0}


class ReasoningAgent:
    """Concept vector in, soft rule activations out."""

    name = "reasoning"

    def __init__(self, rules, family: str = "product"):
        self._rules = list(rules)
        self._family = family

    def handle(self, msg: AgentMessage) -> dict[str, Any]:
        c_hat = np.asarray((msg.evidence or {})["concepts"], dtype=np.float64)
        acts, _ = evaluate_rules(self._rules, c_hat, self._family)
        by_id = {str(r.rule_id): float(a) for r, a in zip(self._rules, acts)}
        return {"evidence": {"activations": by_id},
                "confidence": float(max(acts)) if len(acts) else 0.0}


class GenerationAgent:
    """Concept vector in, decoded clause texts and their claims out."""

    name = "generation"

    def __init__(self, library: DecodeLibrary, xbar_dim: int,
                 family: str = "product", tau_h: float = 0.5):
        self._library = library
        self._xbar = np.zeros(xbar_dim, dtype=np.float64)
        self._family = family
        self._tau = tau_h

    def handle(self, msg: AgentMessage) -> dict[str, Any]:
        c_hat = np.asarray((msg.evidence or {})["concepts"], dtype=np.float64)
        bits = harden(c_hat, self._tau)
        acts, _ = evaluate_rules(self._library.rules, bits, self._family)
        fired = sorted(r.rule_id for r, a in zip(self._library.rules, acts)
                       if a >= 0.5)
        by_id = {r.rule_id: float(a) for r, a in zip(self._library.rules, acts)}
        clauses = decode_rules(fired, by_id, c_hat, self._xbar, self._library)
        draft = fill_templates(clauses, [], self._library)
        return {"templates": [c.text for c in draft.clauses],
                "claims": [[c.rule_id, sorted(c.claims.items())] for c in draft.clauses],
                "confidence": draft.confidence}


class VerifierAgent:
    """Claimed polarities against evidence polarities; contradictions set
    action_req so the coordinator can route the case to review."""

    name = "verifier"

    def handle(self, msg: AgentMessage) -> dict[str, Any]:
        claims = {int(k): int(v) for k, v in (msg.claims or [])}
        evidence = (msg.evidence or {}).get("polarities", [])
        contradictions = []
        for concept, polarity in evidence:
            concept = int(concept)
            if concept in claims and claims[concept] != int(polarity):
                contradictions.append(concept)
        flagged = bool(contradictions)
        return {"evidence": {"contradictions": sorted(set(contradictions))},
                "action_req": "review" if flagged else None,
                "confidence": 0.0 if flagged else 1.0}


def default_bus(model, library: DecodeLibrary, graph: KnowledgeGraph,
                xbar_dim: int, key: bytes = DEFAULT_BUS_KEY,
                audit_path: str | Path | None = None) -> AgentBus:
    """Bus with the five standard agents registered."""
    bus = AgentBus(key=key, audit_path=audit_path)
    bus.register(VisualEvidenceAgent(model))
    bus.register(KnowledgeAgent(graph))
    bus.register(ReasoningAgent(model.rules, model.cfg.operator_family))
    bus.register(GenerationAgent(library, xbar_dim, model.cfg.operator_family,
                                 model.cfg.tau_h))
    bus.register(VerifierAgent())
    return bus
