"""Clause decoding, slot-conflict voting, retrieval filling, and verification.

Selected rules become clauses through their mapped templates. Slot values come
from three provenances, in strict priority order: rule descriptors (weighted
voting across co-selected rules sharing the template), numeric regressors on
the pooled representation, and — only for slots still empty and optional —
retrieved exemplar fragments whose asserted polarities agree with the clause's
claim. The verifier is a deterministic polarity-clash check over attached
evidence, and the paraphrase hook refuses any transform that edits a bound
slot value.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, PreconditionError
from .logic import RuleTree
from .retrieval import ExemplarRecord
from .templates import TemplateLibrary
from .textmetrics import score_text  # noqa: F401  (part of this module's surface)

EPS_VOTE = 0.05
VERIFY_THRESHOLD = 0.5
EMPTY_DRAFT_TEXT = "No acute findings."

PROVENANCE_KINDS = ("rule", "retrieval", "regressor")
QUALIFIERS = ("none", "possible", "cannot exclude")


@dataclass(frozen=True)
class SlotBinding:
    value: str
    provenance: str
    confidence: float

    def __post_init__(self):
        if self.provenance not in PROVENANCE_KINDS:
            raise ConfigurationError(f"unknown provenance {self.provenance!r}")
        if not 0.0 <= self.confidence <= 1.0:
            raise ConfigurationError(f"confidence {self.confidence} outside [0,1]")


@dataclass
class Clause:
    rule_id: int
    template_id: int
    activation: float
    bindings: dict[str, SlotBinding]
    qualifier: str
    claims: dict[int, int]          # concept index -> asserted polarity
    text: str


@dataclass(frozen=True)
class VerifierFlag:
    kind: str                       # "contradiction" | "paraphrase-rejected"
    clause_index: int
    exemplar_index: int | None
    concept: int | None
    score: float


@dataclass
class Draft:
    clauses: list[Clause]
    evidence: list[list[ExemplarRecord]]
    confidence: float
    flags: list[VerifierFlag] = field(default_factory=list)
    review_required: bool = False
    text: str = EMPTY_DRAFT_TEXT

    def provenance_ledger(self) -> list[tuple[int, str, str, float]]:
        out = []
        for i, c in enumerate(self.clauses):
            for name, b in c.bindings.items():
                out.append((i, name, b.provenance, b.confidence))
        return out


@dataclass
class SlotRegressorParams:
    weights: np.ndarray             # over the pooled representation
    bias: float
    units: str = ""

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        if not (np.all(np.isfinite(self.weights)) and np.isfinite(self.bias)):
            raise ConfigurationError("regressor parameters must be finite")

    def predict(self, xbar: np.ndarray) -> str:
        raw = float(self.weights @ np.asarray(xbar, dtype=np.float64) + self.bias)
        return f"{round(raw, 1):.1f}"


@dataclass
class DecodeLibrary:
    """Everything decode needs: templates, rules, per-rule slot descriptors,
    and numeric slot regressors keyed by (template_id, slot name)."""

    templates: TemplateLibrary
    rules: list[RuleTree]
    slot_descriptors: dict[int, dict[str, str]] = field(default_factory=dict)
    regressors: dict[tuple[int, str], SlotRegressorParams] = field(default_factory=dict)

    def __post_init__(self):
        ids = [r.rule_id for r in self.rules]
        if len(set(ids)) != len(ids):
            raise ConfigurationError("duplicate rule ids in decode library")
        for r in self.rules:
            if not r.template_ids:
                raise ConfigurationError(f"rule {r.rule_id} maps to no template")
            for tid in r.template_ids:
                if tid not in self.templates:
                    raise ConfigurationError(
                        f"rule {r.rule_id} references missing template {tid}")
        self._by_id = {r.rule_id: r for r in self.rules}

    def has_rule(self, rule_id: int) -> bool:
        return rule_id in self._by_id

    def rule(self, rule_id: int) -> RuleTree:
        return self._by_id[rule_id]

    def primary_template(self, rule_id: int) -> int:
        return self._by_id[rule_id].template_ids[0]


def rule_claims(tree: RuleTree) -> dict[int, int]:
    """Concept polarities a rule asserts: leaf sign times the parity of NOT
    nodes above it. Concepts asserted with both signs are dropped."""
    signs: dict[int, set[int]] = {}

    def walk(node, parity: int) -> None:
        if node.kind == "leaf":
            s = -parity if node.negated else parity
            signs.setdefault(node.concept, set()).add(s)
            return
        if node.kind == "NOT":
            walk(node.left, -parity)
            return
        walk(node.left, parity)
        walk(node.right, parity)

    walk(tree.root, 1)
    return {k: s.pop() for k, s in sorted(signs.items()) if len(s) == 1}


def resolve_slot_conflicts(slot: str, candidates: list[tuple[str, float]]):
    """Weighted vote over distinct values: returns (value, qualifier).

    The winner is the value with the largest summed weight; a lead smaller
    than EPS_VOTE yields qualifier "possible", and an exact tie resolves to
    the lexicographically smallest value, also with "possible".
    """
    if not candidates:
        raise PreconditionError(f"slot {slot!r}: empty candidate list")
    totals: dict[str, float] = {}
    for value, weight in candidates:
        if weight < 0:
            raise PreconditionError(f"slot {slot!r}: negative weight {weight}")
        totals[value] = totals.get(value, 0.0) + float(weight)
    ranked = sorted(totals.items(), key=lambda kv: (-kv[1], kv[0]))
    best_value, best_sum = ranked[0]
    if len(ranked) == 1:
        return best_value, "none"
    second_sum = ranked[1][1]
    if best_sum - second_sum < EPS_VOTE:
        return best_value, "possible"
    return best_value, "none"


def decode_rules(top: list[int], activations_by_id: dict[int, float],
                 c_hat: np.ndarray, xbar: np.ndarray, library: DecodeLibrary,
                 kg_scores: dict[int, float] | None = None) -> list[Clause]:
    """One clause per selected rule, in the given (activation-descending) order.

    Slot votes pool candidates from every co-selected rule that instantiates
    the same template, weighted by activation times knowledge-graph score
    (missing scores count as 1). Measurement slots fall back to their
    regressor; required slots that stay empty force the "possible" qualifier.
    """
    kg_scores = kg_scores or {}
    for rid in top:
        if not library.has_rule(rid):
            raise PreconditionError(f"unknown rule id {rid}")

    # candidate pool per (template, slot): contributions from co-selected rules
    pool: dict[tuple[int, str], list[tuple[str, float]]] = {}
    for rid in top:
        tid = library.primary_template(rid)
        weight = float(activations_by_id[rid]) * float(kg_scores.get(rid, 1.0))
        for slot_name, value in sorted(library.slot_descriptors.get(rid, {}).items()):
            pool.setdefault((tid, slot_name), []).append((value, weight))

    clauses: list[Clause] = []
    for rid in top:
        tree = library.rule(rid)
        tid = library.primary_template(rid)
        template = library.templates.get(tid)
        activation = float(activations_by_id[rid])
        bindings: dict[str, SlotBinding] = {}
        qualifier = "none"

        for spec in template.slots:
            candidates = pool.get((tid, spec.name), [])
            if candidates:
                value, vote_qual = resolve_slot_conflicts(spec.name, candidates)
                total = sum(w for _, w in candidates)
                winning = sum(w for v, w in candidates if v == value)
                conf = winning / total if total > 0 else 1.0
                bindings[spec.name] = SlotBinding(value=value, provenance="rule",
                                                  confidence=min(1.0, conf))
                if vote_qual == "possible":
                    qualifier = "possible"
            elif spec.kind == "measurement" and (tid, spec.name) in library.regressors:
                reg = library.regressors[(tid, spec.name)]
                bindings[spec.name] = SlotBinding(
                    value=reg.predict(xbar), provenance="regressor",
                    confidence=min(1.0, max(0.0, activation)))
            elif spec.required:
                qualifier = "possible"

        text = template.render({k: b.value for k, b in bindings.items()})
        if qualifier != "none":
            text = f"{text} ({qualifier})"
        clauses.append(Clause(rule_id=rid, template_id=tid, activation=activation,
                              bindings=bindings, qualifier=qualifier,
                              claims=rule_claims(tree), text=text))
    return clauses


def _agrees(record: ExemplarRecord, claims: dict[int, int]) -> bool:
    shared = set(record.polarities) & set(claims)
    return bool(shared) and all(record.polarities[k] == claims[k] for k in shared)


def _render_clause(clause: Clause, library: DecodeLibrary) -> str:
    template = library.templates.get(clause.template_id)
    text = template.render({k: b.value for k, b in clause.bindings.items()})
    if clause.qualifier != "none":
        text = f"{text} ({clause.qualifier})"
    return text


def fill_templates(clauses: list[Clause], exemplars: list[ExemplarRecord],
                   library: DecodeLibrary,
                   similarities: dict[int, float] | None = None) -> Draft:
    """Attach evidence and fill remaining optional slots from agreeing,
    approved exemplar fragments. Retrieval never overwrites an existing
    binding; disagreeing evidence stays attached for the verifier."""
    similarities = similarities or {}
    evidence: list[list[ExemplarRecord]] = []
    for clause in clauses:
        attached = [e for e in exemplars if set(e.polarities) & set(clause.claims)]
        evidence.append(attached)
        template = library.templates.get(clause.template_id)
        for spec in template.slots:
            if spec.name in clause.bindings or spec.required:
                continue
            if spec.kind not in ("concept-phrase", "qualifier"):
                continue
            for rec in attached:
                if rec.approved and _agrees(rec, clause.claims):
                    sim = similarities.get(rec.index, 1.0)
                    clause.bindings[spec.name] = SlotBinding(
                        value=rec.fragment, provenance="retrieval",
                        confidence=min(1.0, max(0.0, sim)))
                    break
        clause.text = _render_clause(clause, library)

    confidence = float(np.mean([c.activation for c in clauses])) if clauses else 0.0
    text = " ".join(c.text for c in clauses) if clauses else EMPTY_DRAFT_TEXT
    return Draft(clauses=clauses, evidence=evidence, confidence=confidence, text=text)


def verify_draft(draft: Draft, threshold: float = VERIFY_THRESHOLD) -> Draft:
    """Polarity-clash verification: one flag per (claim, evidence) pair that
    asserts the same concept with opposite signs. Contradiction flags are
    recomputed; other flag kinds are kept."""
    kept = [f for f in draft.flags if f.kind != "contradiction"]
    flags: list[VerifierFlag] = []
    for i, clause in enumerate(draft.clauses):
        for rec in draft.evidence[i]:
            for concept in sorted(set(rec.polarities) & set(clause.claims)):
                if rec.polarities[concept] != clause.claims[concept]:
                    flags.append(VerifierFlag(kind="contradiction", clause_index=i,
                                              exemplar_index=rec.index,
                                              concept=concept, score=1.0))
    draft.flags = flags + kept
    draft.review_required = any(f.score >= threshold for f in draft.flags)
    return draft


def paraphrase_pass(draft: Draft, mode: str = "identity", transform=None,
                    threshold: float = VERIFY_THRESHOLD) -> Draft:
    """Optional constrained rewrite. Identity mode returns the draft as is.

    External mode applies `transform` to each clause text and rejects the
    whole pass if any bound slot value is no longer present verbatim; the
    rejected pass returns the original draft plus a warning flag."""
    if mode == "identity":
        return draft
    if mode != "external":
        raise PreconditionError(f"unknown paraphrase mode {mode!r}")
    if transform is None:
        raise PreconditionError("external mode requires a transform")

    new_texts: list[str] = []
    for i, clause in enumerate(draft.clauses):
        candidate = str(transform(clause.text))
        for name, binding in clause.bindings.items():
            if binding.value not in candidate:
                draft.flags = draft.flags + [VerifierFlag(
                    kind="paraphrase-rejected", clause_index=i,
                    exemplar_index=None, concept=None, score=0.0)]
                return draft
        new_texts.append(candidate)

    for clause, text in zip(draft.clauses, new_texts):
        clause.text = text
    draft.text = " ".join(new_texts) if new_texts else EMPTY_DRAFT_TEXT
    return verify_draft(draft, threshold)
