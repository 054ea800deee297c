"""Active uncertainty sampling.

Candidates are scored by the entropy of dropout-averaged rule activations and
selected either by entropy rank, by greedy k-center diversity in the joint
[visual; concept] embedding space, by the entropy-then-k-center combination,
or uniformly at random. The annotator stand-in answers queries with
ground-truth concept bits, each independently flipped at a configured error
rate, and re-decodes clauses from those bits so edits are a set difference.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import ParseError, PreconditionError, RoundError
from .generation import Clause
from .rng import RngStream

POLICIES = ("random", "entropy", "kcenter", "entropy+kcenter")


# ---------------------------------------------------------------------------
# scoring
# ---------------------------------------------------------------------------

def mc_rule_activations(model, x: np.ndarray, t_mc: int, rng: RngStream):
    """Dropout-averaged rule activations: (mean, per-pass array (t_mc, R)).

    Each pass draws its masks from an independent substream, so the result is
    a pure function of (model state, x, rng seed/path).
    """
    if t_mc < 1:
        raise PreconditionError(f"t_mc must be >= 1, got {t_mc}")
    passes = []
    for t in range(t_mc):
        passes.append(model.rule_activations(x, dropout=True,
                                             rng=rng.substream("mc-pass", t)))
    samples = np.stack(passes, axis=0)
    return samples.mean(axis=0), samples


def entropy(activations: np.ndarray, variant: str = "printed") -> float:
    """Predictive entropy of rule activations, natural log, 0*ln(0) = 0.

    "printed" is -sum r*ln(r); "bernoulli" adds the complement term
    -(1-r)*ln(1-r) so certainty at r=0 and r=1 both score zero.
    """
    r = np.asarray(activations, dtype=np.float64)
    if np.any(r < 0.0) or np.any(r > 1.0):
        raise PreconditionError("activations must lie in [0,1]")
    with np.errstate(divide="ignore", invalid="ignore"):
        r_term = np.where(r > 0.0, r * np.log(r), 0.0)
        if variant == "printed":
            return float(-r_term.sum())
        if variant == "bernoulli":
            q = 1.0 - r
            q_term = np.where(q > 0.0, q * np.log(q), 0.0)
            return float(-(r_term + q_term).sum())
    raise PreconditionError(f"unknown entropy variant {variant!r}")


# ---------------------------------------------------------------------------
# diversity selection
# ---------------------------------------------------------------------------

def greedy_k_center(embeddings: list[np.ndarray] | np.ndarray, k: int,
                    seed_index: int) -> list[int]:
    """Greedy 2-approximate k-center: start at seed_index, then repeatedly take
    the point farthest (Euclidean) from the chosen set; ties take the smallest
    index."""
    points = np.asarray(embeddings, dtype=np.float64)
    n = points.shape[0]
    if not 1 <= k <= n:
        raise PreconditionError(f"k must lie in [1, {n}], got {k}")
    if not 0 <= seed_index < n:
        raise PreconditionError(f"seed index {seed_index} out of range")
    chosen = [seed_index]
    min_dist = np.linalg.norm(points - points[seed_index], axis=1)
    min_dist[seed_index] = -1.0  # chosen points drop out of the argmax
    while len(chosen) < k:
        best = int(np.argmax(min_dist))  # first (smallest) index wins ties
        chosen.append(best)
        min_dist = np.minimum(min_dist, np.linalg.norm(points - points[best], axis=1))
        min_dist[best] = -1.0
    return chosen


def covering_radius(points: np.ndarray, centers: list[int]) -> float:
    d = np.stack([np.linalg.norm(points - points[c], axis=1) for c in centers])
    return float(d.min(axis=0).max())


# ---------------------------------------------------------------------------
# candidate pool and rounds
# ---------------------------------------------------------------------------

@dataclass
class Candidate:
    sample_id: int
    embedding: np.ndarray       # joint [visual; concept] vector
    mean_activations: np.ndarray
    entropy: float
    selected: bool = False


class CandidatePool:
    def __init__(self, candidates: list[Candidate]):
        if candidates:
            dim = candidates[0].embedding.shape[0]
            for c in candidates:
                if c.embedding.shape != (dim,):
                    raise PreconditionError("candidate embeddings differ in length")
                if c.entropy < 0.0:
                    raise PreconditionError("entropy must be non-negative")
        ids = [c.sample_id for c in candidates]
        if len(set(ids)) != len(ids):
            raise PreconditionError("duplicate sample ids in pool")
        self._candidates = list(candidates)
        self._by_id = {c.sample_id: c for c in candidates}

    def __len__(self) -> int:
        return len(self._candidates)

    def candidates(self) -> list[Candidate]:
        return list(self._candidates)

    def unselected(self) -> list[Candidate]:
        return [c for c in self._candidates if not c.selected]

    def mark_selected(self, sample_ids: list[int]) -> None:
        for sid in sample_ids:
            c = self._by_id[sid]
            if c.selected:
                raise RoundError(f"sample {sid} already selected")
            c.selected = True


@dataclass(frozen=True)
class SelectionRound:
    round_index: int
    k: int
    chosen: tuple[int, ...]
    policy: str
    seed: int

    def __post_init__(self):
        if len(set(self.chosen)) != len(self.chosen):
            raise PreconditionError("chosen ids must be distinct")
        if len(self.chosen) > self.k:
            raise PreconditionError("more chosen ids than the budget allows")


def build_candidate_pool(model, samples: list[tuple[int, np.ndarray]], t_mc: int,
                         rng: RngStream, entropy_variant: str = "printed") -> CandidatePool:
    """Score (sample_id, feature matrix) pairs: per-candidate rng substreams
    keep scoring order-independent and replayable."""
    cands = []
    for sid, x in samples:
        sub = rng.substream("candidate", sid)
        mean_r, _ = mc_rule_activations(model, x, t_mc, sub)
        emb = model.joint_embedding(x)
        cands.append(Candidate(sample_id=sid, embedding=np.asarray(emb, dtype=np.float64),
                               mean_activations=mean_r,
                               entropy=entropy(mean_r, entropy_variant)))
    return CandidatePool(cands)


def select_round(pool: CandidatePool, k: int, m_cand: int, policy: str,
                 rng: RngStream, round_index: int = 0) -> SelectionRound:
    """Pick k unselected candidates under the given policy and mark them.

    entropy+kcenter ranks unselected by entropy descending, keeps the top
    m_cand, and runs greedy k-center seeded at the highest-entropy candidate;
    entropy takes the top k directly; kcenter runs over every unselected
    candidate seeded at the first; random draws uniformly without replacement.
    Entropy ties break toward the smaller sample id.
    """
    if policy not in POLICIES:
        raise PreconditionError(f"unknown policy {policy!r}")
    avail = pool.unselected()
    if len(avail) < k:
        raise RoundError(f"need {k} unselected candidates, have {len(avail)}")

    if policy == "random":
        idx = rng.choice(len(avail), size=k, replace=False)
        chosen = [avail[int(i)].sample_id for i in idx]
    elif policy == "entropy":
        ranked = sorted(avail, key=lambda c: (-c.entropy, c.sample_id))
        chosen = [c.sample_id for c in ranked[:k]]
    elif policy == "kcenter":
        picks = greedy_k_center([c.embedding for c in avail], k, seed_index=0)
        chosen = [avail[i].sample_id for i in picks]
    else:  # entropy+kcenter
        ranked = sorted(avail, key=lambda c: (-c.entropy, c.sample_id))
        window = ranked[:max(k, m_cand)]
        picks = greedy_k_center([c.embedding for c in window], k, seed_index=0)
        chosen = [window[i].sample_id for i in picks]

    pool.mark_selected(chosen)
    return SelectionRound(round_index=round_index, k=k, chosen=tuple(chosen),
                          policy=policy, seed=rng.seed)


# ---------------------------------------------------------------------------
# simulated annotator
# ---------------------------------------------------------------------------

@dataclass
class SimulatedAnnotator:
    """Ground-truth oracle with independent bit-flip noise."""

    labels: dict[int, np.ndarray]
    decode_fn: Callable[[np.ndarray], list[Clause]]
    eta: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.eta < 1.0:
            raise PreconditionError(f"error rate must lie in [0,1), got {self.eta}")


@dataclass(frozen=True)
class CorrectionRecord:
    sample_id: int
    labels: np.ndarray                # possibly corrupted ground truth
    corrected_clauses: tuple          # decoded from those labels
    edits: tuple                      # ("add"|"remove", clause key) pairs


def clause_key(clause: Clause) -> tuple:
    """Canonical clause identity: template, qualifier, and bound slot values."""
    return (clause.template_id, clause.qualifier,
            tuple(sorted((name, b.value) for name, b in clause.bindings.items())))


def simulate_feedback(annotator: SimulatedAnnotator, draft_clauses: list[Clause],
                      sample_id: int) -> CorrectionRecord:
    """Answer one query: noisy true labels, re-decoded clauses, and the edit
    list as the symmetric difference against the draft's clause keys."""
    if sample_id not in annotator.labels:
        raise LookupError(f"unknown sample id {sample_id}")
    truth = np.asarray(annotator.labels[sample_id], dtype=np.float64)
    rng = RngStream(annotator.seed).substream("annotator", sample_id)
    flips = (rng.random(truth.shape[0]) < annotator.eta).astype(np.float64)
    labels = np.abs(truth - flips)

    corrected = annotator.decode_fn(labels)
    have = {clause_key(c) for c in draft_clauses}
    want = {clause_key(c) for c in corrected}
    edits = tuple(sorted([("add", k) for k in want - have] +
                         [("remove", k) for k in have - want]))
    return CorrectionRecord(sample_id=sample_id, labels=labels,
                            corrected_clauses=tuple(corrected), edits=edits)


# ---------------------------------------------------------------------------
# round log (append-only JSONL, exact replay)
# ---------------------------------------------------------------------------

_LOG_HEADER = {"format": "round-log", "version": 1}


def append_round_log(path: str, rnd: SelectionRound,
                     entropies: dict[int, float] | None = None) -> None:
    record = {"round": rnd.round_index, "policy": rnd.policy,
              "chosen": list(rnd.chosen), "seed": rnd.seed,
              "entropies": {str(k): v for k, v in sorted((entropies or {}).items())}}
    fresh = not os.path.exists(path) or os.path.getsize(path) == 0
    with open(path, "a", encoding="utf-8") as f:
        if fresh:
            f.write(json.dumps(_LOG_HEADER, sort_keys=True) + "\n")
        f.write(json.dumps(record, sort_keys=True) + "\n")


def load_round_log(path: str) -> list[dict]:
    with open(path, "r", encoding="utf-8") as f:
        lines = [ln for ln in f.read().splitlines() if ln.strip()]
    if not lines:
        raise ParseError("empty round log", 1, 1)
    if json.loads(lines[0]) != _LOG_HEADER:
        raise ParseError("unsupported round log header", 1, 1)
    out = []
    for lineno, line in enumerate(lines[1:], start=2):
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as e:
            raise ParseError(f"bad record: {e.msg}", lineno, e.colno) from e
        rec["entropies"] = {int(k): float(v) for k, v in rec.get("entropies", {}).items()}
        out.append(rec)
    return out
