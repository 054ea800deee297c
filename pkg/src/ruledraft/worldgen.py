"""Synthetic worlds: concepts with priors, boolean rules, templates, and a
corpus of (feature matrix, labels, ground-truth clauses, reference text).

Labels are consistent with the rules by construction: clause sets come from
decoding the rules evaluated on the true concept bits, through the very same
clause decoder used at inference time.
"""

from __future__ import annotations

import dataclasses
import json
import os
from dataclasses import dataclass, field

import numpy as np

from .active import clause_key
from .errors import ConfigurationError, ParseError
from .generation import DecodeLibrary, SlotRegressorParams, decode_rules
from .logic import (RuleTree, and_, blend, evaluate_rules,
                    format_rule_library, leaf, or_, parse_rule_library)
from .rng import RngStream
from .templates import (SlotSpec, TemplateLibrary, TemplateSkeleton,
                        format_template_library, parse_template_library)

_REGIONS = ("frontal", "parietal", "temporal", "occipital",
            "basal", "apical", "central", "peripheral")

DATASET_HEADER = {"format": "dataset", "version": 1}
WORLD_HEADER = {"format": "world", "version": 1}


@dataclass
class WorldSpec:
    k_concepts: int = 16
    r_rules: int = 8
    m_patches: int = 16
    c_feat: int = 32
    n_train: int = 2000
    n_test: int = 200
    noise: float = 0.0
    rare_count: int = 2              # concepts pinned at the rare prevalence
    rare_prevalence: float = 0.02
    prevalence_low: float = 0.2
    prevalence_high: float = 0.5
    blend_rules: int = 0             # leading rules given one soft blend gate
    n_filler_templates: int = 16     # inventory entries beyond the rule-bound ones

    def __post_init__(self):
        if self.k_concepts < 2 or self.r_rules < 1:
            raise ConfigurationError("need at least 2 concepts and 1 rule")
        if self.c_feat < self.k_concepts:
            raise ConfigurationError(
                f"c_feat {self.c_feat} must be >= k_concepts {self.k_concepts} "
                "for an orthonormal concept embedding")
        if self.n_train < 0 or self.n_test < 0:
            raise ConfigurationError("sample counts must be >= 0")
        if self.noise < 0:
            raise ConfigurationError("noise must be >= 0")
        if not (0 <= self.rare_count <= self.k_concepts):
            raise ConfigurationError("rare_count outside [0, k_concepts]")
        if not (0.0 < self.rare_prevalence < 1.0):
            raise ConfigurationError("rare_prevalence must lie in (0,1)")
        if not (0.0 < self.prevalence_low <= self.prevalence_high < 1.0):
            raise ConfigurationError("prevalence bounds must satisfy 0 < low <= high < 1")
        if not (0 <= self.blend_rules <= self.r_rules):
            raise ConfigurationError("blend_rules outside [0, r_rules]")


@dataclass
class Sample:
    sample_id: int
    features: np.ndarray             # (M, C')
    labels: np.ndarray               # (K,) 0/1 floats
    clause_keys: tuple               # canonical ground-truth clause identities
    reference: str
    rule_bits: np.ndarray | None = None       # derived, attached by the world
    template_bits: np.ndarray | None = None   # derived, attached by the world


@dataclass
class SyntheticWorld:
    spec: WorldSpec
    seed: int
    concept_names: list[str]
    priors: np.ndarray               # (K,)
    embed: np.ndarray                # (K, C') rows orthonormal
    rules: list[RuleTree]
    templates: TemplateLibrary
    slot_descriptors: dict[int, dict[str, str]]
    regressors: dict[tuple[int, str], SlotRegressorParams]
    samples: list[Sample] = field(default_factory=list)

    def library(self, rules: list[RuleTree] | None = None) -> DecodeLibrary:
        """Decode library over this world's templates; pass a model's rule
        trees to decode with learned gates instead of the ground truth."""
        return DecodeLibrary(templates=self.templates,
                             rules=self.rules if rules is None else rules,
                             slot_descriptors=self.slot_descriptors,
                             regressors=self.regressors)

    @property
    def train_samples(self) -> list[Sample]:
        return self.samples[:self.spec.n_train]

    @property
    def test_samples(self) -> list[Sample]:
        return self.samples[self.spec.n_train:self.spec.n_train + self.spec.n_test]

    def template_index(self) -> dict[int, int]:
        return {tid: i for i, tid in enumerate(self.templates.ids())}

    def rule_bits(self, labels: np.ndarray) -> np.ndarray:
        acts, _ = evaluate_rules(self.rules, np.asarray(labels, dtype=np.float64))
        return (acts >= 0.5).astype(np.float64)

    def template_bits(self, keys) -> np.ndarray:
        index = self.template_index()
        bits = np.zeros(len(index))
        for k in keys:
            bits[index[k[0]]] = 1.0
        return bits

    def attach_derived(self) -> None:
        for s in self.samples:
            s.rule_bits = self.rule_bits(s.labels)
            s.template_bits = self.template_bits(s.clause_keys)

    def truth_by_id(self) -> dict[int, np.ndarray]:
        return {s.sample_id: s.labels for s in self.samples}

    def clauses_for(self, labels: np.ndarray) -> list:
        """Ground-truth clause set for a label vector, via the clause decoder."""
        bits = np.asarray(labels, dtype=np.float64)
        acts, _ = evaluate_rules(self.rules, bits)
        fired = sorted(int(r.rule_id) for j, r in enumerate(self.rules)
                       if acts[j] >= 0.5)
        pos = {r.rule_id: j for j, r in enumerate(self.rules)}
        activations = {rid: float(acts[pos[rid]]) for rid in fired}
        return decode_rules(fired, activations, bits,
                            np.zeros(self.spec.c_feat), self.library())


# ---------------------------------------------------------------------------
# generation
# ---------------------------------------------------------------------------

def _build_rules(spec: WorldSpec, rng: RngStream) -> list[RuleTree]:
    k = spec.k_concepts
    # global coverage queue: every concept lands in some rule while slots last
    queue = [int(i) for i in rng.substream("leaf-order").permutation(k)]

    def draw(j: int, taken: set[int]) -> int:
        while queue and queue[0] in taken:
            queue.pop(0)
        if queue:
            c = queue.pop(0)
        else:
            pool = [i for i in range(k) if i not in taken]
            c = int(pool[int(rng.substream("leaf-extra", j, len(taken)).integers(0, len(pool)))])
        taken.add(c)
        return c

    rules: list[RuleTree] = []
    for j in range(spec.r_rules):
        form = int(rng.substream("rule-form", j).integers(0, 4))
        taken: set[int] = set()
        a, b = draw(j, taken), draw(j, taken)
        if j < spec.blend_rules:
            root = blend(leaf(a), leaf(b), 0.5)
        elif form == 0:
            root = and_(leaf(a), leaf(b))
        elif form == 1:
            root = or_(leaf(a), leaf(b))
        elif form == 2:
            root = and_(leaf(a), leaf(b, negated=True))
        else:
            root = or_(leaf(a), and_(leaf(b), leaf(draw(j, taken))))
        rules.append(RuleTree(rule_id=j, root=root, name=f"pattern_{j:02d}",
                              template_ids=(100 + j,)))
    return rules


def _build_templates(spec: WorldSpec) -> tuple[TemplateLibrary, dict, dict]:
    templates: list[TemplateSkeleton] = []
    descriptors: dict[int, dict[str, str]] = {}
    regressors: dict[tuple[int, str], SlotRegressorParams] = {}
    for j in range(spec.r_rules):
        tid = 100 + j
        if j % 2 == 0:
            templates.append(TemplateSkeleton(
                template_id=tid, text=f"Pattern {j:02d} is present."))
        else:
            templates.append(TemplateSkeleton(
                template_id=tid,
                text=f"Pattern {j:02d} is present in the {{site}} region.",
                slots=(SlotSpec(name="site", kind="region", required=True),)))
            descriptors[j] = {"site": _REGIONS[j % len(_REGIONS)]}
    for i in range(spec.n_filler_templates):
        tid = 900 + i
        if i == 0:
            # measurement template: exercises the numeric-slot regressor path
            templates.append(TemplateSkeleton(
                template_id=tid, text="Largest focus measures {size} cm.",
                slots=(SlotSpec(name="size", kind="measurement", required=True),)))
            regressors[(tid, "size")] = SlotRegressorParams(
                weights=np.zeros(spec.c_feat), bias=2.0, units="cm")
        else:
            templates.append(TemplateSkeleton(
                template_id=tid, text=f"No change in series {i:02d}."))
    return TemplateLibrary(templates), descriptors, regressors


def gen_synthetic_dataset(spec: WorldSpec, seed: int) -> SyntheticWorld:
    """Deterministic world and corpus for one (spec, seed) pair."""
    rng = RngStream(seed).substream("world")
    k, m, c = spec.k_concepts, spec.m_patches, spec.c_feat

    concept_names = [f"c{i:02d}" for i in range(k)]
    priors = rng.substream("priors").random(k) * (
        spec.prevalence_high - spec.prevalence_low) + spec.prevalence_low
    if spec.rare_count:
        rare = rng.substream("rare-pick").choice(k, spec.rare_count, replace=False)
        priors[np.asarray(rare, dtype=int)] = spec.rare_prevalence

    # orthonormal concept directions in feature space
    basis = rng.substream("embed").normal(0.0, 1.0, (c, k))
    q, _ = np.linalg.qr(basis)
    embed = q.T[:k]                                   # (K, C'), rows orthonormal

    rules = _build_rules(spec, rng)
    for r in rules:
        r.validate(k)
    templates, descriptors, regressors = _build_templates(spec)

    world = SyntheticWorld(spec=spec, seed=seed, concept_names=concept_names,
                           priors=priors, embed=embed, rules=rules,
                           templates=templates, slot_descriptors=descriptors,
                           regressors=regressors)

    n = spec.n_train + spec.n_test
    for i in range(n):
        s_rng = rng.substream("sample", i)
        bits = (s_rng.random(k) < priors).astype(np.float64)
        signal = (2.0 * bits - 1.0) @ embed           # (C',)
        features = np.tile(signal, (m, 1))
        if spec.noise > 0.0:
            features = features + spec.noise * s_rng.normal(0.0, 1.0, (m, c))

        clauses = world.clauses_for(bits)
        keys = tuple(clause_key(cl) for cl in clauses)
        reference = " ".join(cl.text for cl in clauses) if clauses else "No acute findings."
        world.samples.append(Sample(sample_id=i, features=features, labels=bits,
                                    clause_keys=keys, reference=reference))
    world.attach_derived()
    return world


# ---------------------------------------------------------------------------
# persistence
# ---------------------------------------------------------------------------

def _clauses_to_json(keys) -> list:
    return [{"template_id": t, "qualifier": q, "slots": [list(p) for p in slots]}
            for (t, q, slots) in keys]


def _clauses_from_json(raw) -> tuple:
    return tuple((int(c["template_id"]), str(c["qualifier"]),
                  tuple((str(n), str(v)) for n, v in c["slots"])) for c in raw)


def save_dataset(samples: list[Sample], path: str) -> None:
    with open(path, "w", encoding="utf-8") as f:
        f.write(json.dumps(DATASET_HEADER, sort_keys=True) + "\n")
        for s in samples:
            rec = {"id": s.sample_id,
                   "features": s.features.tolist(),
                   "labels": [int(v) for v in s.labels],
                   "clauses": _clauses_to_json(s.clause_keys),
                   "reference": s.reference}
            f.write(json.dumps(rec, sort_keys=True) + "\n")


def load_dataset(path: str) -> list[Sample]:
    samples: list[Sample] = []
    with open(path, "r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as e:
                raise ParseError(f"bad JSON: {e.msg}", lineno, 1) from e
            if lineno == 1:
                if rec != DATASET_HEADER:
                    raise ParseError(f"expected dataset header, found {rec!r}", 1, 1)
                continue
            samples.append(Sample(
                sample_id=int(rec["id"]),
                features=np.asarray(rec["features"], dtype=np.float64),
                labels=np.asarray(rec["labels"], dtype=np.float64),
                clause_keys=_clauses_from_json(rec["clauses"]),
                reference=str(rec["reference"])))
    return samples


def save_world(world: SyntheticWorld, directory: str) -> None:
    os.makedirs(directory, exist_ok=True)
    meta = dict(WORLD_HEADER)
    meta.update({
        "seed": world.seed,
        "spec": dataclasses.asdict(world.spec),
        "concept_names": world.concept_names,
        "priors": world.priors.tolist(),
        "embed": world.embed.tolist(),
        "slot_descriptors": {str(k): v for k, v in world.slot_descriptors.items()},
        "regressors": [{"template_id": tid, "slot": slot,
                        "weights": reg.weights.tolist(), "bias": reg.bias,
                        "units": reg.units}
                       for (tid, slot), reg in sorted(world.regressors.items())],
    })
    with open(os.path.join(directory, "world.json"), "w", encoding="utf-8") as f:
        json.dump(meta, f, sort_keys=True, indent=2)
        f.write("\n")
    with open(os.path.join(directory, "rules.txt"), "w", encoding="utf-8") as f:
        f.write(format_rule_library(world.rules, world.concept_names))
    with open(os.path.join(directory, "templates.txt"), "w", encoding="utf-8") as f:
        f.write(format_template_library(world.templates))
    save_dataset(world.samples, os.path.join(directory, "dataset.jsonl"))


def load_world(directory: str) -> SyntheticWorld:
    with open(os.path.join(directory, "world.json"), "r", encoding="utf-8") as f:
        meta = json.load(f)
    if meta.get("format") != "world" or meta.get("version") != 1:
        raise ParseError("not a world directory (bad world.json header)", 1, 1)
    spec = WorldSpec(**meta["spec"])
    concept_names = list(meta["concept_names"])
    with open(os.path.join(directory, "rules.txt"), "r", encoding="utf-8") as f:
        rules = parse_rule_library(f.read(), concept_names)
    with open(os.path.join(directory, "templates.txt"), "r", encoding="utf-8") as f:
        templates = parse_template_library(f.read())
    regressors = {(int(r["template_id"]), str(r["slot"])): SlotRegressorParams(
        weights=np.asarray(r["weights"], dtype=np.float64),
        bias=float(r["bias"]), units=str(r["units"]))
        for r in meta["regressors"]}
    world = SyntheticWorld(
        spec=spec, seed=int(meta["seed"]), concept_names=concept_names,
        priors=np.asarray(meta["priors"], dtype=np.float64),
        embed=np.asarray(meta["embed"], dtype=np.float64),
        rules=rules, templates=templates,
        slot_descriptors={int(k): dict(v)
                          for k, v in meta["slot_descriptors"].items()},
        regressors=regressors,
        samples=load_dataset(os.path.join(directory, "dataset.jsonl")))
    world.attach_derived()
    return world
