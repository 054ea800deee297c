"""Composite uncertainty-weighted loss, the training loop, and evaluation.

The four task losses (rep, concept, task, rule) are combined through learned
log-variances s_i:

    total = sum_i [ exp(-s_i)/2 * L_i + s_i/2 ] + ridge * ||theta||^2

so the effective weight on task i is exp(-s_i)/2 = 1/(2*sigma_i^2) and
d total / d s_i = -exp(-s_i) * L_i / 2 + 1/2. Tasks absent from a step
contribute neither loss nor s-gradient.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field

import numpy as np

from .active import (SimulatedAnnotator, build_candidate_pool, clause_key,
                     append_round_log, select_round, simulate_feedback)
from .checkpoint import Checkpoint, load_checkpoint, restore_params
from .config import TrainConfig
from .errors import ConfigurationError, ParseError, PreconditionError, TrainingError
from .model import PipelineModel, infer_draft
from .nn import OptimState, adam_step, bce_loss, focal_loss
from .rng import RngStream
from .textmetrics import rouge_l, sentence_bleu
from .worldgen import Sample, SyntheticWorld

TASKS = ("rep", "concept", "task", "rule")

METRICS_HEADER = {"format": "metrics", "version": 1}


def _exact_log_inverse(target: float) -> float:
    """s with exp(-s)/2 == target exactly when a neighbouring double allows it."""
    s = math.log(1.0 / (2.0 * target))
    if math.exp(-s) / 2.0 == target:
        return s
    for direction in (math.inf, -math.inf):
        cand = s
        for _ in range(8):
            cand = math.nextafter(cand, direction)
            if math.exp(-cand) / 2.0 == target:
                return cand
    return s


@dataclass
class LossWeights:
    """Learned log-variances, one per task, in TASKS order."""

    s: np.ndarray

    def __post_init__(self):
        self.s = np.asarray(self.s, dtype=np.float64)
        if self.s.shape != (len(TASKS),):
            raise ConfigurationError(f"need {len(TASKS)} log-variances, got {self.s.shape}")

    @classmethod
    def init(cls, lambdas=(1.0, 2.0, 1.0, 1.0)) -> "LossWeights":
        if len(lambdas) != len(TASKS) or any(l <= 0 for l in lambdas):
            raise ConfigurationError("need 4 positive initial weights")
        return cls(s=np.array([_exact_log_inverse(float(l)) for l in lambdas]))

    def effective(self) -> dict[str, float]:
        return {task: float(np.exp(-self.s[i]) / 2.0) for i, task in enumerate(TASKS)}


def composite_loss(parts: dict[str, float], weights: LossWeights,
                   ridge: float = 0.0, theta_norm_sq: float = 0.0):
    """Returns (total, effective weight dict, ds array aligned with TASKS)."""
    for task in parts:
        if task not in TASKS:
            raise PreconditionError(f"unknown loss task {task!r}")
        if not np.isfinite(parts[task]):
            raise TrainingError(f"non-finite loss for task '{task}'")
    effective = weights.effective()
    total = ridge * theta_norm_sq
    ds = np.zeros(len(TASKS))
    for i, task in enumerate(TASKS):
        if task not in parts:
            continue
        li = float(parts[task])
        w = float(np.exp(-weights.s[i])) / 2.0     # inf-safe, checked below
        total += w * li + float(weights.s[i]) / 2.0
        ds[i] = -w * li + 0.5
    if not np.isfinite(total):
        raise TrainingError("non-finite composite loss")
    return float(total), effective, ds


# ---------------------------------------------------------------------------
# training loop
# ---------------------------------------------------------------------------

@dataclass
class TrainResult:
    model: PipelineModel
    weights: LossWeights
    opt: OptimState
    trace: list[dict] = field(default_factory=list)
    rounds: list = field(default_factory=list)
    labeled_ids: list[int] = field(default_factory=list)

    def checkpoint(self, config_hash: str, epoch: int) -> Checkpoint:
        params = dict(self.model.params())
        params["loss.s"] = self.weights.s
        return Checkpoint(
            params={k: v.copy() for k, v in params.items()},
            config_hash=config_hash, epoch=epoch, opt_step=self.opt.step,
            opt_m={k: v.copy() for k, v in self.opt.m.items()},
            opt_v={k: v.copy() for k, v in self.opt.v.items()})


def _sample_losses(model: PipelineModel, cfg: TrainConfig,
                   sample: Sample, labels: np.ndarray, rule_bits: np.ndarray,
                   template_bits: np.ndarray, dropout_rng: RngStream):
    """Forward one sample; returns (parts dict, upstream grads per loss path, cache)."""
    use_dropout = cfg.dropout_rate > 0.0
    fc = model.forward(sample.features, dropout=use_dropout,
                       rng=dropout_rng if use_dropout else None)
    parts: dict[str, float] = {}
    l_c, dc = focal_loss(fc.c_hat, labels, cfg.gamma, cfg.alpha_bal)
    parts["concept"] = l_c
    l_t, dt = bce_loss(fc.t_hat, template_bits)
    parts["task"] = l_t
    dr = None
    if cfg.use_rule_loss:
        l_r, dr = bce_loss(fc.r, rule_bits)
        parts["rule"] = l_r
    return parts, (dc, dr, dt), fc


def train_loop(world: SyntheticWorld, cfg: TrainConfig, active: str = "off",
               policy: str = "entropy+kcenter",
               annotator: SimulatedAnnotator | None = None,
               round_log_path: str | None = None,
               model: PipelineModel | None = None,
               weights: LossWeights | None = None) -> TrainResult:
    """Mini-batch Adam over the composite loss.

    active="off" trains on every training sample from the start; active="on"
    starts with no labels and runs one selection round per epoch, revealing
    (possibly noisy) annotator labels only for the chosen sample ids.
    Pass model/weights to resume from restored state instead of fresh init.
    """
    if active not in ("off", "on"):
        raise PreconditionError(f"active must be 'off' or 'on', got {active!r}")
    train = world.train_samples
    by_id = {s.sample_id: s for s in train}
    if model is None:
        model = PipelineModel(cfg, n_templates=len(world.templates), rules=world.rules)
    if weights is None:
        weights = LossWeights.init(cfg.loss_weight_init)
    params = dict(model.params())
    params["loss.s"] = weights.s
    opt = OptimState(lr=cfg.lr, beta1=cfg.beta1, beta2=cfg.beta2, eps=cfg.adam_eps)
    result = TrainResult(model=model, weights=weights, opt=opt)
    cfg_hash = cfg.config_hash()

    if annotator is None:
        annotator = SimulatedAnnotator(labels=world.truth_by_id(),
                                       decode_fn=world.clauses_for,
                                       eta=0.0, seed=cfg.seed)

    rng = RngStream(cfg.seed).substream("train")
    library = world.library(model.rules)

    # revealed supervision per sample id
    if active == "off":
        revealed = {s.sample_id: (s.labels, s.rule_bits, s.template_bits) for s in train}
    else:
        revealed = {}
    last_good = result.checkpoint(cfg_hash, epoch=0)

    ridge_names = set(model.params())    # the log-variances are not decayed

    for epoch in range(cfg.epochs):
        if active == "on":
            pool_samples = [(s.sample_id, s.features) for s in train
                            if s.sample_id not in revealed]
            pool = build_candidate_pool(model, pool_samples, cfg.t_mc,
                                        rng.substream("mc-round", epoch),
                                        cfg.entropy_variant)
            rnd = select_round(pool, k=cfg.k_select, m_cand=cfg.m_cand,
                               policy=policy, rng=rng.substream("select", epoch),
                               round_index=epoch)
            result.rounds.append(rnd)
            if round_log_path:
                entropies = {c.sample_id: c.entropy for c in pool.candidates()
                             if c.sample_id in rnd.chosen}
                append_round_log(round_log_path, rnd, entropies)
            for sid in rnd.chosen:
                draft, _ = infer_draft(model, by_id[sid].features, library, n_r=0)
                rec = simulate_feedback(annotator, draft.clauses, sid)
                keys = tuple(clause_key(c) for c in rec.corrected_clauses)
                revealed[sid] = (rec.labels, world.rule_bits(rec.labels),
                                 world.template_bits(keys))

        labeled_ids = sorted(revealed)
        order = [labeled_ids[i] for i in
                 rng.substream("shuffle", epoch).permutation(len(labeled_ids))]
        epoch_parts = {"concept": 0.0, "task": 0.0, "rule": 0.0}
        epoch_total = 0.0
        n_batches = 0

        try:
            for start in range(0, len(order), cfg.batch_size):
                batch = order[start:start + cfg.batch_size]
                if not batch:
                    continue
                b = len(batch)
                grads = model.zero_grads()
                grads["loss.s"] = np.zeros_like(weights.s)
                batch_parts = {k: 0.0 for k in ("concept", "task", "rule")}
                eff = weights.effective()
                if not all(np.isfinite(v) for v in eff.values()):
                    raise TrainingError("non-finite loss weights")
                for sid in batch:
                    sample = by_id[sid]
                    labels, rule_bits, template_bits = revealed[sid]
                    parts, (dc, dr, dt), fc = _sample_losses(
                        model, cfg, sample, labels, rule_bits,
                        template_bits, rng.substream("dropout", epoch, sid))
                    for k, v in parts.items():
                        batch_parts[k] += v / b
                    sgrads, _ = model.backward(
                        fc,
                        dc_hat=eff["concept"] / b * dc,
                        dr=None if dr is None else eff["rule"] / b * dr,
                        dt_hat=eff["task"] / b * dt)
                    for name, g in sgrads.items():
                        grads[name] += g
                if not cfg.use_rule_loss:
                    del batch_parts["rule"]

                theta_sq = sum(float(np.sum(params[n] ** 2)) for n in sorted(ridge_names))
                total, _, ds = composite_loss(batch_parts, weights,
                                              ridge=cfg.ridge, theta_norm_sq=theta_sq)
                grads["loss.s"] += ds
                if cfg.ridge > 0.0:
                    for name in ridge_names:
                        grads[name] += 2.0 * cfg.ridge * params[name]
                adam_step(params, grads, opt)

                for k, v in batch_parts.items():
                    epoch_parts[k] += v
                epoch_total += total
                n_batches += 1
        except TrainingError as e:
            e.checkpoint = last_good
            raise

        denom = max(n_batches, 1)
        eff = weights.effective()
        result.trace.append({
            "epoch": epoch,
            "labeled": len(labeled_ids),
            "n_batches": n_batches,
            "loss_total": epoch_total / denom,
            "loss_concept": epoch_parts["concept"] / denom,
            "loss_task": epoch_parts["task"] / denom,
            "loss_rule": epoch_parts["rule"] / denom,
            "w_rep": eff["rep"], "w_concept": eff["concept"],
            "w_task": eff["task"], "w_rule": eff["rule"],
        })
        last_good = result.checkpoint(cfg_hash, epoch=epoch + 1)

    result.labeled_ids = sorted(revealed)
    return result


# ---------------------------------------------------------------------------
# evaluation
# ---------------------------------------------------------------------------

def _macro_f1(truth: np.ndarray, pred: np.ndarray) -> float:
    """Mean per-concept F1; concepts absent from both sides count as perfect."""
    scores = []
    for j in range(truth.shape[1]):
        tp = float(np.sum((truth[:, j] == 1) & (pred[:, j] == 1)))
        fp = float(np.sum((truth[:, j] == 0) & (pred[:, j] == 1)))
        fn = float(np.sum((truth[:, j] == 1) & (pred[:, j] == 0)))
        if tp + fp + fn == 0:
            scores.append(1.0)
        else:
            scores.append(2.0 * tp / (2.0 * tp + fp + fn))
    return float(np.mean(scores))


def _rule_auc(truth: np.ndarray, score: np.ndarray) -> float:
    """Macro ROC AUC over rules; single-class rules are skipped."""
    from sklearn.metrics import roc_auc_score

    aucs = []
    for j in range(truth.shape[1]):
        col = truth[:, j]
        if col.min() == col.max():
            continue
        aucs.append(float(roc_auc_score(col, score[:, j])))
    return float(np.mean(aucs)) if aucs else 0.5


def evaluate(model: PipelineModel, samples: list[Sample], world: SyntheticWorld,
             cfg: TrainConfig, store=None) -> dict:
    """Decode every sample and score text, concepts, rules, and clause sets."""
    if not samples:
        raise PreconditionError("cannot evaluate on an empty split")
    library = world.library(model.rules)
    k = cfg.k_concepts
    n = len(samples)
    truth_c = np.zeros((n, k))
    pred_c = np.zeros((n, k))
    truth_r = np.zeros((n, len(model.rules)))
    score_r = np.zeros((n, len(model.rules)))
    inter = pred_total = gt_total = 0
    bleu_sum = np.zeros(4)
    rouge_sum = 0.0
    flagged = 0

    for i, s in enumerate(samples):
        draft, fc = infer_draft(model, s.features, library, store=store,
                                n_r=cfg.n_r, verify_threshold=cfg.verify_threshold)
        truth_c[i] = s.labels
        pred_c[i] = (fc.c_hat >= cfg.tau_h).astype(np.float64)
        truth_r[i] = s.rule_bits if s.rule_bits is not None else world.rule_bits(s.labels)
        score_r[i] = fc.r
        pred_keys = {clause_key(c) for c in draft.clauses}
        gt_keys = set(s.clause_keys)
        inter += len(pred_keys & gt_keys)
        pred_total += len(pred_keys)
        gt_total += len(gt_keys)
        bleu_sum += np.array(sentence_bleu(draft.text, s.reference))
        rouge_sum += rouge_l(draft.text, s.reference)
        flagged += int(draft.review_required)

    return {
        "n": n,
        "concept_macro_f1": _macro_f1(truth_c, pred_c),
        "rule_auc": _rule_auc(truth_r, score_r),
        "clause_precision": inter / pred_total if pred_total else 1.0,
        "clause_recall": inter / gt_total if gt_total else 1.0,
        "bleu1": float(bleu_sum[0] / n), "bleu2": float(bleu_sum[1] / n),
        "bleu3": float(bleu_sum[2] / n), "bleu4": float(bleu_sum[3] / n),
        "rouge_l": rouge_sum / n,
        "flagged_rate": flagged / n,
    }


def evaluate_checkpoint(path: str, cfg: TrainConfig, world: SyntheticWorld,
                        samples: list[Sample] | None = None, store=None) -> dict:
    """Rebuild the model from a checkpoint (config hash enforced) and evaluate."""
    ckpt = load_checkpoint(path, expected_hash=cfg.config_hash())
    model = PipelineModel(cfg, n_templates=len(world.templates), rules=world.rules)
    weights = LossWeights.init(cfg.loss_weight_init)
    params = dict(model.params())
    params["loss.s"] = weights.s
    restore_params(params, ckpt.params)
    return evaluate(model, samples if samples is not None else world.test_samples,
                    world, cfg, store=store)


# ---------------------------------------------------------------------------
# metrics persistence
# ---------------------------------------------------------------------------

def append_metrics(path: str, record: dict) -> None:
    new_file = not os.path.exists(path) or os.path.getsize(path) == 0
    with open(path, "a", encoding="utf-8") as f:
        if new_file:
            f.write(json.dumps(METRICS_HEADER, sort_keys=True) + "\n")
        f.write(json.dumps(record, sort_keys=True) + "\n")


def load_metrics(path: str) -> list[dict]:
    records = []
    with open(path, "r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            rec = json.loads(line)
            if lineno == 1:
                if rec != METRICS_HEADER:
                    raise ParseError(f"expected metrics header, found {rec!r}", 1, 1)
                continue
            records.append(rec)
    return records
