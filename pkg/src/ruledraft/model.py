"""Full pipeline bundle: projection, encoder, concept head, rule trees and
template-selection head behind one named-parameter dict.

The model owns live parameter arrays so the optimizer can update them in
place. Gate values are stored as raw (pre-sigmoid) arrays per rule and synced
into the trees before every evaluation. Backward is hand-derived end to end;
no autodiff anywhere.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass

import numpy as np

from .config import TrainConfig
from .errors import ConfigurationError, DimensionError
from .generation import DecodeLibrary, Draft, decode_rules, fill_templates, verify_draft
from .logic import (RuleTree, backprop_rule_tree, evaluate_rules, harden,
                    harden_backward)
from .nn import (ConceptHeadParams, EncoderParams, ProjectionParams,
                 check_feature_matrix, encode_attend, encode_attend_backward,
                 pool_mean, pool_mean_backward, predict_concepts,
                 predict_concepts_backward, project_features,
                 project_features_backward)
from .retrieval import ExemplarStore, cosine_similarity, retrieve
from .rng import RngStream

_ENC_KEYS = ("wq", "wk", "wv", "wo", "w1", "w2",
             "ln1_gain", "ln1_bias", "ln2_gain", "ln2_bias")
_HEAD_KEYS = ("w1", "b1", "w2", "b2")


@dataclass
class ForwardCache:
    """Every intermediate needed by backward, for one sample."""

    x: np.ndarray
    z: np.ndarray            # projected patches (M, D)
    v: np.ndarray            # retrieval embedding (D,)
    x_enc: np.ndarray
    enc_cache: object
    xbar: np.ndarray
    c_hat: np.ndarray
    head_cache: object
    c_eval: np.ndarray       # c_hat, or hardened bits under the STE path
    hardened: bool
    r: np.ndarray            # rule activations, model rule order
    tree_caches: list
    t_logits: np.ndarray
    t_hat: np.ndarray        # template-selection probabilities


class PipelineModel:
    """Bundles all trainable tensors plus the rule trees they parametrize."""

    def __init__(self, cfg: TrainConfig, n_templates: int, rules: list[RuleTree]):
        if n_templates < 1:
            raise ConfigurationError("model needs at least one template")
        self.cfg = cfg
        self.n_templates = int(n_templates)

        rng = RngStream(cfg.seed).substream("model-init")
        self.proj = ProjectionParams.init(rng.substream("proj"), cfg.c_feat, cfg.d_proj)
        self.enc = EncoderParams.init(rng.substream("encoder"), cfg.c_feat,
                                      cfg.n_heads, cfg.ff_dim)
        self.head = ConceptHeadParams.init(rng.substream("head"), cfg.c_feat,
                                           cfg.h_mlp, cfg.k_concepts,
                                           cfg.dropout_rate)
        t_rng = rng.substream("task-head")
        self.task_w = t_rng.normal(0.0, 1.0 / np.sqrt(cfg.c_feat),
                                   (cfg.c_feat, self.n_templates))
        self.task_b = np.zeros(self.n_templates)

        self.rules = [copy.deepcopy(r) for r in rules]
        ids = [r.rule_id for r in self.rules]
        if len(set(ids)) != len(ids):
            raise ConfigurationError("duplicate rule ids handed to model")
        for r in self.rules:
            r.validate(cfg.k_concepts)
        self.gate_arrays: dict[int, np.ndarray] = {
            r.rule_id: r.gate_values() for r in self.rules}

    # -- parameter registry -------------------------------------------------

    def params(self) -> dict[str, np.ndarray]:
        """Live references; the optimizer mutates these in place."""
        p: dict[str, np.ndarray] = {
            "proj.weight": self.proj.weight, "proj.bias": self.proj.bias}
        for k in _ENC_KEYS:
            p[f"enc.{k}"] = getattr(self.enc, k)
        for k in _HEAD_KEYS:
            p[f"head.{k}"] = getattr(self.head, k)
        p["task.weight"] = self.task_w
        p["task.bias"] = self.task_b
        for rid in sorted(self.gate_arrays):
            if self.gate_arrays[rid].size:
                p[f"gates.{rid}"] = self.gate_arrays[rid]
        return p

    def zero_grads(self) -> dict[str, np.ndarray]:
        return {name: np.zeros_like(arr) for name, arr in self.params().items()}

    def _sync_gates(self) -> None:
        for r in self.rules:
            arr = self.gate_arrays[r.rule_id]
            if arr.size:
                r.set_gate_values(arr)

    # -- forward / backward ---------------------------------------------------

    def forward(self, x: np.ndarray, dropout: bool = False,
                rng: RngStream | None = None) -> ForwardCache:
        self._sync_gates()
        x = check_feature_matrix(x)
        if x.shape != (self.cfg.m_patches, self.cfg.c_feat):
            raise DimensionError(
                f"expected features {(self.cfg.m_patches, self.cfg.c_feat)}, got {x.shape}")
        z = project_features(x, self.proj)
        v = pool_mean(z)
        x_enc, enc_cache = encode_attend(x, self.enc)
        xbar = pool_mean(x_enc)
        c_hat, head_cache = predict_concepts(xbar, self.head, dropout=dropout, rng=rng)
        hardened = bool(self.cfg.harden_training)
        c_eval = harden(c_hat, self.cfg.tau_h) if hardened else c_hat
        r, tree_caches = evaluate_rules(self.rules, c_eval, self.cfg.operator_family)
        t_logits = xbar @ self.task_w + self.task_b
        t_hat = 1.0 / (1.0 + np.exp(-t_logits))
        return ForwardCache(x=x, z=z, v=v, x_enc=x_enc, enc_cache=enc_cache,
                            xbar=xbar, c_hat=c_hat, head_cache=head_cache,
                            c_eval=c_eval, hardened=hardened, r=r,
                            tree_caches=tree_caches, t_logits=t_logits,
                            t_hat=t_hat)

    def backward(self, fc: ForwardCache, dc_hat: np.ndarray | None = None,
                 dr: np.ndarray | None = None,
                 dt_hat: np.ndarray | None = None):
        """Accumulate the three loss paths into one grads dict.

        dc_hat: upstream on concept probabilities; dr: upstream on rule
        activations; dt_hat: upstream on template-selection probabilities.
        Returns (grads, dx).
        """
        grads = self.zero_grads()
        k = self.cfg.k_concepts
        dc_total = np.zeros(k)
        if dc_hat is not None:
            dc_total += np.asarray(dc_hat, dtype=np.float64)

        if dr is not None:
            dr = np.asarray(dr, dtype=np.float64)
            if dr.shape != (len(self.rules),):
                raise DimensionError(f"rule upstream shape {dr.shape} != ({len(self.rules)},)")
            dc_rules = np.zeros(k)
            for j, tree in enumerate(self.rules):
                dcj, dalpha = backprop_rule_tree(tree, fc.tree_caches[j], float(dr[j]))
                dc_rules += dcj
                if dalpha.size:
                    gates = tree.gates()
                    alphas = np.array([g.alpha for g in gates])
                    grads[f"gates.{tree.rule_id}"] += dalpha * alphas * (1.0 - alphas)
            # straight-through: the hardening step passes gradients unchanged
            dc_total += harden_backward(dc_rules) if fc.hardened else dc_rules

        dxbar = np.zeros_like(fc.xbar)
        if dt_hat is not None:
            dlogits = np.asarray(dt_hat, dtype=np.float64) * fc.t_hat * (1.0 - fc.t_hat)
            grads["task.weight"] += np.outer(fc.xbar, dlogits)
            grads["task.bias"] += dlogits
            dxbar += self.task_w @ dlogits

        dxbar_head, hgrads = predict_concepts_backward(fc.head_cache, self.head, dc_total)
        for key in _HEAD_KEYS:
            grads[f"head.{key}"] += hgrads[key]
        dxbar += dxbar_head

        dx_enc = pool_mean_backward(fc.x.shape[0], dxbar)
        dx, egrads = encode_attend_backward(fc.enc_cache, self.enc, dx_enc)
        for key in _ENC_KEYS:
            grads[f"enc.{key}"] += egrads[key]
        return grads, dx

    # -- protocols used by the selection and retrieval layers ----------------

    def rule_activations(self, x: np.ndarray, dropout: bool = False,
                         rng: RngStream | None = None) -> np.ndarray:
        return self.forward(x, dropout=dropout, rng=rng).r

    def concepts(self, x: np.ndarray) -> np.ndarray:
        return self.forward(x).c_hat

    def joint_embedding(self, x: np.ndarray) -> np.ndarray:
        fc = self.forward(x)
        return np.concatenate([fc.v, fc.c_hat])

    def rule_ids(self) -> list[int]:
        return [r.rule_id for r in self.rules]


def infer_draft(model: PipelineModel, x: np.ndarray, library: DecodeLibrary,
                store: ExemplarStore | None = None, n_r: int = 5,
                kg_scores: dict[int, float] | None = None,
                verify_threshold: float = 0.5) -> tuple[Draft, ForwardCache]:
    """Full single-sample inference: concepts, fired rules, clause decoding,
    evidence retrieval, verification. Returns the verified draft plus the
    forward cache (callers reuse c_hat / embeddings / activations)."""
    fc = model.forward(x)
    bits = harden(fc.c_hat, model.cfg.tau_h)
    acts_hard, _ = evaluate_rules(model.rules, bits, model.cfg.operator_family)
    soft = {r.rule_id: float(fc.r[j]) for j, r in enumerate(model.rules)}
    fired = [r.rule_id for j, r in enumerate(model.rules) if acts_hard[j] >= 0.5]
    fired.sort(key=lambda rid: (-soft[rid], rid))
    # cap by activation, then emit in canonical rule-id order
    top = sorted(fired[:model.cfg.max_clauses])

    clauses = decode_rules(top, soft, fc.c_hat, fc.xbar, library, kg_scores)
    exemplars, sims = [], {}
    if store is not None and len(store) > 0 and n_r > 0:
        exemplars = retrieve(fc.v, store, n_r)
        sims = {e.index: max(0.0, min(1.0, cosine_similarity(fc.v, e)))
                for e in exemplars}
    draft = fill_templates(clauses, exemplars, library, sims)
    return verify_draft(draft, verify_threshold), fc
