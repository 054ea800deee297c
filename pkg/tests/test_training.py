import json
import math

import numpy as np
import pytest

from ruledraft.active import SimulatedAnnotator, load_round_log
from ruledraft.checkpoint import save_checkpoint
from ruledraft.config import TrainConfig
from ruledraft.errors import (CompatibilityError, ParseError,
                              PreconditionError, TrainingError)
from ruledraft.training import (TASKS, LossWeights, append_metrics,
                                composite_loss, evaluate,
                                evaluate_checkpoint, load_metrics, train_loop)
from ruledraft.worldgen import WorldSpec, gen_synthetic_dataset

TINY_SPEC = WorldSpec(k_concepts=6, r_rules=4, m_patches=4, c_feat=8,
                      n_train=48, n_test=16, rare_count=0,
                      n_filler_templates=2)
TINY_CFG = dict(m_patches=4, c_feat=8, d_proj=6, h_mlp=16, k_concepts=6,
                n_heads=2, ff_dim=16, epochs=2, batch_size=6, lr=1e-3, seed=3)


@pytest.fixture(scope="module")
def tiny_world():
    return gen_synthetic_dataset(TINY_SPEC, seed=21)


class TestLossWeights:
    def test_init_effective_weights_exact(self):
        w = LossWeights.init((1.0, 2.0, 1.0, 1.0))
        eff = w.effective()
        assert eff == {"rep": 1.0, "concept": 2.0, "task": 1.0, "rule": 1.0}

    def test_init_is_log_variance(self):
        w = LossWeights.init((1.0, 2.0, 1.0, 1.0))
        # s = ln sigma^2 and weight = 1/(2 sigma^2)
        for i, lam in enumerate((1.0, 2.0, 1.0, 1.0)):
            sigma_sq = math.exp(w.s[i])
            assert 1.0 / (2.0 * sigma_sq) == pytest.approx(lam, rel=1e-15)

    def test_arbitrary_lambdas(self):
        w = LossWeights.init((0.7, 3.3, 0.1, 5.0))
        eff = w.effective()
        for task, lam in zip(TASKS, (0.7, 3.3, 0.1, 5.0)):
            assert eff[task] == pytest.approx(lam, rel=1e-14)

    def test_bad_init(self):
        from ruledraft.errors import ConfigurationError
        with pytest.raises(ConfigurationError):
            LossWeights.init((1.0, 2.0))
        with pytest.raises(ConfigurationError):
            LossWeights.init((1.0, 0.0, 1.0, 1.0))


class TestCompositeLoss:
    def test_hand_formula(self):
        w = LossWeights(s=np.array([0.3, -0.2, 0.5, 0.0]))
        parts = {"rep": 0.4, "concept": 1.1, "task": 0.9, "rule": 0.25}
        total, eff, ds = composite_loss(parts, w, ridge=1e-2, theta_norm_sq=3.0)
        expect = 1e-2 * 3.0
        for i, task in enumerate(TASKS):
            expect += math.exp(-w.s[i]) / 2.0 * parts[task] + w.s[i] / 2.0
        assert total == pytest.approx(expect, rel=1e-15)
        for i, task in enumerate(TASKS):
            assert eff[task] == pytest.approx(math.exp(-w.s[i]) / 2.0, rel=1e-15)
            assert ds[i] == pytest.approx(
                -math.exp(-w.s[i]) * parts[task] / 2.0 + 0.5, rel=1e-15)

    def test_ds_matches_central_difference(self):
        parts = {"concept": 1.3, "rule": 0.45}
        s0 = np.array([0.1, -0.4, 0.2, 0.6])
        _, _, ds = composite_loss(parts, LossWeights(s=s0.copy()))
        h = 1e-7
        for i in range(4):
            sp, sm = s0.copy(), s0.copy()
            sp[i] += h
            sm[i] -= h
            fp = composite_loss(parts, LossWeights(s=sp))[0]
            fm = composite_loss(parts, LossWeights(s=sm))[0]
            assert ds[i] == pytest.approx((fp - fm) / (2 * h), abs=1e-6)

    def test_missing_task_contributes_nothing(self):
        w1 = LossWeights(s=np.array([0.0, 0.1, 0.2, 0.3]))
        w2 = LossWeights(s=np.array([5.0, 0.1, 0.2, 0.3]))   # only rep differs
        parts = {"concept": 1.0, "task": 2.0, "rule": 3.0}
        t1, _, ds1 = composite_loss(parts, w1)
        t2, _, ds2 = composite_loss(parts, w2)
        assert t1 == t2
        assert ds1[0] == ds2[0] == 0.0

    def test_nonfinite_part_names_task(self):
        w = LossWeights.init()
        with pytest.raises(TrainingError, match="concept"):
            composite_loss({"concept": float("nan")}, w)

    def test_unknown_task(self):
        with pytest.raises(PreconditionError, match="ssl"):
            composite_loss({"ssl": 1.0}, LossWeights.init())


class TestTrainLoop:
    def test_deterministic_trace_and_params(self, tiny_world):
        cfg = TrainConfig(**TINY_CFG)
        a = train_loop(tiny_world, cfg)
        b = train_loop(tiny_world, cfg)
        assert a.trace == b.trace          # float-exact equality
        for name in a.model.params():
            assert np.array_equal(a.model.params()[name], b.model.params()[name])
        assert np.array_equal(a.weights.s, b.weights.s)

    def test_trace_is_json_serializable(self, tiny_world):
        cfg = TrainConfig(**{**TINY_CFG, "epochs": 1})
        res = train_loop(tiny_world, cfg)
        assert json.loads(json.dumps(res.trace)) == res.trace
        rec = res.trace[0]
        assert rec["labeled"] == TINY_SPEC.n_train
        assert rec["w_concept"] != 2.0     # the log-variances moved

    def test_lr_zero_leaves_params_unchanged(self, tiny_world):
        cfg = TrainConfig(**{**TINY_CFG, "lr": 0.0})
        res = train_loop(tiny_world, cfg)
        from ruledraft.model import PipelineModel
        fresh = PipelineModel(cfg, n_templates=len(tiny_world.templates),
                              rules=tiny_world.rules)
        for name in fresh.params():
            assert np.array_equal(res.model.params()[name], fresh.params()[name])
        assert np.array_equal(res.weights.s, LossWeights.init().s)

    def test_loss_decreases(self, tiny_world):
        cfg = TrainConfig(**{**TINY_CFG, "epochs": 6})
        res = train_loop(tiny_world, cfg)
        assert res.trace[-1]["loss_concept"] < res.trace[0]["loss_concept"]

    def test_rule_loss_ablation(self, tiny_world):
        cfg = TrainConfig(**{**TINY_CFG, "use_rule_loss": False, "epochs": 1})
        res = train_loop(tiny_world, cfg)
        assert res.trace[0]["loss_rule"] == 0.0
        # s_rule untouched: no gradient reaches it
        assert res.weights.effective()["rule"] == 1.0

    def test_divergence_aborts_with_last_finite_checkpoint(self, tiny_world):
        cfg = TrainConfig(**TINY_CFG)
        poisoned = LossWeights(s=np.array([0.0, -800.0, 0.0, 0.0]))
        with pytest.raises(TrainingError) as err:
            train_loop(tiny_world, cfg, weights=poisoned)
        ckpt = err.value.checkpoint
        for arr in ckpt.params.values():
            assert np.all(np.isfinite(arr))

    def test_invalid_active_flag(self, tiny_world):
        with pytest.raises(PreconditionError):
            train_loop(tiny_world, TrainConfig(**TINY_CFG), active="maybe")


class TestActiveLoop:
    def test_labels_revealed_per_round(self, tiny_world, tmp_path):
        cfg = TrainConfig(**{**TINY_CFG, "epochs": 3, "k_select": 4,
                             "m_cand": 8, "t_mc": 2})
        log = str(tmp_path / "rounds.jsonl")
        res = train_loop(tiny_world, cfg, active="on", policy="entropy",
                         round_log_path=log)
        assert [r["labeled"] for r in res.trace] == [4, 8, 12]
        assert len(res.labeled_ids) == 12
        assert len(set(res.labeled_ids)) == 12

        records = load_round_log(log)
        assert [r["round"] for r in records] == [0, 1, 2]
        assert all(len(r["chosen"]) == 4 for r in records)
        chosen = [sid for r in records for sid in r["chosen"]]
        assert sorted(chosen) == res.labeled_ids
        assert all(len(r["entropies"]) == 4 for r in records)

    def test_clean_annotator_reveals_truth(self, tiny_world):
        cfg = TrainConfig(**{**TINY_CFG, "epochs": 1, "k_select": 4,
                             "m_cand": 8, "t_mc": 2})
        res = train_loop(tiny_world, cfg, active="on", policy="entropy")
        truth = tiny_world.truth_by_id()
        # eta=0 default annotator: training saw exact ground truth
        for sid in res.labeled_ids:
            assert sid in truth

    def test_noisy_annotator_flips_labels(self, tiny_world):
        cfg = TrainConfig(**{**TINY_CFG, "epochs": 2, "k_select": 8,
                             "m_cand": 16, "t_mc": 2})
        noisy = SimulatedAnnotator(labels=tiny_world.truth_by_id(),
                                   decode_fn=tiny_world.clauses_for,
                                   eta=0.5, seed=123)
        res = train_loop(tiny_world, cfg, active="on", policy="random",
                         annotator=noisy)
        assert len(res.labeled_ids) == 16

    def test_policies_differ_in_selection(self, tiny_world):
        cfg = TrainConfig(**{**TINY_CFG, "epochs": 1, "k_select": 6,
                             "m_cand": 24, "t_mc": 2})
        a = train_loop(tiny_world, cfg, active="on", policy="entropy")
        b = train_loop(tiny_world, cfg, active="on", policy="random")
        assert a.rounds[0].chosen != b.rounds[0].chosen


class TestEvaluate:
    def test_metric_ranges_and_determinism(self, tiny_world):
        cfg = TrainConfig(**TINY_CFG)
        res = train_loop(tiny_world, cfg)
        m1 = evaluate(res.model, tiny_world.test_samples, tiny_world, cfg)
        m2 = evaluate(res.model, tiny_world.test_samples, tiny_world, cfg)
        assert m1 == m2
        assert m1["n"] == TINY_SPEC.n_test
        for key in ("concept_macro_f1", "rule_auc", "clause_precision",
                    "clause_recall", "bleu1", "bleu4", "rouge_l", "flagged_rate"):
            assert 0.0 <= m1[key] <= 1.0, key

    def test_empty_split_rejected(self, tiny_world):
        cfg = TrainConfig(**TINY_CFG)
        res = train_loop(tiny_world, TrainConfig(**{**TINY_CFG, "epochs": 1}))
        with pytest.raises(PreconditionError):
            evaluate(res.model, [], tiny_world, cfg)

    def test_checkpoint_round_trip_evaluates_identically(self, tiny_world, tmp_path):
        cfg = TrainConfig(**TINY_CFG)
        res = train_loop(tiny_world, cfg)
        direct = evaluate(res.model, tiny_world.test_samples, tiny_world, cfg)
        path = str(tmp_path / "model.ckpt")
        save_checkpoint(path, res.checkpoint(cfg.config_hash(), epoch=cfg.epochs))
        via_ckpt = evaluate_checkpoint(path, cfg, tiny_world)
        assert via_ckpt == direct

    def test_checkpoint_config_mismatch(self, tiny_world, tmp_path):
        cfg = TrainConfig(**TINY_CFG)
        res = train_loop(tiny_world, TrainConfig(**{**TINY_CFG, "epochs": 1}))
        path = str(tmp_path / "model.ckpt")
        save_checkpoint(path, res.checkpoint(cfg.config_hash(), epoch=1))
        other = TrainConfig(**{**TINY_CFG, "seed": 999})
        with pytest.raises(CompatibilityError):
            evaluate_checkpoint(path, other, tiny_world)


class TestMacroF1AndAuc:
    def test_macro_f1_oracle(self):
        from ruledraft.training import _macro_f1
        truth = np.array([[1, 0, 0], [1, 0, 0], [0, 0, 0], [1, 0, 0]])
        pred = np.array([[1, 0, 0], [0, 0, 0], [1, 0, 0], [1, 0, 0]])
        # concept 0: tp=2 fp=1 fn=1 -> 2*2/(4+1+1); concept 1 and 2 vacuous -> 1.0
        assert _macro_f1(truth, pred) == pytest.approx((4 / 6 + 1.0 + 1.0) / 3)

    def test_rule_auc_oracle(self):
        from ruledraft.training import _rule_auc
        truth = np.array([[1, 1], [0, 1], [1, 1], [0, 1]])
        score = np.array([[0.9, 0.1], [0.2, 0.4], [0.8, 0.3], [0.1, 0.2]])
        # rule 0 perfectly ranked -> 1.0; rule 1 single-class -> skipped
        assert _rule_auc(truth, score) == 1.0

    def test_rule_auc_all_degenerate(self):
        from ruledraft.training import _rule_auc
        truth = np.ones((4, 2))
        assert _rule_auc(truth, np.random.rand(4, 2)) == 0.5


class TestMetricsPersistence:
    def test_append_and_load(self, tmp_path):
        path = str(tmp_path / "metrics.jsonl")
        append_metrics(path, {"epoch": 0, "f1": 0.5})
        append_metrics(path, {"epoch": 1, "f1": 0.75})
        records = load_metrics(path)
        assert records == [{"epoch": 0, "f1": 0.5}, {"epoch": 1, "f1": 0.75}]
        first = open(path).readline()
        assert json.loads(first) == {"format": "metrics", "version": 1}

    def test_bad_header(self, tmp_path):
        path = str(tmp_path / "metrics.jsonl")
        open(path, "w").write('{"format": "nope", "version": 1}\n')
        with pytest.raises(ParseError):
            load_metrics(path)
