import json

import pytest

from ruledraft.cli import build_parser, main, run_inference_pipeline
from ruledraft.config import TrainConfig, save_config_file
from ruledraft.service import ReviewService
from ruledraft.worldgen import WorldSpec, gen_synthetic_dataset, save_world

SPEC = WorldSpec(k_concepts=6, r_rules=4, m_patches=4, c_feat=8,
                 n_train=40, n_test=12, rare_count=0)

CFG = dict(m_patches=4, c_feat=8, d_proj=6, h_mlp=8, k_concepts=6,
           n_heads=2, ff_dim=16, epochs=2, batch_size=4, t_mc=3,
           k_select=6, m_cand=20, seed=0)


@pytest.fixture(scope="module")
def world_dir(tmp_path_factory):
    d = tmp_path_factory.mktemp("world")
    save_world(gen_synthetic_dataset(SPEC, seed=9), d)
    return d


@pytest.fixture(scope="module")
def cfg_path(tmp_path_factory):
    p = tmp_path_factory.mktemp("cfg") / "cfg.json"
    save_config_file(TrainConfig(**CFG), p)
    return p


@pytest.fixture(scope="module")
def trained(tmp_path_factory, world_dir, cfg_path):
    d = tmp_path_factory.mktemp("run")
    ckpt, metrics = d / "model.ckpt", d / "metrics.jsonl"
    code = main(["train", "--world", str(world_dir), "--config", str(cfg_path),
                 "--checkpoint", str(ckpt), "--metrics", str(metrics)])
    assert code == 0
    return ckpt, metrics


class TestUsage:
    def test_help_exits_zero(self, capsys):
        assert main(["--help"]) == 0
        assert "train" in capsys.readouterr().out

    def test_subcommand_help_exits_zero(self, capsys):
        for cmd in ("train", "infer", "active-round", "eval", "serve"):
            assert main([cmd, "--help"]) == 0
            assert "--" in capsys.readouterr().out

    def test_unknown_subcommand_exits_two(self, capsys):
        assert main(["frobnicate"]) == 2
        assert "usage" in capsys.readouterr().err

    def test_missing_required_flag_exits_two(self, capsys):
        assert main(["train"]) == 2
        capsys.readouterr()

    def test_bad_policy_exits_two(self, world_dir, capsys):
        assert main(["active-round", "--world", str(world_dir),
                     "--policy", "psychic"]) == 2
        capsys.readouterr()

    def test_no_arguments_exits_two(self, capsys):
        assert main([]) == 2
        capsys.readouterr()

    def test_parser_lists_all_subcommands(self):
        help_text = build_parser().format_help()
        for cmd in ("train", "infer", "active-round", "eval", "serve"):
            assert cmd in help_text


class TestTrain:
    def test_writes_outputs_and_reports(self, trained, capsys):
        ckpt, metrics = trained
        assert ckpt.exists() and metrics.exists()
        rows = metrics.read_text().splitlines()
        assert len(rows) == 1 + CFG["epochs"]      # header + one per epoch

    def test_same_seed_identical_trace_and_checkpoint(self, tmp_path,
                                                      world_dir, cfg_path,
                                                      trained, capsys):
        ckpt2, metrics2 = tmp_path / "m.ckpt", tmp_path / "t.jsonl"
        assert main(["train", "--world", str(world_dir),
                     "--config", str(cfg_path), "--checkpoint", str(ckpt2),
                     "--metrics", str(metrics2)]) == 0
        capsys.readouterr()
        ckpt1, metrics1 = trained
        assert metrics2.read_bytes() == metrics1.read_bytes()
        assert ckpt2.read_bytes() == ckpt1.read_bytes()

    def test_different_seed_different_trace(self, tmp_path, world_dir,
                                            cfg_path, trained, capsys):
        metrics2 = tmp_path / "t.jsonl"
        assert main(["train", "--world", str(world_dir),
                     "--config", str(cfg_path), "--seed", "5",
                     "--metrics", str(metrics2)]) == 0
        capsys.readouterr()
        assert metrics2.read_bytes() != trained[1].read_bytes()

    def test_missing_world_errors(self, tmp_path, cfg_path, capsys):
        assert main(["train", "--world", str(tmp_path / "nope"),
                     "--config", str(cfg_path)]) == 1
        assert "error:" in capsys.readouterr().err

    def test_bad_config_errors(self, tmp_path, world_dir, capsys):
        bad = tmp_path / "bad.json"
        bad.write_text('{"sneed": 1}')
        assert main(["train", "--world", str(world_dir),
                     "--config", str(bad)]) == 1
        assert "sneed" in capsys.readouterr().err


class TestInfer:
    def test_stdout_jsonl(self, world_dir, cfg_path, trained, capsys):
        assert main(["infer", "--world", str(world_dir),
                     "--config", str(cfg_path),
                     "--checkpoint", str(trained[0])]) == 0
        lines = [json.loads(line) for line in capsys.readouterr().out.splitlines()]
        assert len(lines) == SPEC.n_test
        for row in lines:
            assert {"sample_id", "draft", "clauses", "reasoning", "flags",
                    "review_required", "entropy"} <= set(row)

    def test_byte_identical_reruns(self, tmp_path, world_dir, cfg_path,
                                   trained, capsys):
        out1, out2 = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
        for out in (out1, out2):
            assert main(["infer", "--world", str(world_dir),
                         "--config", str(cfg_path),
                         "--checkpoint", str(trained[0]),
                         "--out", str(out)]) == 0
        capsys.readouterr()
        assert out1.read_bytes() == out2.read_bytes()

    def test_sample_id_filter(self, world_dir, cfg_path, trained, capsys):
        sid = SPEC.n_train                       # first test sample id
        assert main(["infer", "--world", str(world_dir),
                     "--config", str(cfg_path),
                     "--checkpoint", str(trained[0]),
                     "--sample-id", str(sid)]) == 0
        lines = capsys.readouterr().out.splitlines()
        assert len(lines) == 1
        assert json.loads(lines[0])["sample_id"] == sid

    def test_unknown_sample_id_errors(self, world_dir, cfg_path, trained,
                                      capsys):
        assert main(["infer", "--world", str(world_dir),
                     "--config", str(cfg_path),
                     "--checkpoint", str(trained[0]),
                     "--sample-id", "99999"]) == 1
        assert "99999" in capsys.readouterr().err

    def test_registers_review_cases(self, tmp_path, world_dir, cfg_path,
                                    trained, capsys):
        state = tmp_path / "state"
        assert main(["infer", "--world", str(world_dir),
                     "--config", str(cfg_path),
                     "--checkpoint", str(trained[0]),
                     "--state", str(state)]) == 0
        capsys.readouterr()
        svc = ReviewService(state)
        assert len(svc.cases()) == SPEC.n_test
        assert all(c.status == "pending" for c in svc.cases())

    def test_malformed_dataset_reports_line(self, tmp_path, world_dir,
                                            cfg_path, trained, capsys):
        bad = tmp_path / "bad.jsonl"
        good = (world_dir / "dataset.jsonl").read_text().splitlines()
        bad.write_text(good[0] + "\n{broken\n")
        assert main(["infer", "--world", str(world_dir),
                     "--config", str(cfg_path),
                     "--checkpoint", str(trained[0]),
                     "--dataset", str(bad)]) == 1
        err = capsys.readouterr().err
        assert "line 2" in err

    def test_checkpoint_config_mismatch_errors(self, world_dir, trained,
                                               capsys):
        # default config hash differs from the training config hash
        assert main(["infer", "--world", str(world_dir),
                     "--checkpoint", str(trained[0])]) == 1
        assert "error:" in capsys.readouterr().err


class TestActiveRound:
    def test_deterministic_selection(self, world_dir, cfg_path, capsys):
        argv = ["active-round", "--world", str(world_dir),
                "--config", str(cfg_path), "--policy", "entropy", "--k", "4"]
        assert main(argv) == 0
        first = json.loads(capsys.readouterr().out)
        assert main(argv) == 0
        second = json.loads(capsys.readouterr().out)
        assert first == second
        assert len(first["chosen"]) == 4
        assert first["policy"] == "entropy"

    def test_round_log_written(self, tmp_path, world_dir, cfg_path, capsys):
        log = tmp_path / "rounds.jsonl"
        assert main(["active-round", "--world", str(world_dir),
                     "--config", str(cfg_path), "--k", "4",
                     "--round", "2", "--round-log", str(log)]) == 0
        capsys.readouterr()
        from ruledraft.active import load_round_log
        rows = load_round_log(str(log))
        assert rows[-1]["round"] == 2
        assert len(rows[-1]["chosen"]) == 4

    def test_policies_differ(self, world_dir, cfg_path, capsys):
        chosen = {}
        for policy in ("random", "entropy"):
            assert main(["active-round", "--world", str(world_dir),
                         "--config", str(cfg_path), "--policy", policy,
                         "--k", "6"]) == 0
            chosen[policy] = json.loads(capsys.readouterr().out)["chosen"]
        assert chosen["random"] != chosen["entropy"]


class TestEval:
    def test_metrics_printed_and_published(self, tmp_path, world_dir,
                                           cfg_path, trained, capsys):
        state = tmp_path / "state"
        assert main(["eval", "--world", str(world_dir),
                     "--config", str(cfg_path),
                     "--checkpoint", str(trained[0]),
                     "--state", str(state)]) == 0
        metrics = json.loads(capsys.readouterr().out)
        for key in ("concept_macro_f1", "clause_precision", "clause_recall",
                    "bleu4", "rouge_l", "rule_auc"):
            assert key in metrics
        assert ReviewService(state).metrics() == metrics

    def test_eval_deterministic(self, world_dir, cfg_path, trained, capsys):
        argv = ["eval", "--world", str(world_dir), "--config", str(cfg_path),
                "--checkpoint", str(trained[0])]
        assert main(argv) == 0
        first = capsys.readouterr().out
        assert main(argv) == 0
        assert capsys.readouterr().out == first


class TestPipelineFunction:
    def test_perfect_checkpoint_on_noiseless_world(self, world_dir, cfg_path,
                                                   trained):
        from ruledraft.worldgen import load_world
        from ruledraft.config import load_config_file
        world = load_world(world_dir)
        cfg = load_config_file(cfg_path)
        outputs = run_inference_pipeline(world, cfg, str(trained[0]),
                                         sample_ids=[SPEC.n_train])
        assert len(outputs) == 1
        out = outputs[0]
        # structured output carries provenance for every bound slot
        for clause in out["clauses"]:
            for binding in clause["bindings"].values():
                assert binding["provenance"] in ("rule", "retrieval", "regressor")
        assert isinstance(out["review_required"], bool)
