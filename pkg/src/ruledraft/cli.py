"""Command-line entry points: train, infer, active-round, eval, serve.

Every command is deterministic for a fixed (config, seed): traces, drafts,
and selection rounds replay byte-identically. Failures in our own error
taxonomy print one diagnostic line to stderr and exit 1; argparse usage
errors exit 2; --help exits 0.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .active import (POLICIES, append_round_log, build_candidate_pool,
                     entropy, mc_rule_activations, select_round)
from .checkpoint import load_checkpoint, restore_params
from .config import TrainConfig, load_config_file
from .errors import (CheckpointError, ConfigurationError, ParseError,
                     PreconditionError, RoundError, TrainingError)
from .model import PipelineModel, infer_draft
from .rng import RngStream
from .service import ReviewService, case_from_draft, create_app
from .training import LossWeights, append_metrics, evaluate, train_loop
from .worldgen import SyntheticWorld, load_dataset, load_world

_ERRORS = (ConfigurationError, PreconditionError, ParseError, CheckpointError,
           TrainingError, RoundError, FileNotFoundError, NotADirectoryError)


def _load_config(args) -> TrainConfig:
    cfg = load_config_file(args.config) if args.config else TrainConfig()
    if getattr(args, "seed", None) is not None:
        cfg = TrainConfig(**{**json.loads(cfg.to_json()), "seed": args.seed})
    return cfg


def _restore_model(world: SyntheticWorld, cfg: TrainConfig,
                   checkpoint_path: str) -> PipelineModel:
    model = PipelineModel(cfg, n_templates=len(world.templates),
                          rules=world.rules)
    weights = LossWeights.init(cfg.loss_weight_init)
    params = dict(model.params())
    params["loss.s"] = weights.s
    ckpt = load_checkpoint(checkpoint_path, expected_hash=cfg.config_hash())
    restore_params(params, ckpt.params)
    return model


def _sample_entropy(model: PipelineModel, x: np.ndarray, cfg: TrainConfig,
                    sample_id: int) -> float:
    rng = RngStream(cfg.seed).substream("case-entropy", sample_id)
    mean_acts, _ = mc_rule_activations(model, x, cfg.t_mc, rng)
    return float(entropy(mean_acts, cfg.entropy_variant))


def run_inference_pipeline(world: SyntheticWorld, cfg: TrainConfig,
                           checkpoint_path: str,
                           sample_ids: list[int] | None = None,
                           dataset_path: str | None = None,
                           n_r: int | None = None,
                           state_dir: str | None = None) -> list[dict]:
    """Concept extraction, rule evaluation, clause decoding, verification,
    in that order, over the requested samples. Optionally registers each
    draft as a review case in a service state directory."""
    model = _restore_model(world, cfg, checkpoint_path)
    library = world.library(model.rules)
    samples = (load_dataset(dataset_path) if dataset_path
               else world.test_samples)
    if sample_ids is not None:
        wanted = set(sample_ids)
        samples = [s for s in samples if s.sample_id in wanted]
        missing = wanted - {s.sample_id for s in samples}
        if missing:
            raise PreconditionError(f"sample ids not in dataset: {sorted(missing)}")
    service = ReviewService(state_dir) if state_dir else None

    outputs = []
    for s in samples:
        draft, fc = infer_draft(model, s.features, library,
                                n_r=cfg.n_r if n_r is None else n_r,
                                verify_threshold=cfg.verify_threshold)
        ent = _sample_entropy(model, s.features, cfg, s.sample_id)
        case = case_from_draft(f"case-{s.sample_id:06d}", s.sample_id, draft,
                               model, fc, ent)
        if service is not None:
            service.add_case(case)
        outputs.append({
            "sample_id": s.sample_id,
            "draft": draft.text,
            "clauses": case.clauses,
            "reasoning": case.reasoning,
            "flags": case.flags,
            "review_required": draft.review_required,
            "entropy": ent,
            "confidence": draft.confidence,
        })
    return outputs


def _cmd_train(args) -> int:
    cfg = _load_config(args)
    world = load_world(args.world)
    result = train_loop(world, cfg, active="on" if args.active else "off",
                        policy=args.policy, round_log_path=args.round_log)
    if args.metrics:
        Path(args.metrics).unlink(missing_ok=True)
        for row in result.trace:
            append_metrics(args.metrics, row)
    if args.checkpoint:
        from .checkpoint import save_checkpoint
        save_checkpoint(args.checkpoint,
                        result.checkpoint(cfg.config_hash(), cfg.epochs))
    final = result.trace[-1] if result.trace else {}
    print(json.dumps({"epochs": len(result.trace),
                      "labeled": len(result.labeled_ids),
                      "final": final}, sort_keys=True))
    return 0


def _cmd_infer(args) -> int:
    cfg = _load_config(args)
    world = load_world(args.world)
    outputs = run_inference_pipeline(
        world, cfg, args.checkpoint,
        sample_ids=args.sample_id if args.sample_id else None,
        dataset_path=args.dataset, n_r=args.n_r, state_dir=args.state)
    text = "\n".join(json.dumps(o, sort_keys=True) for o in outputs) + "\n"
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    return 0


def _cmd_active_round(args) -> int:
    cfg = _load_config(args)
    world = load_world(args.world)
    if args.checkpoint:
        model = _restore_model(world, cfg, args.checkpoint)
    else:
        model = PipelineModel(cfg, n_templates=len(world.templates),
                              rules=world.rules)
    pool_rng = RngStream(cfg.seed).substream("cli-active", args.round)
    samples = [(s.sample_id, s.features) for s in world.train_samples]
    pool = build_candidate_pool(model, samples, args.t_mc or cfg.t_mc,
                                pool_rng.substream("mc"), cfg.entropy_variant)
    rnd = select_round(pool, args.k or cfg.k_select, args.m_cand or cfg.m_cand,
                       args.policy, pool_rng.substream("select"), args.round)
    if args.round_log:
        entropies = {c.sample_id: c.entropy for c in pool.candidates()
                     if c.sample_id in set(rnd.chosen)}
        append_round_log(args.round_log, rnd, entropies)
    print(json.dumps({"round": rnd.round_index, "policy": rnd.policy,
                      "chosen": list(rnd.chosen)}, sort_keys=True))
    return 0


def _cmd_eval(args) -> int:
    cfg = _load_config(args)
    world = load_world(args.world)
    model = _restore_model(world, cfg, args.checkpoint)
    samples = load_dataset(args.dataset) if args.dataset else world.test_samples
    metrics = evaluate(model, samples, world, cfg)
    if args.state:
        ReviewService(args.state).set_metrics(metrics)
    print(json.dumps(metrics, sort_keys=True))
    return 0


def _cmd_serve(args) -> int:
    import uvicorn

    service = ReviewService(args.state)
    app = create_app(service, token=args.token)
    uvicorn.run(app, host=args.host, port=args.port, log_level="warning")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ruledraft",
        description="Concept extraction, rule reasoning, template decoding, "
                    "active learning, and the clinician review service.")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, checkpoint_required=False):
        p.add_argument("--world", required=True,
                       help="world directory (rules, templates, dataset)")
        p.add_argument("--config", help="JSON training config path")
        p.add_argument("--seed", type=int, help="override config seed")
        p.add_argument("--checkpoint", required=checkpoint_required,
                       help="model checkpoint path")

    p_train = sub.add_parser("train", help="fit the model on a world")
    common(p_train)
    p_train.add_argument("--active", action="store_true",
                         help="label via per-epoch selection rounds")
    p_train.add_argument("--policy", default="entropy+kcenter",
                         choices=sorted(POLICIES))
    p_train.add_argument("--metrics", help="write per-epoch trace JSONL here")
    p_train.add_argument("--round-log", help="append selection rounds here")
    p_train.set_defaults(func=_cmd_train)

    p_infer = sub.add_parser("infer", help="decode drafts from a checkpoint")
    common(p_infer, checkpoint_required=True)
    p_infer.add_argument("--dataset", help="JSONL dataset (default: world test split)")
    p_infer.add_argument("--sample-id", type=int, action="append",
                         help="restrict to this sample id (repeatable)")
    p_infer.add_argument("--n-r", type=int, help="retrieved exemplars per draft")
    p_infer.add_argument("--state", help="register drafts as review cases here")
    p_infer.add_argument("--out", help="write JSONL here instead of stdout")
    p_infer.set_defaults(func=_cmd_infer)

    p_round = sub.add_parser("active-round", help="run one selection round")
    common(p_round)
    p_round.add_argument("--policy", default="entropy+kcenter",
                         choices=sorted(POLICIES))
    p_round.add_argument("--k", type=int, help="samples to select")
    p_round.add_argument("--m-cand", type=int, help="candidate shortlist size")
    p_round.add_argument("--t-mc", type=int, help="MC dropout passes")
    p_round.add_argument("--round", type=int, default=0, help="round index")
    p_round.add_argument("--round-log", help="append the round here")
    p_round.set_defaults(func=_cmd_active_round)

    p_eval = sub.add_parser("eval", help="score a checkpoint on held-out data")
    common(p_eval, checkpoint_required=True)
    p_eval.add_argument("--dataset", help="JSONL dataset (default: world test split)")
    p_eval.add_argument("--state", help="publish metrics to this service state dir")
    p_eval.set_defaults(func=_cmd_eval)

    p_serve = sub.add_parser("serve", help="run the review HTTP service")
    p_serve.add_argument("--state", help="service state directory")
    p_serve.add_argument("--host", default="127.0.0.1")
    p_serve.add_argument("--port", type=int, default=8321)
    p_serve.add_argument("--token", help="require X-Auth-Token to match")
    p_serve.set_defaults(func=_cmd_serve)

    return parser


def main(argv: list[str] | None = None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    try:
        return args.func(args)
    except _ERRORS as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
