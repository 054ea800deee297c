#!/usr/bin/env python3
"""Compare selection policies across many seeds of a noisy synthetic world.

Each seed gets its own world and its own training run per policy; the run
uses active mode, so one selection round fires per epoch.  Prints per-seed
macro-F1 for every policy plus a summary verdict.
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from ruledraft.config import TrainConfig
from ruledraft.training import evaluate, train_loop
from ruledraft.worldgen import WorldSpec, gen_synthetic_dataset


def build_spec(noise: float, n_train: int, n_test: int) -> WorldSpec:
    return WorldSpec(k_concepts=16, r_rules=8, m_patches=16, c_feat=32,
                     n_train=n_train, n_test=n_test, noise=noise,
                     rare_count=0)


def build_config(seed: int, rounds: int, k_select: int) -> TrainConfig:
    # epochs == selection rounds in active mode
    return TrainConfig(m_patches=16, c_feat=32, d_proj=16, h_mlp=32,
                       k_concepts=16, n_heads=4, ff_dim=64,
                       epochs=rounds, batch_size=6, lr=3e-4, seed=seed,
                       gamma=0.0, alpha_bal=0.5, dropout_rate=0.1,
                       t_mc=3, k_select=k_select, m_cand=64)


def run_policy(spec: WorldSpec, seed: int, policy: str, rounds: int,
               k_select: int) -> float:
    world = gen_synthetic_dataset(spec, seed=seed)
    cfg = build_config(seed, rounds, k_select)
    result = train_loop(world, cfg, active="on", policy=policy)
    metrics = evaluate(result.model, world.test_samples, world, cfg)
    return metrics["concept_macro_f1"]


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--noise", type=float, default=0.6)
    ap.add_argument("--seeds", type=int, default=20)
    ap.add_argument("--rounds", type=int, default=5)
    ap.add_argument("--k-select", type=int, default=16)
    ap.add_argument("--n-train", type=int, default=300)
    ap.add_argument("--n-test", type=int, default=100)
    ap.add_argument("--policies", nargs="+",
                    default=["random", "entropy", "entropy+kcenter"])
    args = ap.parse_args()

    spec = build_spec(args.noise, args.n_train, args.n_test)
    scores: dict[str, list[float]] = {p: [] for p in args.policies}
    t0 = time.time()
    for seed in range(args.seeds):
        row = []
        for policy in args.policies:
            f1 = run_policy(spec, seed, policy, args.rounds, args.k_select)
            scores[policy].append(f1)
            row.append(f"{policy}={f1:.4f}")
        print(f"seed={seed:2d} " + " ".join(row), flush=True)

    print(f"\n{args.seeds} seeds, noise={args.noise}, "
          f"{time.time() - t0:.0f}s")
    for policy in args.policies:
        print(f"  mean {policy:16s} {np.mean(scores[policy]):.4f}")
    if {"random", "entropy", "entropy+kcenter"} <= set(scores):
        ek = np.array(scores["entropy+kcenter"])
        rnd = np.array(scores["random"])
        ent = np.array(scores["entropy"])
        frac = float(np.mean(ek >= ent))
        print(f"  mean(e+k) > mean(random): {ek.mean() > rnd.mean()} "
              f"(margin {ek.mean() - rnd.mean():+.4f})")
        print(f"  e+k >= entropy in {frac:.0%} of seeds")


if __name__ == "__main__":
    main()
