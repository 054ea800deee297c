#!/usr/bin/env python3
"""Generate a synthetic world directory for the CLI and experiments."""

from __future__ import annotations

import argparse
from pathlib import Path

from ruledraft.worldgen import WorldSpec, gen_synthetic_dataset, save_world


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("out", type=Path, help="directory to write the world into")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--k-concepts", type=int, default=16)
    ap.add_argument("--r-rules", type=int, default=8)
    ap.add_argument("--m-patches", type=int, default=16)
    ap.add_argument("--c-feat", type=int, default=32)
    ap.add_argument("--n-train", type=int, default=2000)
    ap.add_argument("--n-test", type=int, default=200)
    ap.add_argument("--noise", type=float, default=0.0)
    ap.add_argument("--rare-count", type=int, default=2)
    ap.add_argument("--blend-rules", type=int, default=0)
    args = ap.parse_args()

    spec = WorldSpec(k_concepts=args.k_concepts, r_rules=args.r_rules,
                     m_patches=args.m_patches, c_feat=args.c_feat,
                     n_train=args.n_train, n_test=args.n_test,
                     noise=args.noise, rare_count=args.rare_count,
                     blend_rules=args.blend_rules)
    world = gen_synthetic_dataset(spec, seed=args.seed)
    save_world(world, args.out)
    print(f"wrote world to {args.out} "
          f"({len(world.train_samples)} train / {len(world.test_samples)} test, "
          f"{len(world.rules)} rules, {len(world.templates)} templates)")


if __name__ == "__main__":
    main()
