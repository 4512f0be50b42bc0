#!/usr/bin/env python3
"""Full pruning walkthrough on a small random transformer.

Builds a model and a synthetic corpus, runs the iterated prune loop to a
target sparsity, then compares the sliced result against its parent on
utility, perplexity, parameter count, and wall-clock latency.

Usage:
  python3 demos/prune_end_to_end.py [--p 0.5] [--seed 0] [--out DIR]

With --out the run manifest, CSV report, pruned checkpoint, and keep-set
are written to DIR, the same artifacts the `bonsai-forge prune` command
emits.
"""

import argparse

import numpy as np

from bonsai_forge import (
    ModelConfig,
    ModuleCatalog,
    PruneConfig,
    bonsai_run,
    final_keep_original,
    random_model,
)
from bonsai_forge.harness import bench, corpus_synthesize, utility
from bonsai_forge.reports import build_manifest, report_emit


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--p", type=float, default=0.5, help="target prunable sparsity")
    ap.add_argument("--seed", type=int, default=0, help="run seed")
    ap.add_argument("--out", help="directory for manifest/csv/checkpoint artifacts")
    args = ap.parse_args()

    config = ModelConfig(n_layers=2, d_model=64, n_heads=4, head_dim=16,
                         ffn_dim=128, vocab_size=128, max_seq_len=64)
    model = random_model(config, seed=7, std=0.08)
    corpus = corpus_synthesize(config.vocab_size, 8192, seed=11, chunk_len=64)
    catalog = ModuleCatalog.for_model(model)
    print(f"parent: {model.n_params_total()} params, "
          f"{model.n_params_prunable()} prunable across {len(catalog)} modules")

    prune_cfg = PruneConfig(p=args.p, p_iter=0.25, n_submodels=48,
                            metric="wanda", seed=args.seed,
                            calibration_sequences=8)
    pruned, records = bonsai_run(model, corpus, prune_cfg)

    print(f"\n{'iter':>4} {'sparsity':>9} {'removed':>28} {'post U':>8}")
    for r in records:
        by_kind = {"head": 0, "ffn": 0}
        for m in r.removed:
            by_kind[m.kind] += 1
        removed = f"{by_kind['head']} heads + {by_kind['ffn']} ffn dims"
        print(f"{r.iteration:>4} {r.sparsity_prunable:>9.3f} {removed:>28} "
              f"{r.post_utility.U:>8.3f}")

    base_u = utility(model, corpus, chunk_budget=32)
    final_u = utility(pruned, corpus, chunk_budget=32)
    base_lat = bench(model, corpus, chunk_count=8, warmup=2)
    final_lat = bench(pruned, corpus, chunk_count=8, warmup=2, baseline=base_lat)

    print(f"\nparams:     {model.n_params_total()} -> {pruned.n_params_total()}")
    print(f"U:          {base_u.U:.3f} -> {final_u.U:.3f}")
    print(f"perplexity: {base_u.perplexity:.2f} -> {final_u.perplexity:.2f}")
    print(f"latency:    {base_lat.mean_s * 1e3:.2f}ms -> "
          f"{final_lat.mean_s * 1e3:.2f}ms ({final_lat.speedup:.2f}x)")

    keep = final_keep_original(catalog, records)
    print(f"keep set:   {len(keep)}/{len(catalog)} modules survive")

    if args.out:
        manifest = build_manifest(prune_cfg, model, corpus, records, pruned,
                                  final_utility=final_u, final_latency=final_lat,
                                  baseline_utility=base_u, baseline_latency=base_lat)
        paths = report_emit(manifest, args.out)
        print(f"wrote {paths['manifest']} and {paths['csv']}")


if __name__ == "__main__":
    main()
