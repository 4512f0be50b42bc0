#!/usr/bin/env python3
"""Latency as a function of how much of the model is sliced away.

Builds one matmul-heavy parent, slices it at several sparsity levels
(keeping the first modules in each group; for timing purposes the
identity of the kept modules is irrelevant), and benches each slice
against the parent. Shows that wall clock tracks the prunable
parameter count once matrices are large enough to dominate runtime.

Usage:
  python3 demos/bench_speedup.py [--chunks 8] [--warmup 2]
"""

import argparse
import math

import numpy as np

from bonsai_forge import (
    ModelConfig,
    ModuleCatalog,
    SubModelMask,
    random_model,
    slice_model,
)
from bonsai_forge.harness import bench, corpus_synthesize


def slice_at(parent, catalog, sparsity):
    """Drop the trailing fraction of every head and FFN group."""
    bits = np.zeros(len(catalog.entries), dtype=bool)
    for (_, kind), positions in catalog.groups().items():
        keep = max(1, math.ceil((1.0 - sparsity) * len(positions)))
        bits[positions[:keep]] = True
    mask = SubModelMask(catalog, bits)
    return slice_model(parent, mask.kept_modules())


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--chunks", type=int, default=8)
    ap.add_argument("--warmup", type=int, default=2)
    args = ap.parse_args()

    config = ModelConfig(
        n_layers=4, d_model=256, n_heads=8, head_dim=32, ffn_dim=1024,
        vocab_size=512, max_seq_len=256,
    )
    parent = random_model(config, seed=3, std=0.3)
    catalog = ModuleCatalog.for_model(parent)
    corpus = corpus_synthesize(config.vocab_size, 2560, seed=5, chunk_len=256)

    print(f"parent: {config.n_layers} layers, d_model {config.d_model}, "
          f"{config.n_heads} heads, ffn {config.ffn_dim}")
    base = bench(parent, corpus, chunk_count=args.chunks, warmup=args.warmup)
    print(f"timing {args.chunks} chunks of {corpus.chunk_len} tokens "
          f"(+{args.warmup} warmup)\n")

    print(f"{'sparsity':>8} {'params':>10} {'heads/l':>8} {'ffn/l':>6} "
          f"{'ms/chunk':>9} {'tok/s':>8} {'speedup':>8}")
    print(f"{'0%':>8} {parent.n_params_total():>10} {config.n_heads:>8} "
          f"{config.ffn_dim:>6} {base.mean_s * 1e3:>9.1f} "
          f"{base.tokens_per_second:>8.0f} {'1.00x':>8}")
    for sparsity in (0.25, 0.5, 0.75):
        sliced = slice_at(parent, catalog, sparsity)
        rep = bench(sliced, corpus, chunk_count=args.chunks,
                    warmup=args.warmup, baseline=base)
        heads = sliced.live_heads(0)
        ffn = sliced.live_ffn(0)
        print(f"{f'{sparsity:.0%}':>8} {sliced.n_params_total():>10} "
              f"{heads:>8} {ffn:>6} {rep.mean_s * 1e3:>9.1f} "
              f"{rep.tokens_per_second:>8.0f} {f'{rep.speedup:.2f}x':>8}")

    print("\nembedding and norm work is not prunable, so speedup grows")
    print("slower than the parameter ratio; the gap is the fixed cost")


if __name__ == "__main__":
    main()
