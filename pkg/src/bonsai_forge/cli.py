"""Command-line interface.

Subcommands: prior (per-module prior scores), prune (full run), eval
(utility report), bench (latency report), export (slice a checkpoint by
a saved keep-set). Exit codes: 0 success, 1 input/config error,
2 numeric failure, 3 file-format error.

Runs are described by a JSON config file:

    {
      "model": "parent.ckpt",            // or {"random": {"config": {...}, "seed": 0}}
      "corpus": "data.tok",              // or {"synthetic": {"vocab": 64, "length": 8192, "seed": 7}}
      "chunk_len": 32,
      "prune": {"p": 0.5, "p_iter": 0.25, "n_submodels": 64, "metric": "wanda",
                "seed": 0, "calibration_sequences": 8},
      "eval_chunks": 16,
      "bench": {"chunk_count": 10, "warmup": 3},
      "bench_final": false
    }

Flags override the config where both are given; --out selects a
directory for emitted files (stdout JSON otherwise).
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from typing import Optional

import numpy as np

from . import checkpoint
from .catalog import ModuleCatalog, SubModelMask
from .errors import (
    BonsaiError,
    ConfigError,
    FormatError,
    InputError,
    NumericError,
)
from .harness import (
    Corpus,
    LatencyReport,
    bench,
    corpus_load,
    corpus_synthesize,
    utility,
)
from .model import ModelBundle, ModelConfig, random_model, slice_model
from .priors import compute_priors
from .pruner import PruneConfig, bonsai_run, final_keep_original
from .regression import RegressionGrid
from .reports import build_manifest, report_emit
from .seeding import CALIBRATION, rng_for

EXIT_OK = 0
EXIT_INPUT = 1
EXIT_NUMERIC = 2
EXIT_FORMAT = 3


class _Parser(argparse.ArgumentParser):
    """argparse exits with code 2 on bad flags; the contract wants 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        raise InputError(message)


def _load_config(path: Optional[str]) -> dict:
    if path is None:
        return {}
    try:
        with open(path, "r", encoding="utf-8") as f:
            cfg = json.load(f)
    except OSError as e:
        raise InputError(f"cannot read config {path}: {e}") from None
    except json.JSONDecodeError as e:
        raise FormatError(f"config {path} is not valid JSON: {e}") from None
    if not isinstance(cfg, dict):
        raise FormatError(f"config {path} must be a JSON object")
    return cfg


def _resolve_model(cfg: dict, flag: Optional[str]) -> ModelBundle:
    spec = flag if flag is not None else cfg.get("model")
    if spec is None:
        raise InputError("no model given; use --model or the config's 'model' entry")
    if isinstance(spec, str):
        return checkpoint.load(spec)
    if isinstance(spec, dict) and "random" in spec:
        r = spec["random"]
        return random_model(
            ModelConfig.from_dict(r["config"]),
            seed=int(r.get("seed", 0)),
            std=float(r.get("std", 0.02)),
        )
    raise InputError(f"model entry must be a path or a random-model spec, got {spec!r}")


def _resolve_corpus(cfg: dict, flag: Optional[str]) -> Corpus:
    chunk_len = int(cfg.get("chunk_len", 128))
    spec = flag if flag is not None else cfg.get("corpus")
    if spec is None:
        raise InputError("no corpus given; use --corpus or the config's 'corpus' entry")
    if isinstance(spec, str):
        return corpus_load(spec, chunk_len=chunk_len)
    if isinstance(spec, dict) and "synthetic" in spec:
        s = spec["synthetic"]
        return corpus_synthesize(
            int(s["vocab"]), int(s["length"]), int(s.get("seed", 0)),
            chunk_len=chunk_len,
        )
    raise InputError(f"corpus entry must be a path or a synthetic spec, got {spec!r}")


def _prune_config(cfg: dict, seed_flag: Optional[int]) -> PruneConfig:
    p = cfg.get("prune")
    if not isinstance(p, dict):
        raise InputError("config must contain a 'prune' object")
    grid = RegressionGrid()
    if "grid" in p:
        g = p["grid"]
        grid = RegressionGrid(
            gammas=tuple(g.get("gammas", grid.gammas)),
            lrs=tuple(g.get("lrs", grid.lrs)),
            batches=tuple(int(b) for b in g.get("batches", grid.batches)),
            epochs=int(g.get("epochs", grid.epochs)),
            norm=g.get("norm", grid.norm),
        )
    seed = int(p.get("seed", 0)) if seed_flag is None else int(seed_flag)
    try:
        return PruneConfig(
            p=float(p["p"]),
            p_iter=float(p.get("p_iter", p["p"])),
            n_submodels=int(p["n_submodels"]),
            metric=p.get("metric", "wanda"),
            candidate_multiplier=float(p.get("candidate_multiplier", 2.0)),
            grid=grid,
            seed=seed,
            calibration_sequences=int(p.get("calibration_sequences", 32)),
        )
    except KeyError as e:
        raise InputError(f"prune config missing required key {e}") from None


def _emit(payload: dict, out_dir: Optional[str], name: str, fmt: str,
          csv_text: Optional[str] = None) -> None:
    """Write payload as json (and optionally csv) under out_dir, else stdout."""
    text = json.dumps(payload, sort_keys=True, indent=2) + "\n"
    if out_dir is None:
        sys.stdout.write(text if fmt == "json" else (csv_text or text))
        return
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, f"{name}.json"), "w", encoding="utf-8") as f:
        f.write(text)
    if csv_text is not None:
        with open(os.path.join(out_dir, f"{name}.csv"), "w", encoding="utf-8") as f:
            f.write(csv_text)


def _cmd_prior(args) -> int:
    cfg = _load_config(args.config)
    model = _resolve_model(cfg, args.model)
    corpus = _resolve_corpus(cfg, args.corpus)
    prune_cfg = cfg.get("prune", {})
    metric = args.metric or prune_cfg.get("metric", "wanda")
    n_seq = int(prune_cfg.get("calibration_sequences", 32))
    seed = int(args.seed if args.seed is not None else prune_cfg.get("seed", 0))
    seqs = corpus.sample_chunks(n_seq, rng_for(seed, CALIBRATION, 0))
    scores = compute_priors(model, seqs, metric)
    payload = {
        "metric": scores.metric,
        "samples": scores.samples,
        "scores": {
            str(m): float(v) for m, v in zip(scores.catalog.entries, scores.values)
        },
    }
    csv_lines = ["module,score"] + [
        f"{m},{float(v)!r}" for m, v in zip(scores.catalog.entries, scores.values)
    ]
    _emit(payload, args.out, "priors", args.format, "\n".join(csv_lines) + "\n")
    return EXIT_OK


def _cmd_prune(args) -> int:
    cfg = _load_config(args.config)
    model = _resolve_model(cfg, None)
    corpus = _resolve_corpus(cfg, None)
    config = _prune_config(cfg, args.seed)

    pruned, records = bonsai_run(model, corpus, config)

    eval_chunks = cfg.get("eval_chunks")
    final_utility = utility(pruned, corpus, chunk_budget=eval_chunks)
    baseline_utility = utility(model, corpus, chunk_budget=eval_chunks)
    final_latency = baseline_latency = None
    if cfg.get("bench_final"):
        b = cfg.get("bench", {})
        chunk_count = int(b.get("chunk_count", 10))
        warmup = int(b.get("warmup", 3))
        baseline_latency = bench(model, corpus, chunk_count, warmup)
        final_latency = bench(pruned, corpus, chunk_count, warmup, baseline=baseline_latency)

    manifest = build_manifest(
        config, model, corpus, records, pruned,
        final_utility=final_utility, final_latency=final_latency,
        baseline_utility=baseline_utility, baseline_latency=baseline_latency,
    )
    out_dir = args.out or "."
    paths = report_emit(manifest, out_dir)
    checkpoint.save(pruned, os.path.join(out_dir, "pruned.ckpt"))

    catalog = ModuleCatalog.for_model(model)
    keep = set(final_keep_original(catalog, records))
    bits = np.array([m in keep for m in catalog.entries], dtype=bool)
    with open(os.path.join(out_dir, "keep.txt"), "w", encoding="utf-8") as f:
        f.write(SubModelMask(catalog, bits).to_text())
    sys.stdout.write(json.dumps({
        "manifest": paths["manifest"], "csv": paths["csv"],
        "checkpoint": os.path.join(out_dir, "pruned.ckpt"),
        "keep": os.path.join(out_dir, "keep.txt"),
        "sparsity_prunable": manifest["final"]["sparsity_prunable"],
        "U": final_utility.U,
    }, sort_keys=True, indent=2) + "\n")
    return EXIT_OK


def _cmd_eval(args) -> int:
    cfg = _load_config(args.config)
    model = _resolve_model(cfg, args.model)
    corpus = _resolve_corpus(cfg, args.corpus)
    mask = None
    if args.mask:
        with open(args.mask, "r", encoding="utf-8") as f:
            mask = SubModelMask.from_text(f.read(), ModuleCatalog.for_model(model))
    chunks = args.chunks if args.chunks is not None else cfg.get("eval_chunks")
    report = utility(model, corpus, mask=mask, chunk_budget=chunks)
    if not report.finite:
        raise NumericError("utility evaluation produced non-finite values")
    payload = report.to_dict()
    csv_text = (
        "U,perplexity,token_count,chunk_count\n"
        f"{report.U!r},{report.perplexity!r},{report.token_count},{report.chunk_count}\n"
    )
    _emit(payload, args.out, "eval", args.format, csv_text)
    return EXIT_OK


def _cmd_bench(args) -> int:
    cfg = _load_config(args.config)
    model = _resolve_model(cfg, args.model)
    corpus = _resolve_corpus(cfg, args.corpus)
    bcfg = cfg.get("bench", {})
    chunk_count = args.chunks if args.chunks is not None else int(bcfg.get("chunk_count", 10))
    warmup = args.warmup if args.warmup is not None else int(bcfg.get("warmup", 3))
    baseline = None
    if args.baseline:
        try:
            with open(args.baseline, "r", encoding="utf-8") as f:
                base = json.load(f)
            baseline = LatencyReport(
                times_s=tuple(base["times_s"]), mean_s=float(base["mean_s"]),
                median_s=float(base["median_s"]), p95_s=float(base["p95_s"]),
                tokens_per_second=float(base["tokens_per_second"]),
                chunk_len=int(base["chunk_len"]),
            )
        except OSError as e:
            raise InputError(f"cannot read baseline {args.baseline}: {e}") from None
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as e:
            raise FormatError(f"baseline {args.baseline} is not a latency report: {e}") from None
    report = bench(model, corpus, chunk_count, warmup, baseline=baseline)
    payload = report.to_dict()
    csv_text = (
        "mean_s,median_s,p95_s,tokens_per_second,speedup\n"
        f"{report.mean_s!r},{report.median_s!r},{report.p95_s!r},"
        f"{report.tokens_per_second!r},"
        f"{'' if report.speedup is None else repr(report.speedup)}\n"
    )
    _emit(payload, args.out, "bench", args.format, csv_text)
    return EXIT_OK


def _cmd_export(args) -> int:
    cfg = _load_config(args.config)
    model = _resolve_model(cfg, args.model)
    with open(args.keep, "r", encoding="utf-8") as f:
        mask = SubModelMask.from_text(f.read(), ModuleCatalog.for_model(model))
    sliced = slice_model(model, mask.kept_modules())
    out_dir = args.out or "."
    os.makedirs(out_dir, exist_ok=True)
    path = os.path.join(out_dir, "pruned.ckpt")
    checkpoint.save(sliced, path)
    sys.stdout.write(json.dumps({
        "checkpoint": path,
        "n_params_total": sliced.n_params_total(),
        "n_params_prunable": sliced.n_params_prunable(),
    }, sort_keys=True, indent=2) + "\n")
    return EXIT_OK


def _build_parser() -> _Parser:
    parser = _Parser(prog="bonsai-forge", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(p, needs_model=False):
        p.add_argument("--config", help="JSON run config")
        p.add_argument("--seed", type=int, help="override the run seed")
        p.add_argument("--out", help="output directory (default: stdout)")
        p.add_argument("--format", choices=("json", "csv"), default="json")
        if needs_model:
            p.add_argument("--model", help="checkpoint path (overrides config)")
            p.add_argument("--corpus", help="corpus path (overrides config)")

    p = sub.add_parser("prior", help="compute per-module prior scores")
    common(p, needs_model=True)
    p.add_argument("--metric", choices=("uniform", "act-magnitude", "wanda"))
    p.set_defaults(func=_cmd_prior)

    p = sub.add_parser("prune", help="run the full pruning loop")
    common(p)
    p.set_defaults(func=_cmd_prune)

    p = sub.add_parser("eval", help="utility report for a checkpoint")
    common(p, needs_model=True)
    p.add_argument("--mask", help="mask text file to apply during scoring")
    p.add_argument("--chunks", type=int, help="number of chunks to score")
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("bench", help="latency report for a checkpoint")
    common(p, needs_model=True)
    p.add_argument("--chunks", type=int, help="timed chunk count")
    p.add_argument("--warmup", type=int, help="warmup chunk count")
    p.add_argument("--baseline", help="previous bench JSON to compute speedup against")
    p.set_defaults(func=_cmd_bench)

    p = sub.add_parser("export", help="slice a checkpoint by a keep-set file")
    common(p, needs_model=True)
    p.add_argument("--keep", required=True, help="keep-set mask text file")
    p.set_defaults(func=_cmd_export)

    return parser


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except FormatError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_FORMAT
    except NumericError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except (InputError, ConfigError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INPUT
    except FileNotFoundError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INPUT
    except BonsaiError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
