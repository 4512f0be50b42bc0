"""Run manifest and plot-ready CSV emission.

The manifest is one JSON document carrying the config echo, a full
per-iteration audit trail (priors, masks as bitstrings, utilities,
regression outcome, removals) and the final evaluation. The CSV flattens
the same numbers, one row per iteration plus a final row, with a fixed
column order: iteration, sparsity_prunable, sparsity_total, U,
perplexity, mean_latency_ms, speedup. Timing fields can be masked so two
runs of the same seed compare byte-for-byte.
"""

from __future__ import annotations

import csv
import io
import json
import os
from typing import Optional

import numpy as np

from .catalog import ModuleCatalog
from .errors import InputError
from .harness import Corpus, LatencyReport, UtilityReport
from .model import ModelBundle
from .pruner import IterationRecord, PruneConfig, final_keep_original

CSV_COLUMNS = (
    "iteration", "sparsity_prunable", "sparsity_total",
    "U", "perplexity", "mean_latency_ms", "speedup",
)

# keys whose values are wall-clock measurements, masked for determinism checks
TIMING_KEYS = frozenset({
    "wall_clock_s", "times_s", "mean_s", "median_s", "p95_s",
    "tokens_per_second", "mean_latency_ms", "speedup",
})

SCHEMA_VERSION = 1


def _iteration_entry(record: IterationRecord) -> dict:
    live = record.priors.catalog
    return {
        "iteration": record.iteration,
        "wall_clock_s": record.wall_clock_s,
        "prior_metric": record.priors.metric,
        "prior_samples": record.priors.samples,
        "module_order": [str(m) for m in live.entries],
        "priors": [float(v) for v in record.priors.values],
        "fixed": [str(m) for m in sorted(record.plan.fixed, key=lambda m: live.index(m))],
        "candidates": [str(m) for m in record.plan.candidates],
        "drop_quota": record.plan.drop_quota,
        "masks": [m.bitstring() for m in record.masks],
        "utilities": [float(u) for u in record.utilities],
        "regression": {
            "gamma": record.scores.gamma,
            "lr": record.scores.lr,
            "batch": record.scores.batch,
            "norm": record.scores.norm,
            "val_tau": record.scores.val_tau,
            "intercept": record.scores.intercept,
            "beta": {
                str(m): float(b)
                for m, b in zip(record.scores.candidates, record.scores.beta)
            },
        },
        "removed": [str(m) for m in record.removed],
        "removed_original": [str(m) for m in record.removed_original],
        "sparsity_prunable": record.sparsity_prunable,
        "sparsity_total": record.sparsity_total,
        "post_U": None if record.post_utility is None else record.post_utility.U,
        "post_perplexity": (
            None if record.post_utility is None else record.post_utility.perplexity
        ),
    }


def build_manifest(
    config: PruneConfig,
    model: ModelBundle,
    corpus: Corpus,
    records: list[IterationRecord],
    final_model: ModelBundle,
    final_utility: Optional[UtilityReport] = None,
    final_latency: Optional[LatencyReport] = None,
    baseline_utility: Optional[UtilityReport] = None,
    baseline_latency: Optional[LatencyReport] = None,
) -> dict:
    prunable0 = model.n_params_prunable()
    prunable_final = final_model.n_params_prunable()
    removed = prunable0 - prunable_final
    return {
        "schema_version": SCHEMA_VERSION,
        "config": config.to_dict(),
        "bench_batch_size": 1,
        "model": {
            "config": model.config.to_dict(),
            "n_params_total": model.n_params_total(),
            "n_params_prunable": prunable0,
        },
        "corpus": {
            "provenance": corpus.provenance,
            "n_tokens": corpus.n_tokens,
            "chunk_len": corpus.chunk_len,
        },
        "iterations": [_iteration_entry(r) for r in records],
        "final": {
            "n_params_total": final_model.n_params_total(),
            "n_params_prunable": prunable_final,
            "sparsity_prunable": removed / prunable0 if prunable0 else 0.0,
            "sparsity_total": removed / model.n_params_total(),
            "live_modules": [
                f"layer {i}: {final_model.live_heads(i)} heads, "
                f"{final_model.live_ffn(i)} ffn dims"
                for i in range(final_model.config.n_layers)
            ],
            "keep_original": [
                str(m) for m in final_keep_original(
                    ModuleCatalog.for_model(model), records
                )
            ],
            "utility": None if final_utility is None else final_utility.to_dict(),
            "latency": None if final_latency is None else final_latency.to_dict(),
            "baseline_utility": (
                None if baseline_utility is None else baseline_utility.to_dict()
            ),
            "baseline_latency": (
                None if baseline_latency is None else baseline_latency.to_dict()
            ),
        },
    }


def _json_default(o):
    if isinstance(o, np.integer):
        return int(o)
    if isinstance(o, np.floating):
        return float(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"not JSON serializable: {type(o)}")


def manifest_to_json(manifest: dict) -> str:
    """Canonical serialization: sorted keys, stable float repr."""
    return json.dumps(manifest, sort_keys=True, indent=2, default=_json_default) + "\n"


def scrub_timing(node):
    """Copy with every timing-valued field nulled, for byte-comparison."""
    if isinstance(node, dict):
        return {
            k: (None if k in TIMING_KEYS else scrub_timing(v))
            for k, v in node.items()
        }
    if isinstance(node, list):
        return [scrub_timing(v) for v in node]
    return node


def manifest_csv_rows(manifest: dict) -> list[dict]:
    """Flat rows for plotting; values match the manifest field-for-field."""
    rows = []
    for entry in manifest.get("iterations", []):
        rows.append({
            "iteration": entry["iteration"],
            "sparsity_prunable": entry["sparsity_prunable"],
            "sparsity_total": entry["sparsity_total"],
            "U": entry["post_U"],
            "perplexity": entry["post_perplexity"],
            "mean_latency_ms": None,
            "speedup": None,
        })
    final = manifest.get("final")
    if final is not None and (final.get("utility") or final.get("latency")):
        latency = final.get("latency") or {}
        util = final.get("utility") or {}
        rows.append({
            "iteration": "final",
            "sparsity_prunable": final["sparsity_prunable"],
            "sparsity_total": final["sparsity_total"],
            "U": util.get("U"),
            "perplexity": util.get("perplexity"),
            "mean_latency_ms": (
                None if latency.get("mean_s") is None else latency["mean_s"] * 1000.0
            ),
            "speedup": latency.get("speedup"),
        })
    return rows


def rows_to_csv(rows: list[dict]) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=CSV_COLUMNS, lineterminator="\n")
    writer.writeheader()
    for row in rows:
        writer.writerow({
            k: ("" if row.get(k) is None else repr(row[k]) if isinstance(row[k], float) else row[k])
            for k in CSV_COLUMNS
        })
    return buf.getvalue()


def report_emit(manifest: dict, out_dir: str | os.PathLike) -> dict[str, str]:
    """Write manifest.json and report.csv under out_dir; returns the paths."""
    out_dir = os.fspath(out_dir)
    try:
        os.makedirs(out_dir, exist_ok=True)
        manifest_path = os.path.join(out_dir, "manifest.json")
        with open(manifest_path, "w", encoding="utf-8") as f:
            f.write(manifest_to_json(manifest))
        csv_path = os.path.join(out_dir, "report.csv")
        with open(csv_path, "w", encoding="utf-8") as f:
            f.write(rows_to_csv(manifest_csv_rows(manifest)))
    except OSError as e:
        raise InputError(f"cannot write report to {out_dir}: {e}") from None
    return {"manifest": manifest_path, "csv": csv_path}
