"""Iterated structured pruning loop and global greedy module selection.

Each iteration recomputes priors on the current (already shrunk) model,
perturbs only the weakest candidate modules with prior-weighted mask
pairs, scores every sub-model on a shared calibration batch, regresses
utilities onto mask bits, and removes the lowest-relevance modules until
the cumulative removed mass reaches one more p_iter step of the ORIGINAL
prunable total. The model is then physically sliced, so the final output
needs no mask at inference time.
"""

from __future__ import annotations

import math
import time
import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .catalog import (
    FFN,
    HEAD,
    ModuleCatalog,
    ModuleId,
    SubModelMask,
    guarded_ceil,
)
from .errors import ConfigError, InputError, NumericError
from .harness import Corpus, UtilityReport, utility_on_sequences
from .model import ModelBundle, slice_model
from .priors import METRIC_WANDA, METRICS, PriorScores, compute_priors
from .regression import (
    EvalDataset,
    RegressionGrid,
    RelevanceScores,
    cross_validate,
    fit,
)
from .sampler import CandidatePlan, build_batch, plan_candidates
from .seeding import CALIBRATION, rng_for


@dataclass(frozen=True)
class PruneConfig:
    """Run parameters for the full pruning loop."""

    p: float
    p_iter: float
    n_submodels: int
    metric: str = METRIC_WANDA
    candidate_multiplier: float = 2.0
    grid: RegressionGrid = field(default_factory=RegressionGrid)
    seed: int = 0
    calibration_sequences: int = 32

    def __post_init__(self):
        if not 0.0 <= self.p < 1.0:
            raise ConfigError(f"target sparsity must be in [0, 1), got {self.p}")
        if self.metric not in METRICS:
            raise ConfigError(f"unknown prior metric {self.metric!r}")
        if self.calibration_sequences < 1:
            raise ConfigError("need at least one calibration sequence")
        if self.candidate_multiplier <= 0:
            raise ConfigError("candidate multiplier must be positive")
        if self.p == 0.0:
            return  # explicit no-op run; remaining invariants are vacuous
        if not 0.0 < self.p_iter <= self.p:
            raise ConfigError(
                f"p_iter must be in (0, p], got p_iter={self.p_iter} with p={self.p}"
            )
        min_n = 2 * guarded_ceil(self.p / self.p_iter)
        if self.n_submodels < min_n:
            raise ConfigError(
                f"n_submodels={self.n_submodels} gives less than one mask pair "
                f"per iteration; need at least {min_n}"
            )

    def to_dict(self) -> dict:
        return {
            "p": self.p, "p_iter": self.p_iter, "n_submodels": self.n_submodels,
            "metric": self.metric,
            "candidate_multiplier": self.candidate_multiplier,
            "grid": {
                "gammas": list(self.grid.gammas), "lrs": list(self.grid.lrs),
                "batches": list(self.grid.batches), "epochs": self.grid.epochs,
                "norm": self.grid.norm,
            },
            "seed": self.seed,
            "calibration_sequences": self.calibration_sequences,
        }


@dataclass(frozen=True)
class IterationRecord:
    """Everything one loop iteration saw and decided."""

    iteration: int
    priors: PriorScores
    plan: CandidatePlan
    masks: tuple[SubModelMask, ...]
    utilities: np.ndarray  # raw U per mask, NaN where evaluation went non-finite
    scores: RelevanceScores
    removed: tuple[ModuleId, ...]  # live coordinates at this iteration
    removed_original: tuple[ModuleId, ...]  # same modules, original numbering
    sparsity_prunable: float  # cumulative, vs original prunable mass
    sparsity_total: float  # cumulative, vs original total parameter count
    wall_clock_s: float
    post_utility: Optional[UtilityReport] = None  # sliced model on the same batch


def schedule(p: float, p_iter: float, n: int) -> tuple[int, int]:
    """Iteration count and per-iteration sub-model count.

    iterations = ceil(p / p_iter); per-iteration masks = ceil(n / iterations)
    rounded up to even so each mask has its complement.
    """
    if not 0.0 < p_iter <= p:
        raise InputError(f"need 0 < p_iter <= p, got p_iter={p_iter}, p={p}")
    iters = guarded_ceil(p / p_iter)
    n_iter = guarded_ceil(n / iters)
    if n_iter % 2:
        n_iter += 1
    return iters, n_iter


def _min_feasible(catalog: ModuleCatalog) -> int:
    """Smallest keepable mass: one cheapest module per (layer, kind) group."""
    return int(sum(
        catalog.sizes[idx].min() for idx in catalog.groups().values()
    ))


def greedy_select(relevance, catalog: ModuleCatalog, budget: int) -> list[ModuleId]:
    """Keep the highest-relevance modules that fit the parameter budget.

    Modules are taken in relevance order (ties resolve to catalog order)
    until the first one that does not fit; fixed modules carry +inf and are
    always taken first. Any (layer, kind) group left empty gets its best
    module promoted back, with the worst kept removable module evicted
    while the budget is exceeded, so every layer stays structurally valid.
    """
    if isinstance(relevance, RelevanceScores):
        beta = relevance.for_catalog(catalog)
    else:
        beta = np.asarray(relevance, dtype=np.float64)
    if beta.shape != (len(catalog),):
        raise InputError(
            f"relevance length {beta.shape} does not match catalog size {len(catalog)}"
        )
    if np.isnan(beta).any():
        raise InputError("relevance contains NaN")
    if budget < _min_feasible(catalog):
        raise ConfigError(
            f"budget {budget} below the minimum feasible mass "
            f"{_min_feasible(catalog)} (one head and one FFN dim per layer)"
        )

    sizes = catalog.sizes
    n = len(catalog)
    order = np.argsort(-beta, kind="stable")
    kept = np.zeros(n, dtype=bool)
    total = 0
    for i in order:
        s = int(sizes[i])
        if total + s <= budget:
            kept[i] = True
            total += s
        else:
            break

    groups = catalog.groups()
    for idx in groups.values():
        if not kept[idx].any():
            # promote the group's best module so the layer keeps this kind
            best = int(idx[int(np.argmax(beta[idx]))])
            kept[best] = True
            total += int(sizes[best])

    while total > budget:
        evictable = [
            i for i in range(n)
            if kept[i] and np.isfinite(beta[i]) and kept[catalog.group_indices(
                catalog.entries[i].layer, catalog.entries[i].kind)].sum() >= 2
        ]
        if not evictable:
            raise ConfigError(
                f"cannot meet budget {budget} without emptying a group"
            )
        worst = min(evictable, key=lambda i: (beta[i], -i))
        kept[worst] = False
        total -= int(sizes[worst])

    return [catalog.entries[i] for i in range(n) if kept[i]]


def _floor_guarded(x: float) -> int:
    return int(math.floor(x + max(1e-9, abs(x) * 1e-12)))


def bonsai_run(
    model: ModelBundle, corpus: Corpus, config: PruneConfig
) -> tuple[ModelBundle, list[IterationRecord]]:
    """Run the full iterated pruning loop; returns the sliced model and a
    per-iteration audit trail sufficient to replay every decision."""
    if config.p == 0.0:
        return model, []
    if corpus.chunk_len > model.config.max_seq_len:
        raise InputError(
            f"corpus chunk_len {corpus.chunk_len} exceeds model max_seq_len "
            f"{model.config.max_seq_len}"
        )

    original = ModuleCatalog.for_model(model)
    d_orig = original.d_prunable
    total_params = model.n_params_total()
    iters, n_iter = schedule(config.p, config.p_iter, config.n_submodels)

    current = model
    # live index -> original index, per layer and kind; slicing renumbers
    origin = {
        (li, HEAD): list(range(model.live_heads(li)))
        for li in range(model.config.n_layers)
    }
    origin.update({
        (li, FFN): list(range(model.live_ffn(li)))
        for li in range(model.config.n_layers)
    })
    records: list[IterationRecord] = []
    for it in range(iters):
        t0 = time.perf_counter()
        live = ModuleCatalog.for_model(current)
        removed_mass = d_orig - live.d_prunable
        target_cum = min(config.p * d_orig, (it + 1) * config.p_iter * d_orig)
        if removed_mass >= target_cum - 1e-9:
            continue  # earlier overshoot already covered this step

        rng_cal = rng_for(int(config.seed), CALIBRATION, it)
        seqs = corpus.sample_chunks(config.calibration_sequences, rng_cal)

        priors = compute_priors(current, seqs, config.metric, live)
        plan = plan_candidates(
            live, priors, config.p_iter, config.candidate_multiplier
        )
        cand_mass = int(sum(live.sizes[live.index(m)] for m in plan.candidates))
        if cand_mass < target_cum - removed_mass - 1e-9:
            raise ConfigError(
                f"iteration {it}: candidate mass {cand_mass} cannot cover the "
                f"removal step {target_cum - removed_mass:.1f}; raise the "
                "candidate multiplier"
            )

        masks = build_batch(plan, n_iter, config.seed, iteration=it)
        utilities = np.array([
            utility_on_sequences(current, seqs, mask=m).U for m in masks
        ])

        kept_masks: list[SubModelMask] = []
        kept_utils: list[float] = []
        dropped_pairs = 0
        for j in range(0, len(masks), 2):
            pair_u = utilities[j:j + 2]
            if np.isfinite(pair_u).all():
                kept_masks.extend(masks[j:j + 2])
                kept_utils.extend(float(u) for u in pair_u)
            else:
                dropped_pairs += 1
        n_pairs = len(masks) // 2
        if dropped_pairs:
            warnings.warn(
                f"iteration {it}: dropped {dropped_pairs} of {n_pairs} mask pairs "
                "with non-finite utility"
            )
        if dropped_pairs > n_pairs // 2:
            raise NumericError(
                f"iteration {it}: {dropped_pairs} of {n_pairs} mask pairs went "
                "non-finite; the model or calibration data is numerically unstable"
            )

        data = EvalDataset.from_masks(kept_masks, kept_utils, plan.candidates)
        if data.n_rows >= 10:
            scores = cross_validate(data, config.grid, seed=(config.seed, it))
        else:
            # too few rows for a holdout; single mild fit
            scores = fit(
                data, gamma=1e-4, lr=0.1, batch=min(config.grid.batches),
                epochs=config.grid.epochs, norm=config.grid.norm,
                seed=(config.seed, it),
            )

        budget_it = _floor_guarded(d_orig - target_cum)
        keep = greedy_select(scores, live, budget_it)
        keep_set = set(keep)
        removed = tuple(m for m in live.entries if m not in keep_set)
        candidate_set = set(plan.candidates)
        overreach = [m for m in removed if m not in candidate_set]
        if overreach:
            raise NumericError(f"iteration {it}: removed non-candidates {overreach}")

        removed_original = tuple(
            ModuleId(m.layer, m.kind, origin[(m.layer, m.kind)][m.index])
            for m in removed
        )
        for key in origin:
            li, kind = key
            kept_local = sorted(
                m.index for m in keep_set if m.layer == li and m.kind == kind
            )
            origin[key] = [origin[key][i] for i in kept_local]

        current = slice_model(current, keep)
        new_removed_mass = d_orig - ModuleCatalog.for_model(current).d_prunable
        post_utility = utility_on_sequences(current, seqs)
        records.append(IterationRecord(
            iteration=it,
            priors=priors,
            plan=plan,
            masks=tuple(masks),
            utilities=utilities,
            scores=scores,
            removed=removed,
            removed_original=removed_original,
            sparsity_prunable=new_removed_mass / d_orig,
            sparsity_total=new_removed_mass / total_params,
            wall_clock_s=time.perf_counter() - t0,
            post_utility=post_utility,
        ))
        if new_removed_mass >= config.p * d_orig - 1e-9:
            break

    return current, records


def final_keep_original(
    catalog: ModuleCatalog, records: list[IterationRecord]
) -> list[ModuleId]:
    """Surviving modules in the ORIGINAL catalog's numbering."""
    removed: set[ModuleId] = set()
    for r in records:
        removed.update(r.removed_original)
    return [m for m in catalog.entries if m not in removed]
