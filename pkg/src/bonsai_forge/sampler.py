"""Candidate planning and prior-weighted sub-model mask sampling.

Each iteration perturbs only the weakest modules: per (layer, kind) group
the bottom candidate_multiplier * p_iter fraction by prior score become
candidates, the rest stay fixed at 1. Masks drop exactly k candidates,
where k is the smallest count of smallest-size candidates whose mass
reaches p_iter of the live prunable mass; kept candidates are drawn by
weighted sampling without replacement with the prior as weight. Every
sampled mask is paired with its bit-flip complement over the candidates.
"""

from __future__ import annotations

import re
import warnings
from dataclasses import dataclass

import numpy as np

from .catalog import (
    ModuleCatalog,
    ModuleId,
    SubModelMask,
    guarded_ceil,
    mask_complement,
)
from .errors import ConfigError, InputError
from .priors import PriorScores
from .seeding import MASK_BATCH, rng_for


@dataclass(frozen=True)
class CandidatePlan:
    """Partition of the live catalog into fixed and perturbable modules."""

    catalog: ModuleCatalog
    fixed: frozenset
    candidates: tuple[ModuleId, ...]
    weights: np.ndarray  # keep-weight per candidate, aligned with candidates
    drop_quota: int

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64)
        if w.shape != (len(self.candidates),):
            raise InputError("one weight per candidate required")
        if not np.isfinite(w).all() or (w < 0).any():
            raise InputError("weights must be finite and nonnegative")
        w.flags.writeable = False
        object.__setattr__(self, "weights", w)
        if self.fixed & set(self.candidates):
            raise InputError("fixed and candidate sets overlap")
        if len(self.fixed) + len(self.candidates) != len(self.catalog):
            raise InputError("fixed and candidates must partition the catalog")
        if not 0 <= self.drop_quota <= len(self.candidates):
            raise InputError(
                f"drop quota {self.drop_quota} outside [0, {len(self.candidates)}]"
            )


def plan_candidates(
    catalog: ModuleCatalog,
    priors: PriorScores,
    p_iter: float,
    multiplier: float = 2.0,
) -> CandidatePlan:
    """Restrict perturbation to the bottom multiplier*p_iter per group.

    The drop quota accumulates candidate sizes smallest-first until the
    mass reaches p_iter of the live prunable total.
    """
    if not 0 < p_iter:
        raise InputError(f"p_iter must be positive, got {p_iter}")
    if multiplier <= 0:
        raise InputError(f"candidate multiplier must be positive, got {multiplier}")
    if multiplier * p_iter > 1.0 + 1e-12:
        raise InputError(
            f"candidate fraction {multiplier} * {p_iter} exceeds 1; "
            "the candidate set cannot be larger than a group"
        )
    if priors.catalog is not catalog and priors.catalog != catalog:
        raise InputError("priors were computed for a different catalog")

    candidate_idx: list[int] = []
    for (_, _), idx in catalog.groups().items():
        group_scores = priors.values[idx]
        n_cand = guarded_ceil(multiplier * p_iter * len(idx))
        n_cand = min(n_cand, len(idx))
        # stable sort: ties resolve to catalog order
        order = np.argsort(group_scores, kind="stable")
        candidate_idx.extend(int(idx[j]) for j in order[:n_cand])
    candidate_idx.sort()
    cand_set = set(candidate_idx)
    candidates = tuple(catalog.entries[i] for i in candidate_idx)
    fixed = frozenset(m for i, m in enumerate(catalog.entries) if i not in cand_set)

    target = p_iter * catalog.d_prunable
    sizes = np.sort(catalog.sizes[candidate_idx])
    cum = np.cumsum(sizes)
    if cum.size == 0 or cum[-1] < target - 1e-9:
        raise ConfigError(
            f"candidate mass {int(cum[-1]) if cum.size else 0} cannot cover the "
            f"per-iteration removal target {target:.1f}; raise the candidate multiplier"
        )
    quota = int(np.searchsorted(cum, target - 1e-9) + 1)

    weights = priors.values[candidate_idx].copy()
    if weights.sum() == 0 and len(weights) > 0:
        warnings.warn("all candidate priors are zero; sampling will be uniform")
    return CandidatePlan(catalog, fixed, candidates, weights, quota)


def sample_mask(plan: CandidatePlan, seed) -> SubModelMask:
    """One mask dropping exactly drop_quota candidates, kept modules drawn
    without replacement with probability proportional to the plan weights."""
    key = seed if isinstance(seed, tuple) else (int(seed),)
    rng = rng_for(*key)
    n = len(plan.candidates)
    keep_count = n - plan.drop_quota

    w = plan.weights
    if w.sum() == 0:
        w = np.ones(n)
    # weighted sampling without replacement via exponential sort keys:
    # taking the keep_count largest log(u)/w matches sequential draws
    # with weight renormalization
    u = rng.random(n)
    u = np.where(u == 0.0, np.finfo(np.float64).tiny, u)
    with np.errstate(divide="ignore"):
        keys = np.where(w > 0, np.log(u) / np.where(w > 0, w, 1.0), -np.inf)
    keep_local = np.argsort(-keys, kind="stable")[:keep_count]

    bits = np.ones(len(plan.catalog), dtype=bool)
    for j in range(n):
        bits[plan.catalog.index(plan.candidates[j])] = False
    for j in keep_local:
        bits[plan.catalog.index(plan.candidates[int(j)])] = True
    return SubModelMask(plan.catalog, bits)


def build_batch(
    plan: CandidatePlan, n_iter: int, seed: int, iteration: int = 0
) -> list[SubModelMask]:
    """n_iter masks as (sample, complement) pairs, interleaved."""
    if n_iter < 2:
        raise InputError(f"need at least one mask pair, got n_iter={n_iter}")
    if n_iter % 2 != 0:
        warnings.warn(f"n_iter={n_iter} is odd; rounding up to {n_iter + 1}")
        n_iter += 1
    batch: list[SubModelMask] = []
    for j in range(n_iter // 2):
        base = sample_mask(plan, (int(seed), MASK_BATCH, int(iteration), j))
        batch.append(base)
        batch.append(mask_complement(base, plan.fixed))
    return batch


def batch_to_text(batch: list[SubModelMask], seed: int, iteration: int) -> str:
    """Serialize a batch with its provenance header."""
    lines = [f"# seed={int(seed)}", f"# iteration={int(iteration)}", f"# masks={len(batch)}"]
    for i, mask in enumerate(batch):
        lines.append(f"# mask {i}")
        lines.append(mask.to_text().rstrip("\n"))
    return "\n".join(lines) + "\n"


def batch_from_text(text: str, catalog: ModuleCatalog):
    """Parse batch_to_text output; returns (masks, seed, iteration)."""
    seed_m = re.search(r"^# seed=(\d+)", text, re.M)
    iter_m = re.search(r"^# iteration=(\d+)", text, re.M)
    if not seed_m or not iter_m:
        raise InputError("batch text missing seed/iteration header")
    chunks = re.split(r"^# mask \d+\n", text, flags=re.M)[1:]
    masks = [SubModelMask.from_text(chunk, catalog) for chunk in chunks]
    return masks, int(seed_m.group(1)), int(iter_m.group(1))
