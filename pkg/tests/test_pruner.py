"""Schedule, greedy selection under budget, and the full pruning loop."""

import numpy as np
import pytest

from bonsai_forge import (
    ConfigError,
    FFN,
    HEAD,
    InputError,
    ModuleCatalog,
    ModuleId,
    PruneConfig,
    RegressionGrid,
    bonsai_run,
    budget,
    final_keep_original,
    greedy_select,
    schedule,
    slice_model,
)
from bonsai_forge.checkpoint import save_bytes


def test_schedule_values():
    assert schedule(0.5, 0.05, 1000) == (10, 100)
    assert schedule(0.5, 0.25, 72) == (2, 36)
    assert schedule(0.5, 0.5, 9) == (1, 10)  # odd rounds up to a pair
    assert schedule(0.3, 0.2, 100) == (2, 50)
    assert schedule(0.5, 0.1, 80) == (5, 16)


def test_schedule_guards():
    with pytest.raises(InputError):
        schedule(0.5, 0.6, 10)
    with pytest.raises(InputError):
        schedule(0.5, 0.0, 10)


def test_prune_config_validation():
    PruneConfig(p=0.5, p_iter=0.25, n_submodels=8)
    PruneConfig(p=0.0, p_iter=0.0, n_submodels=0)  # explicit no-op
    with pytest.raises(ConfigError):
        PruneConfig(p=1.0, p_iter=0.25, n_submodels=8)
    with pytest.raises(ConfigError):
        PruneConfig(p=0.5, p_iter=0.6, n_submodels=8)
    with pytest.raises(ConfigError):
        PruneConfig(p=0.5, p_iter=0.25, n_submodels=3)  # under one pair/iter
    with pytest.raises(ConfigError):
        PruneConfig(p=0.5, p_iter=0.25, n_submodels=8, metric="magic")
    with pytest.raises(ConfigError):
        PruneConfig(p=0.5, p_iter=0.25, n_submodels=8, calibration_sequences=0)


def test_prune_config_to_dict_round_trips_grid():
    cfg = PruneConfig(p=0.4, p_iter=0.2, n_submodels=16, seed=3)
    d = cfg.to_dict()
    assert d["p"] == 0.4 and d["seed"] == 3
    assert d["grid"]["gammas"] == [100.0, 0.0, 1e-4]
    assert d["grid"]["epochs"] == 50


def test_greedy_hand_case():
    # four equal modules, budget for two: keep the two largest relevances
    cat = ModuleCatalog.from_counts([4], [1], 10, 10)
    beta = np.array([0.9, 0.5, 0.1, 0.8, 0.3])
    keep = greedy_select(beta, cat, budget=30)
    ids = {(m.kind, m.index) for m in keep}
    assert ids == {(HEAD, 0), (HEAD, 3), (FFN, 0)}


def test_greedy_respects_budget_exactly():
    cat = ModuleCatalog.from_counts([4], [4], 10, 10)
    beta = np.arange(8, dtype=float)
    keep = greedy_select(beta, cat, budget=40)
    mass = sum(int(cat.sizes[cat.index(m)]) for m in keep)
    assert mass <= 40
    assert len(keep) == 4


def test_greedy_promotes_empty_group():
    # FFN relevances are tiny but one FFN dim must survive; the best FFN
    # evicts the worst kept head to stay inside the budget
    cat = ModuleCatalog.from_counts([2], [2], 10, 10)
    beta = np.array([0.9, 0.8, 0.01, 0.02])
    keep = greedy_select(beta, cat, budget=20)
    ids = {(m.kind, m.index) for m in keep}
    assert ids == {(HEAD, 0), (FFN, 1)}


def test_greedy_keeps_infinite_relevance():
    cat = ModuleCatalog.from_counts([2], [2], 10, 10)
    beta = np.array([np.inf, 0.1, 0.5, np.inf])
    keep = greedy_select(beta, cat, budget=20)
    ids = {(m.kind, m.index) for m in keep}
    assert ids == {(HEAD, 0), (FFN, 1)}


def test_greedy_infeasible_budget():
    cat = ModuleCatalog.from_counts([2], [2], 10, 10)
    beta = np.ones(4)
    with pytest.raises(ConfigError):
        greedy_select(beta, cat, budget=15)  # cannot keep one of each kind


def test_greedy_mixed_sizes_property():
    rng = np.random.default_rng(0)
    cat = ModuleCatalog.from_counts([2, 2], [6, 6], 128, 24)
    for trial in range(50):
        beta = rng.normal(size=len(cat))
        b = budget(cat, 0.5)
        keep = greedy_select(beta, cat, b)
        mass = sum(int(cat.sizes[cat.index(m)]) for m in keep)
        assert mass <= b
        survivors = {(m.layer, m.kind) for m in keep}
        assert survivors == set(cat.groups())


def _run_config(**kw):
    base = dict(
        p=0.5, p_iter=0.25, n_submodels=12, metric="wanda", seed=0,
        calibration_sequences=4,
        grid=RegressionGrid(gammas=(1e-4,), lrs=(0.1,), batches=(8,), epochs=30),
    )
    base.update(kw)
    return PruneConfig(**base)


def test_noop_run(tiny_model, tiny_corpus):
    model, records = bonsai_run(
        tiny_model, tiny_corpus, PruneConfig(p=0.0, p_iter=0.0, n_submodels=0)
    )
    assert model is tiny_model
    assert records == []


def test_run_reaches_target(tiny_model, tiny_corpus, tiny_catalog):
    pruned, records = bonsai_run(tiny_model, tiny_corpus, _run_config())
    assert len(records) == 2
    final = records[-1]
    assert final.sparsity_prunable >= 0.5
    # overshoot is at most one module past the iteration budget
    assert final.sparsity_prunable < 0.5 + 128 / 1280
    kept_mass = sum(
        ModuleCatalog.for_model(pruned).sizes
    )
    assert kept_mass == tiny_catalog.d_prunable - sum(
        int(tiny_catalog.sizes[tiny_catalog.index(m)])
        for r in records for m in r.removed_original
    )


def test_run_cumulative_and_monotone(tiny_model, tiny_corpus):
    _, records = bonsai_run(tiny_model, tiny_corpus, _run_config())
    spars = [r.sparsity_prunable for r in records]
    assert spars == sorted(spars)
    for r in records:
        assert 0.0 <= r.sparsity_total <= r.sparsity_prunable
        assert len(r.masks) == len(r.utilities)
        assert r.wall_clock_s >= 0
        assert len(r.removed) == len(r.removed_original)


def test_run_removed_original_coordinates(tiny_model, tiny_corpus, tiny_catalog):
    _, records = bonsai_run(tiny_model, tiny_corpus, _run_config())
    seen = set()
    for r in records:
        for m in r.removed_original:
            assert m in tiny_catalog
            assert m not in seen  # an original module is removed at most once
            seen.add(m)


def test_final_keep_matches_sliced_model(tiny_model, tiny_corpus, tiny_catalog):
    pruned, records = bonsai_run(tiny_model, tiny_corpus, _run_config())
    keep = final_keep_original(tiny_catalog, records)
    rebuilt = slice_model(tiny_model, keep)
    assert save_bytes(rebuilt) == save_bytes(pruned)


def test_run_deterministic(tiny_model, tiny_corpus):
    a_model, a_records = bonsai_run(tiny_model, tiny_corpus, _run_config())
    b_model, b_records = bonsai_run(tiny_model, tiny_corpus, _run_config())
    assert save_bytes(a_model) == save_bytes(b_model)
    assert [r.removed_original for r in a_records] == [
        r.removed_original for r in b_records
    ]
    c_model, _ = bonsai_run(tiny_model, tiny_corpus, _run_config(seed=1))
    assert save_bytes(c_model) != save_bytes(a_model)


def test_run_records_are_replayable(tiny_model, tiny_corpus):
    _, records = bonsai_run(tiny_model, tiny_corpus, _run_config())
    for r in records:
        # every mask names the candidates of its own iteration's plan
        for mask in r.masks:
            for m in mask.dropped_modules():
                assert m in r.plan.candidates
        assert r.scores.candidates == r.plan.candidates
        assert r.post_utility is not None


def test_run_chunk_len_guard(tiny_model):
    from bonsai_forge import Corpus

    long_corpus = Corpus(np.zeros(512, dtype=np.uint32), chunk_len=128)
    with pytest.raises(InputError):
        bonsai_run(tiny_model, long_corpus, _run_config())
