"""Shared fixtures: a tiny two-layer model, its catalog, and a small corpus."""

import pytest

from bonsai_forge import ModelConfig, ModuleCatalog, corpus_synthesize, random_model

# 2 layers x (2 heads @ 128 params + 16 FFN dims @ 24 params) = 36 modules,
# 1280 prunable parameters; big enough to prune, small enough to brute-check
TINY = ModelConfig(
    n_layers=2, d_model=8, n_heads=2, head_dim=4, ffn_dim=16,
    vocab_size=32, max_seq_len=64,
)


@pytest.fixture(scope="session")
def tiny_config():
    return TINY


@pytest.fixture(scope="session")
def tiny_model():
    return random_model(TINY, seed=0, std=0.2)


@pytest.fixture(scope="session")
def tiny_catalog(tiny_model):
    return ModuleCatalog.for_model(tiny_model)


@pytest.fixture(scope="session")
def tiny_corpus():
    return corpus_synthesize(TINY.vocab_size, 2048, seed=5, chunk_len=32)
