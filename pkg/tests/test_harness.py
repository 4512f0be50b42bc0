"""Corpus IO, utility evaluation and the latency harness."""

import math

import numpy as np
import pytest

from bonsai_forge import (
    Corpus,
    FormatError,
    InputError,
    corpus_load,
    corpus_save,
    corpus_synthesize,
    random_model,
    utility,
)
from bonsai_forge.harness import (
    CORPUS_MAGIC,
    attach_speedup,
    bench,
    utility_on_sequences,
)


def test_corpus_chunking():
    corpus = Corpus(np.arange(100, dtype=np.uint32), chunk_len=16)
    assert corpus.n_tokens == 100
    assert corpus.n_chunks == 6
    chunks = corpus.chunks()
    assert len(chunks) == 6
    assert np.array_equal(chunks[1], np.arange(16, 32))
    assert len(corpus.chunks(2)) == 2
    assert len(corpus.chunks(99)) == 6


def test_corpus_validation():
    with pytest.raises(InputError):
        Corpus(np.arange(10, dtype=np.uint32), chunk_len=1)
    with pytest.raises(InputError):
        Corpus(np.arange(4, dtype=np.uint32), chunk_len=8)
    with pytest.raises(InputError):
        Corpus(np.zeros((2, 2), dtype=np.uint32), chunk_len=2)


def test_corpus_ids_read_only():
    corpus = Corpus(np.arange(32, dtype=np.uint32), chunk_len=4)
    with pytest.raises(ValueError):
        corpus.ids[0] = 9


def test_sample_chunks_seeded():
    corpus = Corpus(np.arange(256, dtype=np.uint32), chunk_len=16)
    a = corpus.sample_chunks(5, np.random.default_rng(3))
    b = corpus.sample_chunks(5, np.random.default_rng(3))
    assert all(np.array_equal(x, y) for x, y in zip(a, b))
    assert all(len(c) == 16 for c in a)


def test_corpus_round_trip(tmp_path):
    corpus = corpus_synthesize(32, 1024, seed=9, chunk_len=32)
    path = tmp_path / "c.tok"
    corpus_save(corpus, path)
    loaded = corpus_load(path, chunk_len=32)
    assert np.array_equal(loaded.ids, corpus.ids)
    assert loaded.chunk_len == 32


def test_corpus_magic_guard(tmp_path):
    corpus = corpus_synthesize(8, 64, seed=0, chunk_len=8)
    path = tmp_path / "c.tok"
    corpus_save(corpus, path)
    raw = bytearray(path.read_bytes())
    assert bytes(raw[:8]) == CORPUS_MAGIC
    raw[0] ^= 0xFF
    path.write_bytes(bytes(raw))
    with pytest.raises(FormatError):
        corpus_load(path, chunk_len=8)


def test_corpus_truncation_detected(tmp_path):
    corpus = corpus_synthesize(8, 64, seed=0, chunk_len=8)
    path = tmp_path / "c.tok"
    corpus_save(corpus, path)
    raw = path.read_bytes()
    path.write_bytes(raw[:-2])
    with pytest.raises(FormatError):
        corpus_load(path, chunk_len=8)


def test_corpus_version_guard(tmp_path):
    corpus = corpus_synthesize(8, 64, seed=0, chunk_len=8)
    path = tmp_path / "c.tok"
    corpus_save(corpus, path)
    raw = bytearray(path.read_bytes())
    raw[8] = 99  # version field, little endian
    path.write_bytes(bytes(raw))
    with pytest.raises(FormatError):
        corpus_load(path, chunk_len=8)


def test_synthesize_properties():
    a = corpus_synthesize(16, 512, seed=4, chunk_len=32)
    b = corpus_synthesize(16, 512, seed=4, chunk_len=32)
    c = corpus_synthesize(16, 512, seed=5, chunk_len=32)
    assert np.array_equal(a.ids, b.ids)
    assert not np.array_equal(a.ids, c.ids)
    assert a.ids.max() < 16 and a.n_tokens == 512
    with pytest.raises(InputError):
        corpus_synthesize(1, 512, seed=0)
    with pytest.raises(InputError):
        corpus_synthesize(16, 8, seed=0, chunk_len=32)


def test_zero_model_utility_is_log_vocab(tiny_config, tiny_corpus):
    # all-zero weights give uniform logits: U = -ln(32), perplexity = 32
    zero = random_model(tiny_config, seed=0, std=0.0)
    report = utility(zero, tiny_corpus, chunk_budget=4)
    assert report.finite
    assert abs(report.U + math.log(32)) < 1e-6
    assert abs(report.perplexity - 32.0) < 1e-4
    assert report.perplexity == pytest.approx(math.exp(-report.U))


def test_utility_counts_predictions(tiny_model, tiny_corpus):
    report = utility(tiny_model, tiny_corpus, chunk_budget=3)
    # each 32-token chunk scores 31 next-token predictions
    assert report.chunk_count == 3
    assert report.token_count == 3 * 31


def test_utility_chunk_len_guard(tiny_model):
    long_corpus = Corpus(np.zeros(256, dtype=np.uint32), chunk_len=128)
    with pytest.raises(InputError):
        utility(tiny_model, long_corpus)  # max_seq_len is 64


def test_utility_nonfinite_flag(tiny_corpus):
    # overflow construction: constant ones into a float32-max FFN
    from bonsai_forge import LayerWeights, ModelBundle, ModelConfig

    cfg = ModelConfig(n_layers=1, d_model=8, n_heads=2, head_dim=4, ffn_dim=4,
                      vocab_size=32, max_seq_len=64)
    big = np.float32(3e38)
    layer = LayerWeights(
        wq=np.zeros((8, 8), dtype=np.float32), wk=np.zeros((8, 8), dtype=np.float32),
        wv=np.zeros((8, 8), dtype=np.float32), wo=np.zeros((8, 8), dtype=np.float32),
        w_gate=np.full((8, 4), big), w_up=np.full((8, 4), big),
        w_down=np.ones((4, 8), dtype=np.float32),
        attn_scale=np.ones(8, dtype=np.float32),
        ffn_scale=np.ones(8, dtype=np.float32),
    )
    blown = ModelBundle(
        config=cfg, embedding=np.ones((32, 8), dtype=np.float32),
        final_scale=np.ones(8, dtype=np.float32), layers=(layer,),
    )
    report = utility(blown, tiny_corpus, chunk_budget=1)
    assert not report.finite
    assert math.isnan(report.U)


def test_utility_on_sequences_empty(tiny_model):
    with pytest.raises(InputError):
        utility_on_sequences(tiny_model, [])
    with pytest.raises(InputError):
        utility_on_sequences(tiny_model, [np.array([1])])


def test_bench_report_statistics(tiny_model, tiny_corpus):
    report = bench(tiny_model, tiny_corpus, chunk_count=5, warmup=1)
    assert len(report.times_s) == 5
    lo, hi = min(report.times_s), max(report.times_s)
    assert lo <= report.median_s <= hi
    assert lo <= report.mean_s <= hi
    assert report.median_s <= report.p95_s <= hi + 1e-12
    assert report.tokens_per_second > 0
    assert report.chunk_len == 32
    assert report.speedup is None


def test_bench_input_checks(tiny_model, tiny_corpus):
    with pytest.raises(InputError):
        bench(tiny_model, tiny_corpus, chunk_count=0)
    with pytest.raises(InputError):
        bench(tiny_model, tiny_corpus, chunk_count=2, warmup=-1)


def test_attach_speedup(tiny_model, tiny_corpus):
    report = bench(tiny_model, tiny_corpus, chunk_count=3, warmup=1)
    slower = attach_speedup(report, baseline=report)
    assert slower.speedup == pytest.approx(1.0)
    doubled = attach_speedup(
        report,
        baseline=type(report)(
            times_s=report.times_s, mean_s=report.mean_s * 2,
            median_s=report.median_s, p95_s=report.p95_s,
            tokens_per_second=report.tokens_per_second,
            chunk_len=report.chunk_len,
        ),
    )
    assert doubled.speedup == pytest.approx(2.0)


def test_bench_timer_resolution_guard(tiny_model, tiny_corpus, monkeypatch):
    import time

    class FakeInfo:
        resolution = 10.0  # pretend the clock only ticks every 10 s

    monkeypatch.setattr(time, "get_clock_info", lambda name: FakeInfo)
    with pytest.raises(InputError, match="resolution"):
        bench(tiny_model, tiny_corpus, chunk_count=2, warmup=0)
