"""Corpus handling, utility evaluation and latency benchmarking.

Utility U is the mean token log-likelihood in nats (higher is better);
perplexity = exp(-U) is reported alongside. Corpora are flat token-id
streams scored in fixed-length chunks; a seeded Markov-chain synthesizer
provides desk-scale data with enough structure that pruning decisions
matter. Benchmarks run single-threaded on a monotonic clock so measured
speedups reflect arithmetic reduction rather than scheduler behavior.
"""

from __future__ import annotations

import os
import time
from dataclasses import dataclass, replace
from typing import Optional, Sequence

import numpy as np
from threadpoolctl import threadpool_limits

from .catalog import SubModelMask
from .errors import FormatError, InputError, NumericError
from .kernels import mean_cross_entropy
from .model import ModelBundle, forward
from .seeding import rng_for

CORPUS_MAGIC = b"BONSAITK"
CORPUS_VERSION = 1


@dataclass(frozen=True)
class Corpus:
    """Flat stream of token ids with a fixed evaluation chunk length."""

    ids: np.ndarray  # uint32, 1-D
    chunk_len: int
    provenance: str = ""

    def __post_init__(self):
        ids = np.ascontiguousarray(self.ids, dtype=np.uint32)
        if ids.ndim != 1 or ids.size == 0:
            raise InputError("corpus ids must be a non-empty 1-D array")
        if self.chunk_len < 2:
            raise InputError("chunk_len must be at least 2 (need a next token to score)")
        if ids.size < self.chunk_len:
            raise InputError(
                f"corpus of {ids.size} tokens shorter than chunk_len {self.chunk_len}"
            )
        ids.flags.writeable = False
        object.__setattr__(self, "ids", ids)

    @property
    def n_tokens(self) -> int:
        return int(self.ids.size)

    @property
    def n_chunks(self) -> int:
        return self.n_tokens // self.chunk_len

    def chunks(self, limit: Optional[int] = None) -> list[np.ndarray]:
        """Non-overlapping chunks from the start, up to limit."""
        count = self.n_chunks if limit is None else min(limit, self.n_chunks)
        L = self.chunk_len
        return [self.ids[i * L:(i + 1) * L] for i in range(count)]

    def sample_chunks(self, count: int, rng: np.random.Generator) -> list[np.ndarray]:
        """count random chunk windows (seeded by the caller's generator)."""
        if count < 1:
            raise InputError("need at least one chunk")
        hi = self.n_tokens - self.chunk_len
        starts = rng.integers(0, hi + 1, size=count)
        return [self.ids[s:s + self.chunk_len] for s in starts]


def corpus_save(corpus: Corpus, path: str | os.PathLike) -> None:
    path = os.fspath(path)
    tmp = path + ".tmp"
    with open(tmp, "wb") as f:
        f.write(CORPUS_MAGIC)
        f.write(np.uint32(CORPUS_VERSION).astype("<u4").tobytes())
        f.write(np.uint32(corpus.n_tokens).astype("<u4").tobytes())
        f.write(np.ascontiguousarray(corpus.ids, dtype="<u4").tobytes())
    os.replace(tmp, path)


def corpus_load(path: str | os.PathLike, chunk_len: int = 128) -> Corpus:
    with open(path, "rb") as f:
        header = f.read(16)
        if len(header) != 16:
            raise FormatError(f"truncated corpus header: {len(header)} bytes")
        if header[:8] != CORPUS_MAGIC:
            raise FormatError(f"bad corpus magic {header[:8]!r}")
        (version,) = np.frombuffer(header[8:12], dtype="<u4")
        if int(version) != CORPUS_VERSION:
            raise FormatError(f"unsupported corpus version {int(version)}")
        (count,) = np.frombuffer(header[12:16], dtype="<u4")
        data = f.read()
    if len(data) != int(count) * 4:
        raise FormatError(
            f"corpus declares {int(count)} ids but carries {len(data)} payload bytes"
        )
    ids = np.frombuffer(data, dtype="<u4").astype(np.uint32)
    return Corpus(ids, chunk_len, provenance=os.fspath(path))


def corpus_synthesize(
    vocab: int, length: int, seed: int, chunk_len: int = 128
) -> Corpus:
    """Seeded first-order Markov chain over the vocab.

    Transition rows are sparse-ish Dirichlet(0.1) draws, so bigram
    structure is strong and a model's quality genuinely shows up in U.
    """
    if vocab < 2:
        raise InputError("vocab must be at least 2")
    if length < chunk_len:
        raise InputError(f"length {length} shorter than chunk_len {chunk_len}")
    rng = rng_for(int(seed))
    transitions = rng.dirichlet(np.full(vocab, 0.1), size=vocab)
    cum = np.cumsum(transitions, axis=1)
    cum[:, -1] = 1.0  # close the float gap so searchsorted never overflows
    ids = np.empty(length, dtype=np.uint32)
    state = int(rng.integers(vocab))
    draws = rng.random(length)
    for t in range(length):
        ids[t] = state
        state = int(np.searchsorted(cum[state], draws[t], side="right"))
    return Corpus(ids, chunk_len, provenance=f"synthetic(vocab={vocab}, seed={seed})")


@dataclass(frozen=True)
class UtilityReport:
    """Mean token log-likelihood and its perplexity."""

    U: float
    perplexity: float
    token_count: int
    chunk_count: int
    finite: bool = True

    def to_dict(self) -> dict:
        return {
            "U": self.U, "perplexity": self.perplexity,
            "token_count": self.token_count, "chunk_count": self.chunk_count,
            "finite": self.finite,
        }


def utility_on_sequences(
    model: ModelBundle, sequences: Sequence[np.ndarray], mask: Optional[SubModelMask] = None
) -> UtilityReport:
    """Score explicit token sequences; the shared path under utility()."""
    if not len(sequences):
        raise InputError("no sequences to score")
    total_ll = 0.0
    tokens = 0
    try:
        for seq in sequences:
            seq = np.asarray(seq)
            if seq.size < 2:
                raise InputError("sequences need at least 2 tokens to score")
            logits = forward(model, seq, mask=mask)
            n = seq.size - 1
            total_ll += -mean_cross_entropy(logits[:-1], seq[1:]) * n
            tokens += n
    except NumericError:
        return UtilityReport(
            U=float("nan"), perplexity=float("nan"),
            token_count=tokens, chunk_count=len(sequences), finite=False,
        )
    u = total_ll / tokens
    return UtilityReport(
        U=float(u), perplexity=float(np.exp(-u)),
        token_count=tokens, chunk_count=len(sequences), finite=True,
    )


def utility(
    model: ModelBundle,
    corpus: Corpus,
    mask: Optional[SubModelMask] = None,
    chunk_budget: Optional[int] = None,
) -> UtilityReport:
    """Mean token log-likelihood over up to chunk_budget leading chunks."""
    if corpus.chunk_len > model.config.max_seq_len:
        raise InputError(
            f"chunk_len {corpus.chunk_len} exceeds model max_seq_len "
            f"{model.config.max_seq_len}"
        )
    return utility_on_sequences(model, corpus.chunks(chunk_budget), mask=mask)


@dataclass(frozen=True)
class LatencyReport:
    """Per-chunk wall times (seconds) with summary statistics."""

    times_s: tuple[float, ...]
    mean_s: float
    median_s: float
    p95_s: float
    tokens_per_second: float
    chunk_len: int
    speedup: Optional[float] = None

    def to_dict(self) -> dict:
        return {
            "times_s": list(self.times_s), "mean_s": self.mean_s,
            "median_s": self.median_s, "p95_s": self.p95_s,
            "tokens_per_second": self.tokens_per_second,
            "chunk_len": self.chunk_len, "speedup": self.speedup,
        }


def bench(
    model: ModelBundle,
    corpus: Corpus,
    chunk_count: int = 10,
    warmup: int = 3,
    baseline: Optional[LatencyReport] = None,
) -> LatencyReport:
    """Time forward passes on corpus chunks, single-threaded, warmup excluded."""
    if chunk_count < 1:
        raise InputError("chunk_count must be at least 1")
    if warmup < 0:
        raise InputError("warmup must be nonnegative")
    if corpus.chunk_len > model.config.max_seq_len:
        raise InputError(
            f"chunk_len {corpus.chunk_len} exceeds model max_seq_len "
            f"{model.config.max_seq_len}"
        )
    available = corpus.chunks()
    runs = [available[i % len(available)] for i in range(warmup + chunk_count)]

    times: list[float] = []
    with threadpool_limits(limits=1):
        for i, chunk in enumerate(runs):
            t0 = time.perf_counter()
            forward(model, chunk)
            dt = time.perf_counter() - t0
            if i >= warmup:
                times.append(dt)

    resolution = time.get_clock_info("perf_counter").resolution
    if min(times) < 100.0 * resolution:
        raise InputError(
            f"per-chunk time {min(times):.3e}s too close to timer resolution "
            f"{resolution:.3e}s; use longer chunks or a bigger model"
        )
    arr = np.array(times)
    report = LatencyReport(
        times_s=tuple(times),
        mean_s=float(arr.mean()),
        median_s=float(np.median(arr)),
        p95_s=float(np.percentile(arr, 95)),
        tokens_per_second=float(corpus.chunk_len * len(times) / arr.sum()),
        chunk_len=corpus.chunk_len,
    )
    if baseline is not None:
        report = attach_speedup(report, baseline)
    return report


def attach_speedup(report: LatencyReport, baseline: LatencyReport) -> LatencyReport:
    """speedup = baseline mean time / subject mean time."""
    return replace(report, speedup=baseline.mean_s / report.mean_s)
