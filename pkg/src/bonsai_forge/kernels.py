"""Dense numeric kernels for the transformer engine.

Everything computes in float32. These are plain numpy routines with shape
checks; the engine composes them into full forward passes.
"""

import numpy as np

from .errors import InputError


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """a @ b with an explicit inner-dimension check."""
    if a.shape[-1] != b.shape[0]:
        raise InputError(f"matmul inner dims differ: {a.shape} @ {b.shape}")
    return a @ b


def rows_softmax(x: np.ndarray) -> np.ndarray:
    """Softmax over the last axis, numerically stabilised per row.

    Rows that are entirely -inf (fully masked) come out as all zeros rather
    than NaN; a zero row softmaxes to the uniform distribution.
    """
    m = np.max(x, axis=-1, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0).astype(x.dtype)
    e = np.exp(x - m)
    denom = np.sum(e, axis=-1, keepdims=True)
    return np.divide(e, denom, out=np.zeros_like(e), where=denom > 0)


def rms_norm(x: np.ndarray, scale: np.ndarray, eps: float = 1e-6) -> np.ndarray:
    """x / sqrt(mean(x^2) + eps) * scale over the last axis."""
    if x.shape[-1] != scale.shape[0]:
        raise InputError(f"rms_norm width {x.shape[-1]} != scale width {scale.shape[0]}")
    ms = np.mean(np.square(x), axis=-1, keepdims=True)
    return (x / np.sqrt(ms + np.float32(eps))) * scale


def silu(x: np.ndarray) -> np.ndarray:
    return x / (1.0 + np.exp(-x))


def silu_gate(gate: np.ndarray, up: np.ndarray) -> np.ndarray:
    """Gated activation silu(gate) * up used by the FFN block."""
    if gate.shape != up.shape:
        raise InputError(f"silu_gate shapes differ: {gate.shape} vs {up.shape}")
    return silu(gate) * up


def rotary_tables(seq_len: int, head_dim: int, base: float) -> tuple[np.ndarray, np.ndarray]:
    """Cos/sin tables of shape (seq_len, head_dim) for rotary embedding.

    head_dim must be even; frequencies follow base**(-2i/head_dim) and each
    table repeats its half-dim frequencies twice, matching the rotate-half
    convention of apply below.
    """
    if head_dim % 2 != 0:
        raise InputError(f"rotary head_dim must be even, got {head_dim}")
    inv_freq = base ** (-np.arange(0, head_dim, 2, dtype=np.float64) / head_dim)
    angles = np.outer(np.arange(seq_len, dtype=np.float64), inv_freq)
    emb = np.concatenate([angles, angles], axis=-1)
    return np.cos(emb).astype(np.float32), np.sin(emb).astype(np.float32)


def rotary_embed(x: np.ndarray, cos: np.ndarray, sin: np.ndarray) -> np.ndarray:
    """Rotate per-head vectors by position.

    x has shape (seq, heads, head_dim); cos/sin are (seq, head_dim) tables
    from rotary_tables. Uses the rotate-half convention:
    out = x * cos + rotate_half(x) * sin.
    """
    seq, _, head_dim = x.shape
    if cos.shape != (seq, head_dim):
        raise InputError(f"rotary table shape {cos.shape} does not match input {x.shape}")
    half = head_dim // 2
    rotated = np.concatenate([-x[..., half:], x[..., :half]], axis=-1)
    return x * cos[:, None, :] + rotated * sin[:, None, :]


def mean_cross_entropy(logits: np.ndarray, targets: np.ndarray) -> float:
    """Mean over positions of -log softmax probability of the target id."""
    if logits.ndim != 2:
        raise InputError(f"logits must be (positions, vocab), got shape {logits.shape}")
    targets = np.asarray(targets)
    if targets.shape != (logits.shape[0],):
        raise InputError(
            f"targets length {targets.shape} does not match {logits.shape[0]} positions"
        )
    if targets.size and (targets.min() < 0 or targets.max() >= logits.shape[1]):
        raise InputError("target id outside vocabulary")
    # log-softmax computed in float64 so tiny probabilities stay accurate
    z = logits.astype(np.float64)
    z -= z.max(axis=-1, keepdims=True)
    log_norm = np.log(np.sum(np.exp(z), axis=-1))
    picked = z[np.arange(z.shape[0]), targets]
    return float(np.mean(log_norm - picked))
