"""Minimal dense decoder-only transformer with virtual module masking.

The architecture is LLaMA-style throughout: pre-norm RMSNorm, rotary
position embeddings, multi-head causal attention, gated-SiLU FFN, tied
output head. All arithmetic is float32. A model can be evaluated with a
SubModelMask that zeroes the outputs of dropped modules (a "virtual"
sub-model), or physically sliced into a smaller model whose mask-free
forward matches the masked parent.

Bundles are immutable after construction: every tensor is marked
read-only, so concurrent forward passes over a shared model are safe.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Optional

import numpy as np

from . import kernels
from .catalog import FFN, HEAD, ModuleCatalog, ModuleId, SubModelMask
from .errors import InputError, NumericError, StructuralError


@dataclass(frozen=True)
class ModelConfig:
    """Architecture constants of the unsliced model."""

    n_layers: int
    d_model: int
    n_heads: int
    head_dim: int
    ffn_dim: int
    vocab_size: int
    max_seq_len: int
    rope_base: float = 10000.0

    def __post_init__(self):
        for name in ("n_layers", "d_model", "n_heads", "head_dim", "ffn_dim",
                     "vocab_size", "max_seq_len"):
            if getattr(self, name) < 1:
                raise InputError(f"{name} must be >= 1")
        if self.n_heads * self.head_dim != self.d_model:
            raise InputError(
                f"n_heads * head_dim = {self.n_heads * self.head_dim} "
                f"must equal d_model = {self.d_model}"
            )
        if self.head_dim % 2 != 0:
            raise InputError("head_dim must be even for rotary embedding")
        if not self.rope_base > 0:
            raise InputError("rope_base must be positive")

    def to_dict(self) -> dict:
        return {
            "n_layers": self.n_layers, "d_model": self.d_model,
            "n_heads": self.n_heads, "head_dim": self.head_dim,
            "ffn_dim": self.ffn_dim, "vocab_size": self.vocab_size,
            "max_seq_len": self.max_seq_len, "rope_base": self.rope_base,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        try:
            return cls(**{k: (float(v) if k == "rope_base" else int(v)) for k, v in d.items()})
        except TypeError as e:
            raise InputError(f"bad config: {e}") from None


@dataclass(frozen=True)
class LayerWeights:
    """One decoder layer. Projections use the x @ W convention.

    wq/wk/wv: (d_model, live_heads * head_dim); wo: (live_heads * head_dim,
    d_model); w_gate/w_up: (d_model, live_ffn); w_down: (live_ffn, d_model);
    attn_scale/ffn_scale: (d_model,) RMSNorm gains.
    """

    wq: np.ndarray
    wk: np.ndarray
    wv: np.ndarray
    wo: np.ndarray
    w_gate: np.ndarray
    w_up: np.ndarray
    w_down: np.ndarray
    attn_scale: np.ndarray
    ffn_scale: np.ndarray

    def tensors(self) -> dict[str, np.ndarray]:
        return {
            "wq": self.wq, "wk": self.wk, "wv": self.wv, "wo": self.wo,
            "w_gate": self.w_gate, "w_up": self.w_up, "w_down": self.w_down,
            "attn_scale": self.attn_scale, "ffn_scale": self.ffn_scale,
        }


@dataclass(frozen=True)
class ModelBundle:
    """Weights plus config; the object that gets masked, sliced and saved."""

    config: ModelConfig
    embedding: np.ndarray  # (vocab, d_model), also the tied output head
    final_scale: np.ndarray  # (d_model,)
    layers: tuple[LayerWeights, ...]

    def __post_init__(self):
        for t in self._all_tensors().values():
            if t.dtype != np.float32:
                raise InputError(f"model tensors must be float32, found {t.dtype}")
            t.flags.writeable = False
        self.validate()

    def _all_tensors(self) -> dict[str, np.ndarray]:
        out = {"embedding": self.embedding, "final_scale": self.final_scale}
        for i, layer in enumerate(self.layers):
            for name, t in layer.tensors().items():
                out[f"layers.{i}.{name}"] = t
        return out

    def live_heads(self, layer: int) -> int:
        return self.layers[layer].wq.shape[1] // self.config.head_dim

    def live_ffn(self, layer: int) -> int:
        return self.layers[layer].w_gate.shape[1]

    def validate(self) -> None:
        cfg = self.config
        if len(self.layers) != cfg.n_layers:
            raise InputError(f"expected {cfg.n_layers} layers, found {len(self.layers)}")
        if self.embedding.shape != (cfg.vocab_size, cfg.d_model):
            raise InputError(f"embedding shape {self.embedding.shape} inconsistent with config")
        if self.final_scale.shape != (cfg.d_model,):
            raise InputError("final_scale shape inconsistent with config")
        for i, layer in enumerate(self.layers):
            width = layer.wq.shape[1]
            if width == 0 or width % cfg.head_dim != 0:
                raise InputError(f"layer {i}: attention width {width} not a head multiple")
            h = width // cfg.head_dim
            if not 1 <= h <= cfg.n_heads:
                raise InputError(f"layer {i}: {h} heads outside [1, {cfg.n_heads}]")
            f = layer.w_gate.shape[1]
            if not 1 <= f <= cfg.ffn_dim:
                raise InputError(f"layer {i}: {f} FFN dims outside [1, {cfg.ffn_dim}]")
            expect = {
                "wq": (cfg.d_model, width), "wk": (cfg.d_model, width),
                "wv": (cfg.d_model, width), "wo": (width, cfg.d_model),
                "w_gate": (cfg.d_model, f), "w_up": (cfg.d_model, f),
                "w_down": (f, cfg.d_model),
                "attn_scale": (cfg.d_model,), "ffn_scale": (cfg.d_model,),
            }
            for name, shape in expect.items():
                t = getattr(layer, name)
                if t.shape != shape:
                    raise InputError(f"layer {i}: {name} shape {t.shape}, expected {shape}")
        for name, t in self._all_tensors().items():
            if not np.isfinite(t).all():
                raise InputError(f"non-finite values in tensor {name}")

    def n_params_total(self) -> int:
        """Every stored parameter; the tied output head is not double counted."""
        return sum(int(t.size) for t in self._all_tensors().values())

    def n_params_prunable(self) -> int:
        """Attention and FFN projection weights only (no embeddings/norms)."""
        total = 0
        for layer in self.layers:
            for name in ("wq", "wk", "wv", "wo", "w_gate", "w_up", "w_down"):
                total += int(getattr(layer, name).size)
        return total


class ActivationTrace:
    """Running per-module-axis activation statistics from captured forwards.

    For each (layer, kind) the trace accumulates the count, sum of absolute
    values and sum of squares of the pre-output-projection activations,
    flattened so that positions (and head channels, for attention) count as
    samples. mean_abs and rms per module axis derive from these sums.
    """

    def __init__(self):
        self._count: dict[tuple[int, str], int] = {}
        self._sum_abs: dict[tuple[int, str], np.ndarray] = {}
        self._sum_sq: dict[tuple[int, str], np.ndarray] = {}
        self.sequences = 0

    def add(self, layer: int, kind: str, flat: np.ndarray) -> None:
        """Accumulate a (samples, module_axis) activation block."""
        flat = np.asarray(flat, dtype=np.float32)
        if flat.ndim != 2:
            raise InputError(f"activation block must be 2-D, got shape {flat.shape}")
        self._accumulate(layer, kind, flat)

    def _accumulate(self, layer: int, kind: str, flat: np.ndarray) -> None:
        # flat: (samples, module_axis) in float32; sums kept in float64
        key = (layer, kind)
        n = flat.shape[0]
        s_abs = np.abs(flat).sum(axis=0, dtype=np.float64)
        s_sq = np.square(flat.astype(np.float64)).sum(axis=0)
        if key not in self._count:
            self._count[key] = n
            self._sum_abs[key] = s_abs
            self._sum_sq[key] = s_sq
        else:
            if self._sum_abs[key].shape != s_abs.shape:
                raise InputError(f"trace axis length changed for layer {layer} {kind}")
            self._count[key] += n
            self._sum_abs[key] += s_abs
            self._sum_sq[key] += s_sq

    def merge(self, other: "ActivationTrace") -> None:
        for key in other._count:
            self._accumulate_key(key, other._count[key], other._sum_abs[key], other._sum_sq[key])
        self.sequences += other.sequences

    def _accumulate_key(self, key, n, s_abs, s_sq):
        if key not in self._count:
            self._count[key] = n
            self._sum_abs[key] = s_abs.copy()
            self._sum_sq[key] = s_sq.copy()
        else:
            if self._sum_abs[key].shape != s_abs.shape:
                raise InputError(f"trace axis length changed for layer {key[0]} {key[1]}")
            self._count[key] += n
            self._sum_abs[key] += s_abs
            self._sum_sq[key] += s_sq

    def keys(self) -> list[tuple[int, str]]:
        return sorted(self._count.keys(), key=lambda k: (k[0], 0 if k[1] == HEAD else 1))

    def samples(self, layer: int, kind: str) -> int:
        return self._count[(layer, kind)]

    def axis_len(self, layer: int, kind: str) -> int:
        return self._sum_abs[(layer, kind)].shape[0]

    def mean_abs(self, layer: int, kind: str) -> np.ndarray:
        key = (layer, kind)
        if key not in self._count:
            raise InputError(f"no trace for layer {layer} {kind}")
        return self._sum_abs[key] / self._count[key]

    def rms(self, layer: int, kind: str) -> np.ndarray:
        key = (layer, kind)
        if key not in self._count:
            raise InputError(f"no trace for layer {layer} {kind}")
        return np.sqrt(self._sum_sq[key] / self._count[key])


def forward(
    model: ModelBundle,
    tokens,
    mask: Optional[SubModelMask] = None,
    capture: bool = False,
):
    """Score a token sequence; returns (seq_len, vocab) logits.

    With a mask, dropped attention heads contribute exactly zero to the
    attention output (zeroed before the O-projection) and dropped FFN dims
    contribute zero (gated activation zeroed before the down-projection).
    With capture=True, returns (logits, ActivationTrace) where the trace
    holds pre-output-projection statistics for every layer.
    """
    cfg = model.config
    tokens = np.asarray(tokens)
    if tokens.ndim != 1 or tokens.size == 0:
        raise InputError("tokens must be a non-empty 1-D sequence of ids")
    if tokens.min() < 0 or tokens.max() >= cfg.vocab_size:
        raise InputError(
            f"token id out of range: max {int(tokens.max())} vs vocab {cfg.vocab_size}"
        )
    seq = tokens.shape[0]
    if seq > cfg.max_seq_len:
        raise InputError(f"sequence length {seq} exceeds max_seq_len {cfg.max_seq_len}")
    if mask is not None and len(mask.catalog) != sum(
        model.live_heads(i) + model.live_ffn(i) for i in range(cfg.n_layers)
    ):
        raise InputError("mask catalog does not match the model's live modules")

    trace = ActivationTrace() if capture else None
    cos, sin = kernels.rotary_tables(seq, cfg.head_dim, cfg.rope_base)
    causal = np.triu(np.full((seq, seq), -np.inf, dtype=np.float32), k=1)
    inv_sqrt_dh = np.float32(1.0 / np.sqrt(cfg.head_dim))

    h = model.embedding[tokens]  # (seq, d_model)
    # overflow is detected via the explicit finiteness checks below
    with np.errstate(over="ignore", invalid="ignore"):
        for li, layer in enumerate(model.layers):
            n_heads = model.live_heads(li)

            # attention block
            x = kernels.rms_norm(h, layer.attn_scale)
            q = (x @ layer.wq).reshape(seq, n_heads, cfg.head_dim)
            k = (x @ layer.wk).reshape(seq, n_heads, cfg.head_dim)
            v = (x @ layer.wv).reshape(seq, n_heads, cfg.head_dim)
            q = kernels.rotary_embed(q, cos, sin)
            k = kernels.rotary_embed(k, cos, sin)
            scores = np.einsum("shd,thd->hst", q, k) * inv_sqrt_dh + causal
            attn = kernels.rows_softmax(scores)
            ctx = np.einsum("hst,thd->shd", attn, v)  # (seq, heads, head_dim)
            if mask is not None:
                keep = mask.keep_flags(li, HEAD)
                if keep.shape[0] != n_heads:
                    raise InputError(f"mask names {keep.shape[0]} heads in layer {li}, model has {n_heads}")
                if not keep.all():
                    ctx = ctx.copy()
                    ctx[:, ~keep, :] = 0.0
            if trace is not None:
                # flatten (seq, heads, head_dim) -> (seq*head_dim, heads)
                trace._accumulate(li, HEAD, ctx.transpose(0, 2, 1).reshape(-1, n_heads))
            h = h + ctx.reshape(seq, n_heads * cfg.head_dim) @ layer.wo

            # FFN block
            x = kernels.rms_norm(h, layer.ffn_scale)
            act = kernels.silu_gate(x @ layer.w_gate, x @ layer.w_up)  # (seq, live_ffn)
            if mask is not None:
                keep = mask.keep_flags(li, FFN)
                if keep.shape[0] != act.shape[1]:
                    raise InputError(f"mask names {keep.shape[0]} FFN dims in layer {li}, model has {act.shape[1]}")
                if not keep.all():
                    act = act.copy()
                    act[:, ~keep] = 0.0
            if trace is not None:
                trace._accumulate(li, FFN, act)
            h = h + act @ layer.w_down

            if not np.isfinite(h).all():
                raise NumericError(f"non-finite activation after layer {li}", layer=li)

        h = kernels.rms_norm(h, model.final_scale)
        logits = h @ model.embedding.T
    if not np.isfinite(logits).all():
        raise NumericError("non-finite logits", layer=cfg.n_layers - 1)
    if trace is not None:
        trace.sequences = 1
        return logits, trace
    return logits


def slice_model(model: ModelBundle, keep: Iterable[ModuleId]) -> ModelBundle:
    """Physically delete every live module not in keep.

    Dropped heads lose their Q/K/V columns and O rows; dropped FFN dims lose
    their gate/up columns and down row. Every layer must retain at least one
    head and one FFN dim. The result's mask-free forward matches the
    parent's forward under the corresponding mask.
    """
    cfg = model.config
    live = ModuleCatalog.for_model(model)
    keep = list(keep)
    for m in keep:
        if m not in live:
            raise InputError(f"keep set names module {m} not in the model's live catalog")
    keep_set = set(keep)

    new_layers = []
    for li, layer in enumerate(model.layers):
        head_keep = sorted(
            m.index for m in keep_set if m.layer == li and m.kind == HEAD
        )
        ffn_keep = sorted(
            m.index for m in keep_set if m.layer == li and m.kind == FFN
        )
        if not head_keep:
            raise StructuralError(f"layer {li} would retain no attention heads")
        if not ffn_keep:
            raise StructuralError(f"layer {li} would retain no FFN dims")
        dh = cfg.head_dim
        cols = np.concatenate([np.arange(i * dh, (i + 1) * dh) for i in head_keep])
        ffn_idx = np.array(ffn_keep, dtype=np.int64)
        new_layers.append(LayerWeights(
            wq=layer.wq[:, cols].copy(),
            wk=layer.wk[:, cols].copy(),
            wv=layer.wv[:, cols].copy(),
            wo=layer.wo[cols, :].copy(),
            w_gate=layer.w_gate[:, ffn_idx].copy(),
            w_up=layer.w_up[:, ffn_idx].copy(),
            w_down=layer.w_down[ffn_idx, :].copy(),
            attn_scale=layer.attn_scale.copy(),
            ffn_scale=layer.ffn_scale.copy(),
        ))
    return ModelBundle(
        config=cfg,
        embedding=model.embedding.copy(),
        final_scale=model.final_scale.copy(),
        layers=tuple(new_layers),
    )


def mask_to_keep(mask: SubModelMask) -> list[ModuleId]:
    """Keep set corresponding to a mask's set bits."""
    return mask.kept_modules()


def random_model(config: ModelConfig, seed: int = 0, std: float = 0.02) -> ModelBundle:
    """Random dense model; std=0 gives the all-zero-weights model.

    Projections and the embedding are N(0, std^2); norm gains start at one.
    """
    rng = np.random.default_rng(np.random.SeedSequence((int(seed), 0xB025A1)))
    d, dh, nh, f = config.d_model, config.head_dim, config.n_heads, config.ffn_dim

    def w(*shape):
        return (rng.standard_normal(shape) * std).astype(np.float32)

    layers = tuple(
        LayerWeights(
            wq=w(d, nh * dh), wk=w(d, nh * dh), wv=w(d, nh * dh), wo=w(nh * dh, d),
            w_gate=w(d, f), w_up=w(d, f), w_down=w(f, d),
            attn_scale=np.ones(d, dtype=np.float32),
            ffn_scale=np.ones(d, dtype=np.float32),
        )
        for _ in range(config.n_layers)
    )
    return ModelBundle(
        config=config,
        embedding=w(config.vocab_size, d),
        final_scale=np.ones(d, dtype=np.float32),
        layers=layers,
    )
