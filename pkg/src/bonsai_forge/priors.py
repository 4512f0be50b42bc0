"""Prior relevance scores for live modules from plain forward passes.

Two data-driven metrics plus a uniform baseline. Activation magnitude is
the mean absolute pre-output-projection activation per module, positions
pooled into the sample axis (and head channels pooled likewise for
attention). The structured Wanda analogue multiplies the per-axis
activation RMS by the mean absolute output-projection weight of the
module's rows, then averages over output channels.

Degenerate all-zero scores are returned as computed; consumers that need
weights (the sampler) fall back to uniform there.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .catalog import FFN, HEAD, ModuleCatalog, ModuleId
from .errors import InputError
from .model import ActivationTrace, ModelBundle, forward

METRIC_UNIFORM = "uniform"
METRIC_ACT_MAGNITUDE = "act-magnitude"
METRIC_WANDA = "wanda"
METRICS = (METRIC_UNIFORM, METRIC_ACT_MAGNITUDE, METRIC_WANDA)


@dataclass(frozen=True)
class PriorScores:
    """One nonnegative score per live catalog module, catalog order."""

    catalog: ModuleCatalog
    values: np.ndarray
    metric: str
    samples: int

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.shape != (len(self.catalog),):
            raise InputError(
                f"expected {len(self.catalog)} scores, got shape {v.shape}"
            )
        if not np.isfinite(v).all():
            raise InputError("prior scores must be finite")
        if (v < 0).any():
            raise InputError("prior scores must be nonnegative")
        v.flags.writeable = False
        object.__setattr__(self, "values", v)

    def value(self, module: ModuleId) -> float:
        return float(self.values[self.catalog.index(module)])


def prior_uniform(catalog: ModuleCatalog) -> PriorScores:
    """Every live module scores 1; ranking degenerates to catalog order."""
    return PriorScores(catalog, np.ones(len(catalog)), METRIC_UNIFORM, 0)


def _check_trace(catalog: ModuleCatalog, trace: ActivationTrace) -> int:
    groups = catalog.groups()
    if not trace.keys():
        raise InputError("empty activation trace")
    samples = None
    for (layer, kind), idx in groups.items():
        try:
            axis = trace.axis_len(layer, kind)
        except KeyError:
            raise InputError(f"trace missing layer {layer} {kind}") from None
        if axis != len(idx):
            raise InputError(
                f"trace has {axis} modules for layer {layer} {kind}, catalog has {len(idx)}"
            )
        n = trace.samples(layer, kind)
        samples = n if samples is None else min(samples, n)
    return int(samples or 0)


def prior_act_magnitude(catalog: ModuleCatalog, trace: ActivationTrace) -> PriorScores:
    """Mean absolute activation per module axis."""
    samples = _check_trace(catalog, trace)
    values = np.zeros(len(catalog))
    for (layer, kind), idx in catalog.groups().items():
        values[idx] = trace.mean_abs(layer, kind)
    return PriorScores(catalog, values, METRIC_ACT_MAGNITUDE, samples)


def prior_wanda(
    catalog: ModuleCatalog, trace: ActivationTrace, model: ModelBundle
) -> PriorScores:
    """Activation RMS times mean |output-projection weight| per module.

    FFN dim f scores rms_f * mean_o |w_down[f, o]|. Head h scores its
    pooled-channel rms_h * mean over the head's head_dim rows of |wo|.
    """
    samples = _check_trace(catalog, trace)
    dh = model.config.head_dim
    values = np.zeros(len(catalog))
    for (layer, kind), idx in catalog.groups().items():
        rms = trace.rms(layer, kind)
        if kind == FFN:
            w = model.layers[layer].w_down  # (live_ffn, d_model)
            if w.shape[0] != rms.shape[0]:
                raise InputError(
                    f"layer {layer} ffn: trace axis {rms.shape[0]} vs down-projection rows {w.shape[0]}"
                )
            values[idx] = rms * np.abs(w).mean(axis=1)
        else:
            w = model.layers[layer].wo  # (live_heads * head_dim, d_model)
            if w.shape[0] != rms.shape[0] * dh:
                raise InputError(
                    f"layer {layer} head: trace axis {rms.shape[0]} vs O-projection rows {w.shape[0]}"
                )
            per_head_w = np.abs(w).reshape(rms.shape[0], dh * w.shape[1]).mean(axis=1)
            values[idx] = rms * per_head_w
    return PriorScores(catalog, values, METRIC_WANDA, samples)


def trace_model(model: ModelBundle, sequences) -> ActivationTrace:
    """Run captured forwards over token sequences and merge the traces."""
    merged = ActivationTrace()
    count = 0
    for seq in sequences:
        _, trace = forward(model, seq, capture=True)
        merged.merge(trace)
        count += 1
    if count == 0:
        raise InputError("no calibration sequences provided")
    return merged


def compute_priors(
    model: ModelBundle, sequences, metric: str, catalog: ModuleCatalog | None = None
) -> PriorScores:
    """Dispatch on metric tag; data-driven metrics trace the model first."""
    if catalog is None:
        catalog = ModuleCatalog.for_model(model)
    if metric == METRIC_UNIFORM:
        return prior_uniform(catalog)
    if metric == METRIC_ACT_MAGNITUDE:
        return prior_act_magnitude(catalog, trace_model(model, sequences))
    if metric == METRIC_WANDA:
        return prior_wanda(catalog, trace_model(model, sequences), model)
    raise InputError(f"unknown prior metric {metric!r}; expected one of {METRICS}")
