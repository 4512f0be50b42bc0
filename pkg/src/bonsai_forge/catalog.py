"""Prunable-module accounting: ids, sizes, masks and sparsity budgets.

A module is one attention head or one FFN intermediate dimension. The
catalog lists them in a stable order (layer-major, heads before FFN dims)
together with per-module parameter counts, and masks are bit vectors over
that order.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Iterable, Sequence

import numpy as np

from .errors import InputError

if TYPE_CHECKING:  # pragma: no cover
    from .model import ModelBundle, ModelConfig

HEAD = "head"
FFN = "ffn"
KINDS = (HEAD, FFN)


@dataclass(frozen=True, order=True)
class ModuleId:
    """One prunable unit: (layer, kind, index within kind)."""

    layer: int
    kind: str
    index: int

    def __post_init__(self):
        if self.kind not in KINDS:
            raise InputError(f"unknown module kind {self.kind!r}")
        if self.layer < 0 or self.index < 0:
            raise InputError(f"negative layer/index in {self}")

    def __str__(self) -> str:
        return f"{self.layer}:{self.kind}:{self.index}"

    @classmethod
    def parse(cls, text: str) -> "ModuleId":
        parts = text.split(":")
        if len(parts) != 3:
            raise InputError(f"bad module id {text!r}")
        return cls(int(parts[0]), parts[1], int(parts[2]))


def head_param_count(config) -> int:
    """Q/K/V columns plus O rows for one head: 4 * d_model * head_dim."""
    return 4 * config.d_model * config.head_dim


def ffn_param_count(config) -> int:
    """Gate/up columns plus down row for one FFN dim: 3 * d_model."""
    return 3 * config.d_model


@dataclass(frozen=True, eq=False)
class ModuleCatalog:
    """Ordered list of prunable modules with parameter sizes.

    Ordering is layer-major with heads before FFN dims within a layer, and
    ascending index within a kind. Sizes are per-module parameter counts;
    their sum is the prunable parameter total.
    """

    entries: tuple[ModuleId, ...]
    sizes: np.ndarray  # int64, aligned with entries
    _index_of: dict[ModuleId, int] = field(default_factory=dict, repr=False, compare=False)

    def __eq__(self, other) -> bool:
        if not isinstance(other, ModuleCatalog):
            return NotImplemented
        return self.entries == other.entries and np.array_equal(self.sizes, other.sizes)

    def __hash__(self) -> int:
        return hash(self.entries)

    def __post_init__(self):
        sizes = np.asarray(self.sizes, dtype=np.int64)
        object.__setattr__(self, "sizes", sizes)
        if len(self.entries) != sizes.shape[0]:
            raise InputError("catalog entries and sizes differ in length")
        if sizes.size and sizes.min() <= 0:
            raise InputError("module sizes must be positive")
        if list(self.entries) != sorted(self.entries, key=_order_key):
            raise InputError("catalog entries not in layer-major, heads-first order")
        index = {m: i for i, m in enumerate(self.entries)}
        if len(index) != len(self.entries):
            raise InputError("duplicate module ids in catalog")
        object.__setattr__(self, "_index_of", index)
        sizes.flags.writeable = False

    def __len__(self) -> int:
        return len(self.entries)

    @property
    def d_prunable(self) -> int:
        return int(self.sizes.sum())

    def index(self, module: ModuleId) -> int:
        try:
            return self._index_of[module]
        except KeyError:
            raise InputError(f"module {module} not in catalog") from None

    def __contains__(self, module: ModuleId) -> bool:
        return module in self._index_of

    def group_indices(self, layer: int, kind: str) -> np.ndarray:
        """Catalog positions of every module in one (layer, kind) group."""
        return np.array(
            [i for i, m in enumerate(self.entries) if m.layer == layer and m.kind == kind],
            dtype=np.int64,
        )

    def groups(self) -> dict[tuple[int, str], np.ndarray]:
        """Catalog positions per (layer, kind) group, in catalog order."""
        out: dict[tuple[int, str], list[int]] = {}
        for i, m in enumerate(self.entries):
            out.setdefault((m.layer, m.kind), []).append(i)
        return {key: np.array(idx, dtype=np.int64) for key, idx in out.items()}

    @classmethod
    def from_counts(
        cls,
        heads_per_layer: Sequence[int],
        ffn_per_layer: Sequence[int],
        head_size: int,
        ffn_size: int,
    ) -> "ModuleCatalog":
        if len(heads_per_layer) != len(ffn_per_layer):
            raise InputError("per-layer head and FFN count lists differ in length")
        entries: list[ModuleId] = []
        sizes: list[int] = []
        for layer, (n_h, n_f) in enumerate(zip(heads_per_layer, ffn_per_layer)):
            entries.extend(ModuleId(layer, HEAD, i) for i in range(n_h))
            sizes.extend([head_size] * n_h)
            entries.extend(ModuleId(layer, FFN, i) for i in range(n_f))
            sizes.extend([ffn_size] * n_f)
        return cls(tuple(entries), np.array(sizes, dtype=np.int64))

    @classmethod
    def for_model(cls, model: "ModelBundle") -> "ModuleCatalog":
        """Catalog over the model's live modules (per-layer counts may differ)."""
        cfg = model.config
        return cls.from_counts(
            [model.live_heads(i) for i in range(cfg.n_layers)],
            [model.live_ffn(i) for i in range(cfg.n_layers)],
            head_param_count(cfg),
            ffn_param_count(cfg),
        )


def enumerate_modules(config: "ModelConfig") -> ModuleCatalog:
    """Catalog of the full (unsliced) architecture described by config."""
    return ModuleCatalog.from_counts(
        [config.n_heads] * config.n_layers,
        [config.ffn_dim] * config.n_layers,
        head_param_count(config),
        ffn_param_count(config),
    )


def budget(catalog: ModuleCatalog, p: float) -> int:
    """Max kept parameter count at sparsity p: floor((1 - p) * prunable total)."""
    if not 0.0 <= p < 1.0:
        raise InputError(f"sparsity must be in [0, 1), got {p}")
    x = (1.0 - p) * catalog.d_prunable
    # guard against 0.65 * 1280 = 831.9999... style float artifacts
    return int(math.floor(x + max(1e-9, abs(x) * 1e-12)))


def guarded_ceil(x: float) -> int:
    """Ceiling robust to float artifacts like 0.5 / 0.05 = 10.000000000000002."""
    return int(math.ceil(x - max(1e-9, abs(x) * 1e-12)))


@dataclass(frozen=True, eq=False)
class SubModelMask:
    """Binary inclusion vector over a catalog (1 = module kept)."""

    catalog: ModuleCatalog
    bits: np.ndarray  # bool, aligned with catalog.entries

    def __eq__(self, other) -> bool:
        if not isinstance(other, SubModelMask):
            return NotImplemented
        return self.catalog == other.catalog and np.array_equal(self.bits, other.bits)

    def __hash__(self) -> int:
        return hash((self.catalog, self.bits.tobytes()))

    def __post_init__(self):
        bits = np.asarray(self.bits, dtype=bool)
        if bits.shape != (len(self.catalog),):
            raise InputError(
                f"mask length {bits.shape} does not match catalog size {len(self.catalog)}"
            )
        bits = bits.copy()
        bits.flags.writeable = False
        object.__setattr__(self, "bits", bits)

    @classmethod
    def full(cls, catalog: ModuleCatalog) -> "SubModelMask":
        return cls(catalog, np.ones(len(catalog), dtype=bool))

    @property
    def dropped_params(self) -> int:
        return int(self.catalog.sizes[~self.bits].sum())

    @property
    def kept_params(self) -> int:
        return int(self.catalog.sizes[self.bits].sum())

    def dropped_modules(self) -> list[ModuleId]:
        return [m for m, b in zip(self.catalog.entries, self.bits) if not b]

    def kept_modules(self) -> list[ModuleId]:
        return [m for m, b in zip(self.catalog.entries, self.bits) if b]

    def keep_flags(self, layer: int, kind: str) -> np.ndarray:
        """Per-group keep booleans in index order, for the engine."""
        return self.bits[self.catalog.group_indices(layer, kind)]

    def bitstring(self) -> str:
        return "".join("1" if b else "0" for b in self.bits)

    def to_text(self) -> str:
        """One line per module: layer,kind,index,bit."""
        lines = [
            f"{m.layer},{m.kind},{m.index},{1 if b else 0}"
            for m, b in zip(self.catalog.entries, self.bits)
        ]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str, catalog: ModuleCatalog) -> "SubModelMask":
        bits = np.zeros(len(catalog), dtype=bool)
        seen = np.zeros(len(catalog), dtype=bool)
        for lineno, raw in enumerate(text.splitlines(), start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split(",")
            if len(parts) != 4:
                raise InputError(f"mask line {lineno}: expected layer,kind,index,bit")
            module = ModuleId(int(parts[0]), parts[1], int(parts[2]))
            i = catalog.index(module)
            if seen[i]:
                raise InputError(f"mask line {lineno}: duplicate module {module}")
            seen[i] = True
            bit = parts[3].strip()
            if bit not in ("0", "1"):
                raise InputError(f"mask line {lineno}: bit must be 0 or 1")
            bits[i] = bit == "1"
        if not seen.all():
            missing = catalog.entries[int(np.argmin(seen))]
            raise InputError(f"mask text missing module {missing}")
        return cls(catalog, bits)


def mask_complement(mask: SubModelMask, fixed: Iterable[ModuleId]) -> SubModelMask:
    """Flip every bit outside the fixed set; fixed modules stay kept.

    Fixed modules must be kept (bit 1) in the input mask.
    """
    fixed_idx = np.array(sorted(mask.catalog.index(m) for m in fixed), dtype=np.int64)
    if fixed_idx.size and not mask.bits[fixed_idx].all():
        bad = mask.catalog.entries[int(fixed_idx[np.argmin(mask.bits[fixed_idx])])]
        raise InputError(f"fixed module {bad} has bit 0 in mask")
    bits = ~mask.bits
    if fixed_idx.size:
        bits[fixed_idx] = True
    return SubModelMask(mask.catalog, bits)


def _order_key(m: ModuleId) -> tuple[int, int, int]:
    return (m.layer, KINDS.index(m.kind), m.index)
