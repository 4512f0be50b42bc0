"""Single-file checkpoint format for model bundles.

Layout: 8 magic bytes, an unsigned 64-bit little-endian header length, a
UTF-8 JSON header, then the tensor buffers. The header lists tensor names,
shapes and byte offsets (relative to the end of the header) in buffer
order; buffers are contiguous little-endian float32. Everything after the
magic is plain JSON plus raw floats, so any language can read it, and a
save/load round trip is bit-identical.
"""

from __future__ import annotations

import io
import json
import os
from typing import BinaryIO

import numpy as np

from .errors import FormatError, InputError
from .model import LayerWeights, ModelBundle, ModelConfig

MAGIC = b"BONSAIM1"
FORMAT_VERSION = 1

_LAYER_TENSORS = (
    "wq", "wk", "wv", "wo", "w_gate", "w_up", "w_down", "attn_scale", "ffn_scale",
)


def _tensor_table(model: ModelBundle) -> list[tuple[str, np.ndarray]]:
    table = [("embedding", model.embedding), ("final_scale", model.final_scale)]
    for i, layer in enumerate(model.layers):
        for name in _LAYER_TENSORS:
            table.append((f"layers.{i}.{name}", getattr(layer, name)))
    return table


def save_bytes(model: ModelBundle) -> bytes:
    """Serialize the bundle; also the unit for byte-identity checks."""
    table = _tensor_table(model)
    entries = []
    offset = 0
    for name, t in table:
        nbytes = int(t.size) * 4
        entries.append({
            "name": name,
            "shape": list(t.shape),
            "offset": offset,
            "nbytes": nbytes,
        })
        offset += nbytes
    header = {
        "format_version": FORMAT_VERSION,
        "config": model.config.to_dict(),
        "tensors": entries,
    }
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(np.uint64(len(blob)).astype("<u8").tobytes())
    buf.write(blob)
    for _, t in table:
        buf.write(np.ascontiguousarray(t, dtype="<f4").tobytes())
    return buf.getvalue()


def save(model: ModelBundle, path: str | os.PathLike) -> None:
    """Write the bundle to path atomically (temp file + rename)."""
    path = os.fspath(path)
    tmp = path + ".tmp"
    with open(tmp, "wb") as f:
        f.write(save_bytes(model))
    os.replace(tmp, path)


def _read_exact(f: BinaryIO, n: int, what: str) -> bytes:
    data = f.read(n)
    if len(data) != n:
        raise FormatError(f"truncated checkpoint: expected {n} bytes of {what}, got {len(data)}")
    return data


def load(path: str | os.PathLike) -> ModelBundle:
    """Read a bundle; validates magic, header and buffer sizes before use."""
    with open(path, "rb") as f:
        magic = _read_exact(f, 8, "magic")
        if magic != MAGIC:
            raise FormatError(f"bad magic {magic!r}, expected {MAGIC!r}")
        (hlen,) = np.frombuffer(_read_exact(f, 8, "header length"), dtype="<u8")
        try:
            header = json.loads(_read_exact(f, int(hlen), "header").decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as e:
            raise FormatError(f"unreadable header: {e}") from None
        if header.get("format_version") != FORMAT_VERSION:
            raise FormatError(f"unsupported format version {header.get('format_version')}")
        try:
            config = ModelConfig.from_dict(header["config"])
            entries = header["tensors"]
        except (KeyError, InputError) as e:
            raise FormatError(f"invalid header: {e}") from None

        # validate the layout before touching the buffers
        expect_offset = 0
        for e in entries:
            shape = tuple(int(s) for s in e["shape"])
            nbytes = int(np.prod(shape, dtype=np.int64)) * 4 if shape else 4
            if int(e["nbytes"]) != nbytes:
                raise FormatError(
                    f"tensor {e['name']}: header nbytes {e['nbytes']} "
                    f"inconsistent with shape {shape}"
                )
            if int(e["offset"]) != expect_offset:
                raise FormatError(f"tensor {e['name']}: non-contiguous offset {e['offset']}")
            expect_offset += nbytes

        data = f.read()
        if len(data) != expect_offset:
            raise FormatError(
                f"truncated checkpoint: expected {expect_offset} buffer bytes, got {len(data)}"
            )

        tensors: dict[str, np.ndarray] = {}
        for e in entries:
            shape = tuple(int(s) for s in e["shape"])
            start, stop = int(e["offset"]), int(e["offset"]) + int(e["nbytes"])
            arr = np.frombuffer(data[start:stop], dtype="<f4").astype(np.float32)
            tensors[e["name"]] = arr.reshape(shape)

    def take(name: str, shape: tuple[int, ...]) -> np.ndarray:
        if name not in tensors:
            raise FormatError(f"tensor {name} missing from checkpoint")
        t = tensors.pop(name)
        if t.shape != shape:
            raise FormatError(f"tensor {name}: shape {t.shape}, config implies {shape}")
        return t

    d = config.d_model
    embedding = take("embedding", (config.vocab_size, d))
    final_scale = take("final_scale", (d,))
    layers = []
    for i in range(config.n_layers):
        # live widths come from the stored shapes; a sliced model keeps
        # its original config but narrower projections
        wq_name = f"layers.{i}.wq"
        if wq_name not in tensors:
            raise FormatError(f"tensor {wq_name} missing from checkpoint")
        width = tensors[wq_name].shape[1] if tensors[wq_name].ndim == 2 else -1
        gate_name = f"layers.{i}.w_gate"
        if gate_name not in tensors:
            raise FormatError(f"tensor {gate_name} missing from checkpoint")
        fdim = tensors[gate_name].shape[1] if tensors[gate_name].ndim == 2 else -1
        layers.append(LayerWeights(
            wq=take(wq_name, (d, width)),
            wk=take(f"layers.{i}.wk", (d, width)),
            wv=take(f"layers.{i}.wv", (d, width)),
            wo=take(f"layers.{i}.wo", (width, d)),
            w_gate=take(gate_name, (d, fdim)),
            w_up=take(f"layers.{i}.w_up", (d, fdim)),
            w_down=take(f"layers.{i}.w_down", (fdim, d)),
            attn_scale=take(f"layers.{i}.attn_scale", (d,)),
            ffn_scale=take(f"layers.{i}.ffn_scale", (d,)),
        ))
    if tensors:
        raise FormatError(f"unexpected extra tensors: {sorted(tensors)}")
    try:
        return ModelBundle(
            config=config,
            embedding=embedding,
            final_scale=final_scale,
            layers=tuple(layers),
        )
    except InputError as e:
        raise FormatError(f"checkpoint fails model validation: {e}") from None
