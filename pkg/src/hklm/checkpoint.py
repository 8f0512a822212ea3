"""Checkpoint serialization: JSON header plus raw little-endian tensors."""

from __future__ import annotations

import json

import numpy as np

from .encoder import ModelConfig, param_names
from .optim import AdamWState

FORMAT_TAG = "hklm-ckpt"
FORMAT_VERSION = 1

_DTYPE_CODES = {"float32": "<f4", "float64": "<f8"}


class CheckpointError(ValueError):
    pass


def save_checkpoint(
    path,
    params: dict[str, np.ndarray],
    config: ModelConfig,
    vocab_hash: str,
    opt_state: AdamWState | None = None,
) -> None:
    """Tensors are written in declaration order, optimizer moments after."""
    names = param_names(config)
    tensors: list[tuple[str, np.ndarray]] = [(n, params[n]) for n in names]
    opt_meta = None
    if opt_state is not None:
        opt_meta = {"step": opt_state.step}
        tensors += [(f"m.{n}", opt_state.m[n]) for n in names]
        tensors += [(f"v.{n}", opt_state.v[n]) for n in names]
    code = _DTYPE_CODES[config.dtype]
    header = {
        "format": FORMAT_TAG,
        "version": FORMAT_VERSION,
        "config": config.to_json(),
        "vocab_hash": vocab_hash,
        "opt": opt_meta,
        "tensors": [{"name": n, "shape": list(a.shape)} for n, a in tensors],
    }
    with open(path, "wb") as fh:
        fh.write((json.dumps(header) + "\n").encode("utf-8"))
        for _, arr in tensors:
            fh.write(np.ascontiguousarray(arr, dtype=code).tobytes())


def load_checkpoint(path):
    """Returns (params, config, vocab_hash, opt_state or None), bit-exact."""
    with open(path, "rb") as fh:
        header_line = fh.readline()
        try:
            header = json.loads(header_line.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise CheckpointError("corrupt checkpoint header") from exc
        if header.get("format") != FORMAT_TAG:
            raise CheckpointError(f"unrecognized checkpoint format {header.get('format')!r}")
        if header.get("version") != FORMAT_VERSION:
            raise CheckpointError(
                f"checkpoint version {header.get('version')} != supported {FORMAT_VERSION}"
            )
        config = ModelConfig.from_json(header["config"])
        code = _DTYPE_CODES[config.dtype]
        itemsize = np.dtype(code).itemsize
        arrays: dict[str, np.ndarray] = {}
        for spec in header["tensors"]:
            shape = tuple(spec["shape"])
            n_items = int(np.prod(shape)) if shape else 1
            raw = fh.read(n_items * itemsize)
            if len(raw) != n_items * itemsize:
                raise CheckpointError(f"truncated checkpoint at tensor {spec['name']!r}")
            arrays[spec["name"]] = np.frombuffer(raw, dtype=code).reshape(shape).copy()
        if fh.read(1):
            raise CheckpointError("trailing bytes after checkpoint tensors")

    names = param_names(config)
    missing = [n for n in names if n not in arrays]
    if missing:
        raise CheckpointError(f"checkpoint missing tensors: {missing[:3]}")
    params = {n: arrays[n] for n in names}
    opt_state = None
    if header.get("opt") is not None:
        opt_state = AdamWState(
            step=int(header["opt"]["step"]),
            m={n: arrays[f"m.{n}"] for n in names},
            v={n: arrays[f"v.{n}"] for n in names},
        )
    return params, config, header["vocab_hash"], opt_state
