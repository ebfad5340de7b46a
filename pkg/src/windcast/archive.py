"""Model persistence: one ``.npz`` holding a JSON header plus named float64 tensors.

The header records the format version, a type tag and the model
configuration. Tensors are stored raw, so save/load round-trips are exact.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .mlp import ResidualMlp
from .transformer import TransformerConfig, TransformerModel

__all__ = ["FORMAT_VERSION", "ArchiveError", "save_archive", "load_archive", "save_model", "load_model"]

FORMAT_VERSION = 1
_HEADER = "__header__"


class ArchiveError(ValueError):
    pass


def save_archive(path, kind: str, config: dict, tensors: dict[str, np.ndarray]) -> None:
    header = {"format_version": FORMAT_VERSION, "type": kind, "config": config, "tensors": list(tensors)}
    payload = {_HEADER: np.frombuffer(json.dumps(header, sort_keys=True).encode("utf-8"), dtype=np.uint8)}
    for name, arr in tensors.items():
        payload[name] = np.ascontiguousarray(arr, dtype=np.float64)
    with Path(path).open("wb") as fh:
        np.savez(fh, **payload)


def load_archive(path):
    """Returns ``(type tag, config dict, tensors)``."""
    path = Path(path)
    if not path.is_file():
        raise ArchiveError(f"model archive not found: {path}")
    with np.load(path, allow_pickle=False) as data:
        if _HEADER not in data.files:
            raise ArchiveError(f"{path}: missing archive header")
        header = json.loads(bytes(data[_HEADER]).decode("utf-8"))
        if header.get("format_version") != FORMAT_VERSION:
            raise ArchiveError(f"{path}: unsupported format version {header.get('format_version')}")
        tensors = {name: data[name] for name in header["tensors"]}
    return header["type"], header["config"], tensors


def save_model(path, model) -> None:
    """Save a :class:`TransformerModel` or :class:`ResidualMlp`."""
    if isinstance(model, TransformerModel):
        save_archive(path, "transformer", model.config.to_dict(), model.params)
    elif isinstance(model, ResidualMlp):
        tensors = {"w_in": model.w_in, "b_hidden": model.b_hidden, "w_out": model.w_out, "b_out": np.array([model.b_out])}
        save_archive(path, "residual_mlp", {"lags": model.lags}, tensors)
    else:
        raise TypeError(f"cannot archive {type(model).__name__}")


def load_model(path):
    kind, config, tensors = load_archive(path)
    if kind == "transformer":
        return TransformerModel(TransformerConfig(**config), tensors)
    if kind == "residual_mlp":
        return ResidualMlp(tensors["w_in"], tensors["b_hidden"], tensors["w_out"], float(tensors["b_out"][0]))
    raise ArchiveError(f"{path}: unknown model type {kind!r}")
