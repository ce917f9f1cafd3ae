"""Flat parameter vectors with a named-block layout, plus checkpoint IO.

A ParamVector owns a single contiguous float64 array; named blocks are
exposed as reshaped views so layer code can read/write them without
copying. Update ops never mutate in place: they return fresh vectors with
the same layout.
"""
from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

__all__ = ["LayoutEntry", "ParamVector", "sgd_step", "save_checkpoint", "load_checkpoint"]

_MAGIC = "labelcraft-params-v1"


@dataclass(frozen=True)
class LayoutEntry:
    name: str
    shape: tuple[int, ...]
    offset: int

    @property
    def size(self) -> int:
        return int(np.prod(self.shape)) if self.shape else 1


class ParamVector:
    """Flat float64 storage partitioned into named, shaped blocks."""

    def __init__(self, values: np.ndarray, layout: tuple[LayoutEntry, ...]):
        values = np.asarray(values, dtype=np.float64)
        if values.ndim != 1:
            raise ValueError("parameter storage must be one-dimensional")
        expected = 0
        for entry in layout:
            if entry.offset != expected:
                raise ValueError(f"layout block {entry.name!r} does not start at offset {expected}")
            expected += entry.size
        if expected != values.size:
            raise ValueError(f"layout covers {expected} values but storage holds {values.size}")
        self.values = values
        self.layout = tuple(layout)
        self._index = {e.name: e for e in layout}

    @classmethod
    def from_blocks(cls, blocks: list[tuple[str, np.ndarray]]) -> "ParamVector":
        layout = []
        offset = 0
        chunks = []
        for name, arr in blocks:
            arr = np.asarray(arr, dtype=np.float64)
            layout.append(LayoutEntry(name, tuple(arr.shape), offset))
            offset += arr.size
            chunks.append(arr.ravel())
        values = np.concatenate(chunks) if chunks else np.zeros(0)
        return cls(values, tuple(layout))

    def block(self, name: str) -> np.ndarray:
        """View of one named block, reshaped; mutating it mutates the vector."""
        entry = self._index[name]
        return self.values[entry.offset : entry.offset + entry.size].reshape(entry.shape)

    def names(self) -> list[str]:
        return [e.name for e in self.layout]

    def copy(self) -> "ParamVector":
        return ParamVector(self.values.copy(), self.layout)

    def zeros_like(self) -> "ParamVector":
        return ParamVector(np.zeros_like(self.values), self.layout)

    def same_layout(self, other: "ParamVector") -> bool:
        return self.layout == other.layout

    def __len__(self) -> int:
        return self.values.size

    def __repr__(self) -> str:
        names = ", ".join(self.names())
        return f"ParamVector({self.values.size} values: {names})"


def sgd_step(params: ParamVector, grad: ParamVector, lr: float) -> ParamVector:
    """Plain gradient-descent step ``params - lr * grad`` as a new vector."""
    if not params.same_layout(grad):
        raise ValueError("parameter and gradient layouts differ")
    return ParamVector(params.values - lr * grad.values, params.layout)


def save_checkpoint(path, params: ParamVector, meta: dict | None = None) -> None:
    """Write a checkpoint: one JSON manifest line, then raw little-endian float64."""
    manifest = {
        "format": _MAGIC,
        "layout": [{"name": e.name, "shape": list(e.shape), "offset": e.offset} for e in params.layout],
        "count": int(params.values.size),
        "meta": meta or {},
    }
    with open(path, "wb") as fh:
        fh.write(json.dumps(manifest, sort_keys=True).encode("utf-8"))
        fh.write(b"\n")
        fh.write(params.values.astype("<f8").tobytes())


def load_checkpoint(path) -> tuple[ParamVector, dict]:
    with open(path, "rb") as fh:
        header = fh.readline()
        payload = fh.read()
    manifest = json.loads(header.decode("utf-8"))
    if manifest.get("format") != _MAGIC:
        raise ValueError(f"{path}: not a labelcraft checkpoint")
    values = np.frombuffer(payload, dtype="<f8").astype(np.float64)
    if values.size != manifest["count"]:
        raise ValueError(f"{path}: expected {manifest['count']} values, found {values.size}")
    layout = tuple(
        LayoutEntry(item["name"], tuple(item["shape"]), item["offset"]) for item in manifest["layout"]
    )
    return ParamVector(values, layout), manifest.get("meta", {})
