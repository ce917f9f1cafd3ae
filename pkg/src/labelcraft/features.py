"""Feature encoding: hashed categorical ids, numeric passthrough, history windows.

Records are turned into flat numpy arrays once per split; training code only
touches arrays. Ids are hashed with crc32 so index assignment is stable
across processes and runs.
"""
from __future__ import annotations

import zlib
from dataclasses import dataclass

import numpy as np

from .data import InteractionRecord

__all__ = ["EncoderConfig", "FeatureEncoder", "EncodedDataset"]


@dataclass(frozen=True)
class EncoderConfig:
    user_hash_size: int = 4096
    item_hash_size: int = 2048
    history_length: int = 0  # 0 disables the mean-pooled history input

    def validate(self) -> None:
        if self.user_hash_size < 1 or self.item_hash_size < 1:
            raise ValueError("hash table sizes must be >= 1")
        if self.history_length < 0:
            raise ValueError("history_length must be >= 0")


def _stable_hash(token: str, size: int) -> int:
    return zlib.crc32(token.encode("utf-8")) % size


class FeatureEncoder:
    """Maps opaque ids to embedding-table indices."""

    def __init__(self, cfg: EncoderConfig):
        cfg.validate()
        self.cfg = cfg

    def user_index(self, user_id: str) -> int:
        return _stable_hash(str(user_id), self.cfg.user_hash_size)

    def item_index(self, item_id: str) -> int:
        return _stable_hash(str(item_id), self.cfg.item_hash_size)


class EncodedDataset:
    """Array view of a record list, plus a per-user index for list-wise ops."""

    def __init__(
        self,
        records: list[InteractionRecord],
        encoder: FeatureEncoder,
        context: list[InteractionRecord] | None = None,
    ):
        self.records = records
        self.encoder = encoder
        n = len(records)
        self.user_idx = np.fromiter((encoder.user_index(r.user_id) for r in records), np.int64, n)
        self.item_idx = np.fromiter((encoder.item_index(r.item_id) for r in records), np.int64, n)
        self.timestamp = np.array([r.timestamp for r in records], dtype=np.float64)
        self.duration = np.array([r.duration for r in records], dtype=np.float64)
        self.watch_time = np.array([r.watch_time for r in records], dtype=np.float64)
        n_explicit = len(records[0].explicit) if records else 0
        self.explicit = np.array([r.explicit for r in records], dtype=np.float64).reshape(n, n_explicit)
        n_feats = len(records[0].features) if records else 0
        self.numeric = np.array([r.features for r in records], dtype=np.float64).reshape(n, n_feats)
        self.history = self._build_history(records, encoder, context)
        # filled by attach_scales once the feedback scalers are fitted
        self.scaled_duration: np.ndarray | None = None
        self.scaled_watch: np.ndarray | None = None

        by_user: dict[str, list[int]] = {}
        for i, r in enumerate(records):
            by_user.setdefault(r.user_id, []).append(i)
        order = np.argsort(self.timestamp, kind="stable")
        rank = np.empty(n, dtype=np.int64)
        rank[order] = np.arange(n)
        self.user_groups = {
            u: np.array(sorted(ix, key=lambda i: rank[i]), dtype=np.int64) for u, ix in by_user.items()
        }

    def __len__(self) -> int:
        return len(self.records)

    def _build_history(self, records, encoder, context) -> np.ndarray | None:
        h = self.encoder.cfg.history_length
        if h == 0:
            return None
        tail: dict[str, list[int]] = {}
        if context:
            for r in sorted(context, key=lambda r: r.timestamp):
                tail.setdefault(r.user_id, []).append(encoder.item_index(r.item_id))
        hist = np.full((len(records), h), -1, dtype=np.int64)
        for pos in np.argsort(self.timestamp, kind="stable"):
            r = records[pos]
            prior = tail.setdefault(r.user_id, [])
            recent = prior[-h:]
            if recent:
                hist[pos, : len(recent)] = recent
            prior.append(encoder.item_index(r.item_id))
        return hist

    def attach_scales(self, scaled_duration: np.ndarray, scaled_watch: np.ndarray) -> None:
        self.scaled_duration = np.asarray(scaled_duration, dtype=np.float64)
        self.scaled_watch = np.asarray(scaled_watch, dtype=np.float64)

    def recommender_inputs(self, idx: np.ndarray) -> dict:
        """Model inputs for a batch of row indices: ids, history, numeric block."""
        if self.scaled_duration is None:
            raise RuntimeError("attach_scales must be called before building model inputs")
        numeric = np.column_stack([self.scaled_duration[idx], self.numeric[idx]])
        return {
            "user": self.user_idx[idx],
            "item": self.item_idx[idx],
            "history": None if self.history is None else self.history[idx],
            "numeric": numeric,
        }

    def labeling_inputs(
        self,
        idx: np.ndarray,
        use_watch: bool = True,
        use_duration: bool = True,
        use_explicit: bool = True,
    ) -> dict:
        """Labeling-model inputs: ids plus [duration, feats, watch, explicit] numerics.

        The use_* switches drop feedback fields from the input (ablations)."""
        if self.scaled_watch is None:
            raise RuntimeError("attach_scales must be called before building model inputs")
        cols = []
        if use_duration:
            cols.append(self.scaled_duration[idx])
        if self.numeric.shape[1]:
            cols.append(self.numeric[idx])
        if use_watch:
            cols.append(self.scaled_watch[idx])
        if use_explicit:
            cols.append(self.explicit[idx])
        numeric = np.column_stack(cols) if cols else np.zeros((len(idx), 0))
        return {
            "user": self.user_idx[idx],
            "item": self.item_idx[idx],
            "history": None,
            "numeric": numeric,
        }
