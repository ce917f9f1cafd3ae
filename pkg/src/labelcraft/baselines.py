"""Rule-based label generators and the supervised training path they share.

Every rule produces labels in [0, 1]; binary rules (EF, PC) train with
cross-entropy and the continuous ones with MSE. Rule statistics (scalers,
duration buckets) are fitted on the training split only.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .data import InteractionRecord
from .features import EncodedDataset
from .models import RecommenderModel
from .params import ParamVector, sgd_step
from .objectives import ScaleParams, fit_scale, scale_values
from .trainer import TrainConfig, TrainResult

__all__ = [
    "RULE_KINDS",
    "DurationBuckets",
    "LabelRule",
    "fit_duration_buckets",
    "label_wt",
    "label_ef",
    "label_pc",
    "label_pcr",
    "label_d2q",
    "label_dvr",
    "make_rule",
    "train_with_rule",
    "SupervisedTrainer",
]

RULE_KINDS = ("wt", "ef", "pc", "pcr", "d2q", "dvr")
_BINARY_KINDS = frozenset({"ef", "pc"})


@dataclass(frozen=True)
class DurationBuckets:
    """Duration-quantile buckets with per-bucket watch-time statistics."""

    boundaries: tuple[float, ...]  # upper edges of all but the last bucket
    means: tuple[float, ...]
    stds: tuple[float, ...]
    sorted_watch: tuple[tuple[float, ...], ...]
    fitted_on: str = "train"

    @property
    def n_buckets(self) -> int:
        return len(self.means)

    def bucket_of(self, duration: float) -> int:
        lo, hi = 0, len(self.boundaries)
        while lo < hi:  # first boundary >= duration
            mid = (lo + hi) // 2
            if self.boundaries[mid] < duration:
                lo = mid + 1
            else:
                hi = mid
        return lo


def fit_duration_buckets(records: list[InteractionRecord], n_buckets: int) -> DurationBuckets:
    """Quantile-edge buckets over training durations (nearest-rank quantiles)."""
    if n_buckets < 1:
        raise ValueError("n_buckets must be >= 1")
    if not records:
        raise ValueError("cannot fit buckets on an empty record set")
    durations = np.sort(np.array([r.duration for r in records]))
    edges = []
    for i in range(1, n_buckets):
        rank = max(1, math.ceil(i / n_buckets * durations.size))
        edges.append(float(durations[rank - 1]))
    boundaries = tuple(sorted(set(edges)))

    n_eff = len(boundaries) + 1
    per_bucket: list[list[float]] = [[] for _ in range(n_eff)]
    probe = DurationBuckets(boundaries, (), (), ())
    for r in records:
        per_bucket[probe.bucket_of(r.duration)].append(r.watch_time)
    means, stds, sorted_watch = [], [], []
    for watch in per_bucket:
        arr = np.array(watch) if watch else np.zeros(0)
        means.append(float(arr.mean()) if arr.size else 0.0)
        stds.append(float(arr.std()) if arr.size else 0.0)
        sorted_watch.append(tuple(np.sort(arr).tolist()))
    return DurationBuckets(boundaries, tuple(means), tuple(stds), tuple(sorted_watch))


def label_wt(record: InteractionRecord, scale: ScaleParams, raw: bool = False) -> float:
    """Watch time as the label, normalized into [0, 1] unless raw is requested."""
    if raw:
        return record.watch_time
    return float(scale_values(scale, np.array([record.watch_time]))[0])


def label_ef(record: InteractionRecord) -> float:
    """1 iff any explicit flag is set."""
    return 1.0 if record.has_positive_feedback else 0.0


def label_pc(record: InteractionRecord) -> float:
    """Play completion: 1 iff the video was watched to its full duration."""
    return 1.0 if record.watch_time >= record.duration else 0.0


def label_pcr(record: InteractionRecord) -> float:
    """Play completion rate, clamped at 1 for rewatches."""
    return min(record.watch_time / record.duration, 1.0)


def label_d2q(record: InteractionRecord, buckets: DurationBuckets) -> float:
    """Watch-time quantile within the record's duration bucket."""
    watch = buckets.sorted_watch[buckets.bucket_of(record.duration)]
    if not watch:
        return 0.5
    lo, hi = 0, len(watch)
    while lo < hi:  # count of training watch times <= y_w
        mid = (lo + hi) // 2
        if watch[mid] <= record.watch_time:
            lo = mid + 1
        else:
            hi = mid
    return lo / len(watch)


def label_dvr(record: InteractionRecord, buckets: DurationBuckets) -> float:
    """Watch-time gain: z-score against similar-duration videos, squashed to (0, 1)."""
    b = buckets.bucket_of(record.duration)
    std = buckets.stds[b]
    if std <= 0:
        return 0.5
    z = (record.watch_time - buckets.means[b]) / std
    return 1.0 / (1.0 + math.exp(-z))


@dataclass
class LabelRule:
    """A fitted labeling rule: kind, fitted parameters, and loss type."""

    kind: str
    watch_scale: ScaleParams | None = None
    buckets: DurationBuckets | None = None
    wt_raw: bool = False

    @property
    def loss_kind(self) -> str:
        return "bce" if self.kind in _BINARY_KINDS else "mse"

    def label(self, record: InteractionRecord) -> float:
        if self.kind == "wt":
            return label_wt(record, self.watch_scale, raw=self.wt_raw)
        if self.kind == "ef":
            return label_ef(record)
        if self.kind == "pc":
            return label_pc(record)
        if self.kind == "pcr":
            return label_pcr(record)
        if self.kind == "d2q":
            return label_d2q(record, self.buckets)
        if self.kind == "dvr":
            return label_dvr(record, self.buckets)
        raise ValueError(f"unknown rule kind {self.kind!r}")

    def labels(self, records: list[InteractionRecord]) -> np.ndarray:
        return np.array([self.label(r) for r in records], dtype=np.float64)

    def params_dict(self) -> dict:
        out: dict = {"kind": self.kind, "loss": self.loss_kind}
        if self.watch_scale is not None:
            s = self.watch_scale
            out["watch_scale"] = {
                "v_max": s.v_max, "v_beta": s.v_beta, "beta": s.beta,
                "beta_prime": s.beta_prime, "mode": s.mode, "fitted_on": s.fitted_on,
            }
        if self.buckets is not None:
            out["buckets"] = {
                "boundaries": list(self.buckets.boundaries),
                "means": list(self.buckets.means),
                "stds": list(self.buckets.stds),
                "fitted_on": self.buckets.fitted_on,
            }
        out["wt_raw"] = self.wt_raw
        return out


def make_rule(
    kind: str,
    train_records: list[InteractionRecord],
    beta: float = 80.0,
    n_buckets: int = 10,
    wt_raw: bool = False,
    scale_mode: str = "piecewise",
) -> LabelRule:
    """Fit a rule's parameters on the training split."""
    kind = kind.lower()
    if kind not in RULE_KINDS:
        raise ValueError(f"unknown rule {kind!r}; expected one of {RULE_KINDS}")
    rule = LabelRule(kind=kind, wt_raw=wt_raw)
    if kind == "wt":
        watch = np.array([r.watch_time for r in train_records])
        rule.watch_scale = fit_scale(watch, beta=beta, fitted_on="watch_time:train", mode=scale_mode)
    if kind in ("d2q", "dvr"):
        rule.buckets = fit_duration_buckets(train_records, n_buckets)
    return rule


class SupervisedTrainer:
    """Plain label-fitting loop shared by all rule baselines.

    Early stopping tracks the validation loss under the rule's own labels,
    with the same patience scheme as the bi-level trainer.
    """

    def __init__(
        self,
        model: RecommenderModel,
        train_set: EncodedDataset,
        val_set: EncodedDataset,
        train_labels: np.ndarray,
        val_labels: np.ndarray,
        loss_kind: str,
        cfg: TrainConfig,
    ):
        cfg.validate()
        if loss_kind not in ("mse", "bce"):
            raise ValueError(f"unknown loss kind {loss_kind!r}")
        if len(train_set) != train_labels.size or len(val_set) != val_labels.size:
            raise ValueError("label arrays must align with their datasets")
        self.model = model
        self.train_set = train_set
        self.val_set = val_set
        self.train_labels = np.asarray(train_labels, dtype=np.float64)
        self.val_labels = np.asarray(val_labels, dtype=np.float64)
        self.loss_kind = loss_kind
        self.cfg = cfg
        if np.all(self.train_labels == self.train_labels[0]):
            warnings.warn(
                f"constant training labels (value {self.train_labels[0]:.3g}); "
                "the fitted ranking will be degenerate",
                stacklevel=2,
            )

    def _loss_grad(self, theta: ParamVector, idx: np.ndarray):
        model = self.model.with_params(theta)
        preds, cache = model.forward_batch(self.train_set.recommender_inputs(idx))
        y = self.train_labels[idx]
        if self.loss_kind == "mse":
            residual = preds - y
            loss = float(residual @ residual) / idx.size
            weights = 2.0 * residual / idx.size
        else:
            p = 1.0 / (1.0 + np.exp(-preds))
            loss = float(-(y * _safe_log(p) + (1 - y) * _safe_log(1 - p)).mean())
            weights = (p - y) / idx.size
        grad = model.backward_batch(cache, weights)
        if self.cfg.weight_decay:
            loss += self.cfg.weight_decay * float(theta.values @ theta.values)
            grad = ParamVector(grad.values + 2.0 * self.cfg.weight_decay * theta.values, grad.layout)
        return loss, grad

    def _val_loss(self, theta: ParamVector) -> float:
        model = self.model.with_params(theta)
        preds, _ = model.forward_batch(self.val_set.recommender_inputs(np.arange(len(self.val_set))))
        y = self.val_labels
        if self.loss_kind == "mse":
            return float(((preds - y) ** 2).mean())
        p = 1.0 / (1.0 + np.exp(-preds))
        return float(-(y * _safe_log(p) + (1 - y) * _safe_log(1 - p)).mean())

    def run(self) -> TrainResult:
        cfg = self.cfg
        rng = np.random.default_rng(cfg.seed)
        theta = self.model.params.copy()
        result = TrainResult(theta=theta, phi=theta)
        best = np.inf
        best_theta = theta.copy()
        since_best = 0
        step = 0
        n = len(self.train_set)
        stopped = 0
        for epoch in range(cfg.max_epochs):
            perm = rng.permutation(n)
            for start in range(0, n, cfg.batch_size):
                idx = perm[start : start + cfg.batch_size]
                loss, grad = self._loss_grad(theta, idx)
                if not np.isfinite(loss):
                    raise RuntimeError(f"non-finite loss at epoch {epoch} step {step}")
                theta = sgd_step(theta, grad, cfg.eta1)
                result.history.append({"step": step, "epoch": epoch, "loss": loss})
                step += 1
            val = self._val_loss(theta)
            result.epoch_history.append({"epoch": epoch, "val_loss": val})
            stopped = epoch
            if val < best:
                best = val
                best_theta = theta.copy()
                result.best_epoch = epoch
                result.best_objective = -val
                since_best = 0
            else:
                since_best += 1
                if since_best > cfg.patience:
                    break
        result.stopped_epoch = stopped
        result.theta = best_theta
        result.phi = best_theta
        return result


def train_with_rule(
    rule: LabelRule,
    model: RecommenderModel,
    train_set: EncodedDataset,
    val_set: EncodedDataset,
    cfg: TrainConfig,
) -> TrainResult:
    """Fit a recommender to the rule's labels; no meta step involved."""
    trainer = SupervisedTrainer(
        model,
        train_set,
        val_set,
        rule.labels(train_set.records),
        rule.labels(val_set.records),
        rule.loss_kind,
        cfg,
    )
    return trainer.run()


def _safe_log(x: np.ndarray) -> np.ndarray:
    return np.log(np.clip(x, 1e-12, None))
