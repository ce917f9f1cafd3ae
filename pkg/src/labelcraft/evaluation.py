"""Hard-ranking evaluation: NWTG@k, NEG@k, DS@k, and duration histograms.

Each user's candidate set is their own test interactions. Predicted scores
rank the candidates (ties broken by lower item id); gains use the DCG
discount 1/log2(rank+1) and are normalized by the ideal ordering of the same
candidates. DS@k is the population standard deviation of the raw top-k
durations in seconds.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass

import numpy as np

from .features import EncodedDataset
from .models import RecommenderModel

__all__ = [
    "MetricsReport",
    "nwtg_at_k",
    "neg_at_k",
    "ds_at_k",
    "rank_candidates",
    "evaluate",
    "duration_histogram",
    "histogram_tv",
    "write_metrics_json",
    "write_histogram_csv",
    "write_comparison_csv",
]


@dataclass
class MetricsReport:
    method: str
    k: int
    nwtg: float
    neg: float
    ds: float
    users_total: int
    users_nwtg: int  # users with a nonzero ideal watch-time gain
    users_neg: int  # users with at least one positive explicit flag
    users_short: int  # users evaluated with fewer than k candidates
    histogram_edges: list[float]
    histogram_counts: list[int]
    notes: str = "DS uses population std of raw durations (seconds)"

    def as_dict(self) -> dict:
        return {
            "method": self.method,
            "k": self.k,
            f"nwtg@{self.k}": self.nwtg,
            f"neg@{self.k}": self.neg,
            f"ds@{self.k}": self.ds,
            "users_total": self.users_total,
            "users_nwtg": self.users_nwtg,
            "users_neg": self.users_neg,
            "users_short": self.users_short,
            "histogram_edges": self.histogram_edges,
            "histogram_counts": self.histogram_counts,
            "notes": self.notes,
        }


def _dcg(values: np.ndarray) -> float:
    ranks = np.arange(1, values.size + 1)
    return float((values / np.log2(ranks + 1)).sum())


def nwtg_at_k(ranked_watch: np.ndarray, all_watch: np.ndarray, k: int) -> float | None:
    """Normalized watch-time gain; None when the ideal gain is zero (user skipped)."""
    ranked_watch = np.asarray(ranked_watch, dtype=np.float64)
    all_watch = np.asarray(all_watch, dtype=np.float64)
    if k > ranked_watch.size:
        raise ValueError("k exceeds the ranked list length")
    ideal = _dcg(np.sort(all_watch)[::-1][:k])
    if ideal <= 0:
        return None
    return _dcg(ranked_watch[:k]) / ideal


def neg_at_k(ranked_positive: np.ndarray, all_positive: np.ndarray, k: int) -> float | None:
    """Normalized explicit-feedback gain; None when the user has no positives."""
    return nwtg_at_k(ranked_positive, all_positive, k)


def ds_at_k(ranked_durations: np.ndarray, k: int) -> float:
    """Population standard deviation of the top-k durations."""
    ranked_durations = np.asarray(ranked_durations, dtype=np.float64)
    if k > ranked_durations.size:
        raise ValueError("k exceeds the ranked list length")
    return float(ranked_durations[:k].std())


def rank_candidates(scores: np.ndarray, item_ids: list[str]) -> np.ndarray:
    """Indices sorted by descending score; ties broken by lower item id."""
    order = sorted(range(len(item_ids)), key=lambda i: (-scores[i], item_ids[i]))
    return np.array(order, dtype=np.int64)


def _user_rankings(model: RecommenderModel, dataset: EncodedDataset):
    scores, _ = model.forward_batch(dataset.recommender_inputs(np.arange(len(dataset))))
    for user in sorted(dataset.user_groups):
        idx = dataset.user_groups[user]
        item_ids = [dataset.records[i].item_id for i in idx]
        order = rank_candidates(scores[idx], item_ids)
        yield user, idx[order], idx


def evaluate(
    model: RecommenderModel,
    dataset: EncodedDataset,
    k: int,
    method: str = "",
    histogram_bins: int = 10,
) -> MetricsReport:
    """Score every user's test candidates and average the three metrics.

    Users with fewer than k candidates are evaluated at k' = min(k, n)."""
    if len(dataset) == 0:
        raise ValueError("cannot evaluate on an empty dataset")
    edges = _candidate_bin_edges(dataset.duration, histogram_bins)
    pooled: list[np.ndarray] = []
    nwtg_vals, neg_vals, ds_vals = [], [], []
    users_total = users_short = 0
    positive = dataset.explicit.sum(axis=1) > 0
    for _, ranked_idx, all_idx in _user_rankings(model, dataset):
        k_eff = min(k, ranked_idx.size)
        users_total += 1
        users_short += k_eff < k
        nw = nwtg_at_k(dataset.watch_time[ranked_idx], dataset.watch_time[all_idx], k_eff)
        if nw is not None:
            nwtg_vals.append(nw)
        ne = neg_at_k(
            positive[ranked_idx].astype(np.float64), positive[all_idx].astype(np.float64), k_eff
        )
        if ne is not None:
            neg_vals.append(ne)
        ds_vals.append(ds_at_k(dataset.duration[ranked_idx], k_eff))
        pooled.append(dataset.duration[ranked_idx[:k_eff]])
    counts, _ = np.histogram(np.concatenate(pooled), bins=edges)
    return MetricsReport(
        method=method,
        k=k,
        nwtg=float(np.mean(nwtg_vals)) if nwtg_vals else 0.0,
        neg=float(np.mean(neg_vals)) if neg_vals else 0.0,
        ds=float(np.mean(ds_vals)),
        users_total=users_total,
        users_nwtg=len(nwtg_vals),
        users_neg=len(neg_vals),
        users_short=users_short,
        histogram_edges=[float(e) for e in edges],
        histogram_counts=[int(c) for c in counts],
    )


def duration_histogram(
    model: RecommenderModel, dataset: EncodedDataset, k: int, edges: np.ndarray
) -> np.ndarray:
    """Pooled duration counts of every user's hard top-k list."""
    pooled = []
    for _, ranked_idx, _ in _user_rankings(model, dataset):
        pooled.append(dataset.duration[ranked_idx[: min(k, ranked_idx.size)]])
    counts, _ = np.histogram(np.concatenate(pooled), bins=edges)
    return counts


def _candidate_bin_edges(durations: np.ndarray, bins: int) -> np.ndarray:
    lo, hi = float(durations.min()), float(durations.max())
    if hi <= lo:
        hi = lo + 1.0
    return np.linspace(lo, hi, bins + 1)


def histogram_tv(counts_a: np.ndarray, counts_b: np.ndarray) -> float:
    """Total-variation distance between two histograms (as distributions)."""
    a = np.asarray(counts_a, dtype=np.float64)
    b = np.asarray(counts_b, dtype=np.float64)
    if a.sum() <= 0 or b.sum() <= 0:
        raise ValueError("histograms must have positive mass")
    return 0.5 * float(np.abs(a / a.sum() - b / b.sum()).sum())


# -- report emission ----------------------------------------------------------


def write_metrics_json(path, report: MetricsReport) -> None:
    with open(path, "w") as fh:
        json.dump(report.as_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")


def write_histogram_csv(path, edges, counts) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["bin_edge", "count"])
        for edge, count in zip(edges[:-1], counts):
            writer.writerow([f"{edge:.6f}", int(count)])


def write_comparison_csv(path, reports: list[MetricsReport], reference: str) -> None:
    """One row per method with relative-improvement columns of the reference over it."""
    ref = next((r for r in reports if r.method == reference), None)
    if ref is None:
        raise ValueError(f"reference method {reference!r} not among the reports")
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        k = ref.k
        writer.writerow(
            [
                "method",
                f"nwtg@{k}", "ri_nwtg",
                f"ds@{k}", "ri_ds",
                f"neg@{k}", "ri_neg",
            ]
        )
        for r in reports:
            writer.writerow(
                [
                    r.method,
                    f"{r.nwtg:.6f}", _ri(ref.nwtg, r.nwtg, r.method == reference),
                    f"{r.ds:.6f}", _ri(ref.ds, r.ds, r.method == reference),
                    f"{r.neg:.6f}", _ri(ref.neg, r.neg, r.method == reference),
                ]
            )


def _ri(ref_value: float, other: float, is_reference: bool) -> str:
    if is_reference:
        return "-"
    if other == 0:
        return ""
    return f"{(ref_value - other) / abs(other) * 100:.1f}%"
