"""Platform objectives over soft top-k lists, with feedback scaling and balancing.

Three per-user quantities are averaged over users: soft-list mean of scaled
watch time (m1), soft-list rate of positive explicit feedback (m2), and
soft-list duration diversity (m3, a weighted standard deviation of scaled
durations). A softmax over the negated sub-objectives balances them; the
balancing weights are excluded from all gradients.

m3 ships in two variants: the default +1/2 exponent (std, doubled so its
range matches [0,1]) treats diversity as something to maximize; the -1/2
exponent (reciprocal std, no doubling) is available as a config switch.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .softtopk import (
    SoftTopKConfig,
    SoftTopKResult,
    hard_topk,
    soft_topk,
    soft_topk_many,
    soft_topk_vjp,
    soft_topk_vjp_many,
)

__all__ = [
    "ScaleParams",
    "fit_scale",
    "scale_value",
    "scale_values",
    "ObjectiveBreakdown",
    "ObjectiveConfig",
    "UserList",
    "balance",
    "sub_objectives",
    "objective_pred_grads",
    "soft_objective",
    "hard_objective",
    "lists_from_groups",
]

_VAR_FLOOR = 1e-12


@dataclass(frozen=True)
class ScaleParams:
    """Fitted parameters of the piecewise feedback normalization."""

    v_max: float
    v_beta: float
    beta: float
    beta_prime: float
    fitted_on: str = ""
    mode: str = "piecewise"  # "minmax" disables the piecewise knee (ablation)


def fit_scale(
    values: np.ndarray, beta: float = 80.0, fitted_on: str = "", mode: str = "piecewise"
) -> ScaleParams:
    """Fit the normalization on nonnegative values; beta is a percentile in (0, 100)."""
    values = np.asarray(values, dtype=np.float64)
    if values.size == 0:
        raise ValueError("cannot fit a scaler on empty values")
    if np.any(values < 0):
        raise ValueError("scaled quantities must be nonnegative")
    if not 0.0 < beta < 100.0:
        raise ValueError("beta must lie in (0, 100)")
    if mode not in ("piecewise", "minmax"):
        raise ValueError(f"unknown scale mode {mode!r}")
    v_max = float(values.max())
    ordered = np.sort(values)
    rank = max(1, math.ceil(beta / 100.0 * values.size))  # nearest-rank percentile
    v_beta = float(ordered[rank - 1])
    ratio = v_beta / v_max if v_max > 0 else 1.0
    beta_prime = max(ratio, 1.0 - beta / 100.0)
    return ScaleParams(v_max, v_beta, beta, beta_prime, fitted_on, mode)


def scale_value(p: ScaleParams, v: float) -> float:
    return float(scale_values(p, np.array([v]))[0])


def scale_values(p: ScaleParams, v: np.ndarray) -> np.ndarray:
    """Map nonnegative values into [0, 1]; values above the fitted max are clamped."""
    v = np.minimum(np.asarray(v, dtype=np.float64), p.v_max)
    if p.mode == "minmax":
        return v / p.v_max if p.v_max > 0 else np.zeros_like(v)
    head = (v / p.v_beta) * p.beta_prime if p.v_beta > 0 else np.zeros_like(v)
    if p.v_max > p.v_beta:
        tail = 1.0 - (1.0 - p.beta_prime) * (p.v_max - v) / (p.v_max - p.v_beta)
    else:
        tail = np.ones_like(v)
    return np.where(v <= p.v_beta, head, tail)


@dataclass(frozen=True)
class ObjectiveBreakdown:
    """Sub-objective values, balancing weights, and the merged total."""

    m1: float
    m2: float
    m3: float
    weights: tuple[float, float, float]
    total: float
    tau: float

    def as_dict(self) -> dict:
        return {
            "m1": self.m1,
            "m2": self.m2,
            "m3": self.m3,
            "weights": list(self.weights),
            "total": self.total,
            "tau": self.tau,
        }


@dataclass(frozen=True)
class ObjectiveConfig:
    k: int = 10
    tau: float = 0.5
    soft: SoftTopKConfig = field(default_factory=SoftTopKConfig)
    m3_exponent: float = 0.5  # +1/2 (std) or -1/2 (reciprocal std)
    use_m1: bool = True
    use_m2: bool = True
    use_m3: bool = True
    dynamic_balance: bool = True

    def validate(self) -> None:
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if self.tau < 0:
            raise ValueError("tau must be nonnegative")
        if self.m3_exponent not in (0.5, -0.5):
            raise ValueError("m3_exponent must be +0.5 or -0.5")
        if not (self.use_m1 or self.use_m2 or self.use_m3):
            raise ValueError("at least one sub-objective must stay active")
        self.soft.validate()


def balance(m: np.ndarray, tau: float, active: np.ndarray | None = None) -> tuple[np.ndarray, float]:
    """Softmax(-tau * m) weights over the active sub-objectives and the merged total.

    Weights are treated as constants by every gradient in this module."""
    m = np.asarray(m, dtype=np.float64)
    if not np.all(np.isfinite(m)):
        raise ValueError("sub-objectives must be finite")
    if tau < 0:
        raise ValueError("tau must be nonnegative")
    if active is None:
        active = np.ones(m.shape[0], dtype=bool)
    logits = -tau * m[active]
    logits = logits - logits.max()
    w_active = np.exp(logits)
    w_active /= w_active.sum()
    weights = np.zeros_like(m)
    weights[active] = w_active
    return weights, float(weights @ m)


@dataclass
class UserList:
    """One user's candidate list: predictions and the per-record quantities."""

    scores: np.ndarray
    scaled_watch: np.ndarray
    positive: np.ndarray  # 1 if any explicit flag set
    scaled_duration: np.ndarray
    anchors: tuple[float, float] | None = None  # frozen-anchor hook for FD oracles


@dataclass
class _ListState:
    result: SoftTopKResult | None  # None when the list is saturated (n <= k)
    alpha: np.ndarray
    k_eff: int


def _solve_lists(lists: dict[str, UserList], cfg: ObjectiveConfig) -> dict[str, _ListState]:
    states: dict[str, _ListState] = {}
    solve_users, score_lists, anchor_lists = [], [], []
    for user, ul in lists.items():
        n = ul.scores.shape[0]
        if n == 0:
            raise ValueError(f"user {user!r} has an empty candidate list")
        if n <= cfg.k:
            states[user] = _ListState(result=None, alpha=np.ones(n), k_eff=n)
        else:
            solve_users.append(user)
            score_lists.append(ul.scores)
            anchor_lists.append(ul.anchors)
    if solve_users:
        solved = soft_topk_many(score_lists, cfg.k, cfg.soft, anchor_lists)
        for user, res in zip(solve_users, solved):
            states[user] = _ListState(result=res, alpha=res.alpha, k_eff=cfg.k)
    return states


def _m3_value(v: float, exponent: float) -> float:
    if exponent > 0:
        return 2.0 * math.sqrt(max(v, 0.0))
    return max(v, _VAR_FLOOR) ** -0.5


def _m3_dv(v: float, exponent: float) -> float:
    """d m3 / d v with the zero-variance subgradient taken as 0."""
    if v <= _VAR_FLOOR:
        return 0.0
    if exponent > 0:
        return 1.0 / math.sqrt(v)
    return -0.5 * v**-1.5


def _list_values(ul: UserList, alpha: np.ndarray, k_eff: int, exponent: float):
    m1 = float(alpha @ ul.scaled_watch) / k_eff
    m2 = float(alpha @ ul.positive) / k_eff
    mean_sd = float(alpha @ ul.scaled_duration) / k_eff
    v = float(alpha @ (ul.scaled_duration - mean_sd) ** 2) / k_eff
    m3 = _m3_value(v, exponent)
    return m1, m2, m3, mean_sd, v


def soft_objective(
    lists: dict[str, UserList], cfg: ObjectiveConfig
) -> tuple[ObjectiveBreakdown, dict[str, np.ndarray]]:
    """Sub-objectives and balanced total over soft lists; also returns per-user alpha."""
    cfg.validate()
    if not lists:
        raise ValueError("no user lists given")
    states = _solve_lists(lists, cfg)
    sums = np.zeros(3)
    for user, ul in lists.items():
        st = states[user]
        m1, m2, m3, _, _ = _list_values(ul, st.alpha, st.k_eff, cfg.m3_exponent)
        sums += (m1, m2, m3)
    m = sums / len(lists)
    breakdown = _merge(m, cfg)
    return breakdown, {u: states[u].alpha for u in lists}


def _merge(m: np.ndarray, cfg: ObjectiveConfig) -> ObjectiveBreakdown:
    active = np.array([cfg.use_m1, cfg.use_m2, cfg.use_m3])
    tau = cfg.tau if cfg.dynamic_balance else 0.0
    weights, total = balance(m, tau, active)
    return ObjectiveBreakdown(
        m1=float(m[0]), m2=float(m[1]), m3=float(m[2]), weights=tuple(weights), total=total, tau=cfg.tau
    )


def objective_pred_grads(
    lists: dict[str, UserList], cfg: ObjectiveConfig
) -> tuple[ObjectiveBreakdown, dict[str, np.ndarray]]:
    """Balanced objective and d total / d prediction for every record.

    The balancing weights are computed from the current sub-objective values
    and held constant; per-record gradients compose the closed-form
    d m_i / d alpha with the soft top-k backward pass."""
    cfg.validate()
    if not lists:
        raise ValueError("no user lists given")
    states = _solve_lists(lists, cfg)
    n_users = len(lists)

    values = {}
    sums = np.zeros(3)
    for user, ul in lists.items():
        st = states[user]
        vals = _list_values(ul, st.alpha, st.k_eff, cfg.m3_exponent)
        values[user] = vals
        sums += vals[:3]
    breakdown = _merge(sums / n_users, cfg)
    w = np.asarray(breakdown.weights)

    grads = {}
    vjp_users, vjp_results, vjp_scores, vjp_upstreams = [], [], [], []
    for user, ul in lists.items():
        st = states[user]
        if st.result is None:  # saturated list: alpha is constant
            grads[user] = np.zeros_like(ul.scores)
            continue
        _, _, _, mean_sd, v = values[user]
        centered = ul.scaled_duration - mean_sd
        s1 = float(st.alpha @ centered) / st.k_eff
        dv_dalpha = (centered**2 - 2.0 * s1 * ul.scaled_duration) / st.k_eff
        dm3_dalpha = _m3_dv(v, cfg.m3_exponent) * dv_dalpha
        upstream = (
            w[0] * ul.scaled_watch / st.k_eff + w[1] * ul.positive / st.k_eff + w[2] * dm3_dalpha
        ) / n_users
        vjp_users.append(user)
        vjp_results.append(st.result)
        vjp_scores.append(ul.scores)
        vjp_upstreams.append(upstream)
    if vjp_users:
        for user, grad in zip(vjp_users, soft_topk_vjp_many(vjp_results, vjp_scores, vjp_upstreams)):
            grads[user] = grad
    return breakdown, grads


def hard_objective(lists: dict[str, UserList], cfg: ObjectiveConfig) -> ObjectiveBreakdown:
    """Same objective with exact top-k selection; used for model selection."""
    cfg.validate()
    if not lists:
        raise ValueError("no user lists given")
    sums = np.zeros(3)
    for ul in lists.values():
        n = ul.scores.shape[0]
        k_eff = min(cfg.k, n)
        alpha = np.ones(n) if k_eff == n else hard_topk(ul.scores, k_eff)
        m1, m2, m3, _, _ = _list_values(ul, alpha, k_eff, cfg.m3_exponent)
        sums += (m1, m2, m3)
    return _merge(sums / len(lists), cfg)


def lists_from_groups(
    predict,
    user_groups: dict,
    watch_scale: ScaleParams,
    duration_scale: ScaleParams,
) -> dict[str, UserList]:
    """Build UserLists from records and a record -> score callable."""
    lists = {}
    for user, records in user_groups.items():
        lists[user] = UserList(
            scores=np.array([predict(r) for r in records], dtype=np.float64),
            scaled_watch=scale_values(watch_scale, np.array([r.watch_time for r in records])),
            positive=np.array([1.0 if r.has_positive_feedback else 0.0 for r in records]),
            scaled_duration=scale_values(duration_scale, np.array([r.duration for r in records])),
        )
    return lists


def sub_objectives(
    predict,
    user_groups: dict,
    k: int,
    soft_cfg: SoftTopKConfig,
    scales: tuple[ScaleParams, ScaleParams],
    m3_exponent: float = 0.5,
) -> tuple[float, float, float, dict[str, np.ndarray]]:
    """Record-level surface: (m1, m2, m3, per-user alpha) from a predictor."""
    watch_scale, duration_scale = scales
    lists = lists_from_groups(predict, user_groups, watch_scale, duration_scale)
    cfg = ObjectiveConfig(k=k, tau=0.0, soft=soft_cfg, m3_exponent=m3_exponent)
    breakdown, alphas = soft_objective(lists, cfg)
    return breakdown.m1, breakdown.m2, breakdown.m3, alphas
