"""Alternating training loop: labeling-model meta-updates and recommender updates.

Each step makes a tentative recommender update on a training batch, scores a
sample of validation users' lists with the soft top-k objective, and pushes
the objective's gradient back through that single SGD step into the labeling
model (gradient ascent); the recommender then takes a real step on labels
from the refreshed labeler.

For the MSE inner loss the label-to-update jacobian is closed-form:
d theta' / d y_c(x) = (2 * eta1 / B) * grad_theta f(x), so the labeling
gradient is a per-sample-weighted backward pass with weights
(2 * eta1 / B) * <grad_theta f(x), grad_theta' M>, the first factor taken at
the pre-update parameters. The L2 term and the balancing weights contribute
nothing to this jacobian.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .features import EncodedDataset
from .models import EmbedMLP, LabelingModel, RecommenderModel
from .objectives import ObjectiveBreakdown, ObjectiveConfig, UserList, hard_objective, objective_pred_grads
from .params import ParamVector, sgd_step

__all__ = ["TrainConfig", "TrainState", "TrainResult", "LabelCraftTrainer", "inner_loss_grad"]


@dataclass(frozen=True)
class TrainConfig:
    eta1: float = 0.05  # recommender learning rate
    eta2: float = 0.5  # labeling learning rate
    weight_decay: float = 0.0  # L2 coefficient on theta
    # L2 pull on phi applied inside the labeling update; keeps the sigmoid
    # head out of its saturated rails where the meta gradient dies
    phi_weight_decay: float = 0.0
    batch_size: int = 256
    meta_users_per_step: int = 64
    max_epochs: int = 1000
    patience: int = 5
    seed: int = 0
    fresh_theta_batch: bool = False  # draw a separate batch for the theta update

    def validate(self) -> None:
        if self.eta1 <= 0 or self.eta2 < 0:
            raise ValueError("eta1 must be positive and eta2 nonnegative")
        if self.weight_decay < 0 or self.phi_weight_decay < 0:
            raise ValueError("weight decay coefficients must be nonnegative")
        if self.batch_size < 1 or self.meta_users_per_step < 1:
            raise ValueError("batch_size and meta_users_per_step must be >= 1")
        if self.max_epochs < 1 or self.patience < 0:
            raise ValueError("max_epochs must be >= 1 and patience >= 0")


@dataclass
class TrainState:
    theta: ParamVector
    phi: ParamVector
    epoch: int = 0
    step: int = 0
    best_val_objective: float = -np.inf
    epochs_since_best: int = 0


@dataclass
class TrainResult:
    theta: ParamVector
    phi: ParamVector
    history: list[dict] = field(default_factory=list)
    epoch_history: list[dict] = field(default_factory=list)
    best_epoch: int = 0
    best_objective: float = -np.inf
    stopped_epoch: int = 0


def inner_loss_grad(
    model: EmbedMLP, inputs: dict, labels: np.ndarray, weight_decay: float
) -> tuple[float, ParamVector, object, np.ndarray]:
    """MSE fit of the labels plus L2: loss, exact grad, forward cache, predictions."""
    labels = np.asarray(labels, dtype=np.float64)
    if labels.size == 0:
        raise ValueError("batch must be nonempty")
    preds, cache = model.forward_batch(inputs)
    residual = preds - labels
    loss = float(residual @ residual) / labels.size
    grad = model.backward_batch(cache, 2.0 * residual / labels.size)
    if weight_decay:
        loss += weight_decay * float(model.params.values @ model.params.values)
        grad = ParamVector(grad.values + 2.0 * weight_decay * model.params.values, grad.layout)
    return loss, grad, cache, preds


class LabelCraftTrainer:
    """Bi-level trainer over encoded train/validation splits."""

    def __init__(
        self,
        recommender: RecommenderModel,
        labeling: LabelingModel,
        train_set: EncodedDataset,
        val_set: EncodedDataset,
        cfg: TrainConfig,
        objective_cfg: ObjectiveConfig,
        labeling_flags: tuple[bool, bool, bool] = (True, True, True),
    ):
        cfg.validate()
        objective_cfg.validate()
        if len(train_set) == 0 or len(val_set) == 0:
            raise ValueError("train and validation sets must be nonempty")
        self.recommender = recommender
        self.labeling = labeling
        self.train_set = train_set
        self.val_set = val_set
        self.cfg = cfg
        self.objective_cfg = objective_cfg
        self.use_watch, self.use_duration, self.use_explicit = labeling_flags
        self.val_users = sorted(val_set.user_groups)
        self.val_positive = (val_set.explicit.sum(axis=1) > 0).astype(np.float64)

    # -- building blocks ---------------------------------------------------

    def _labels(self, phi: ParamVector, idx: np.ndarray) -> tuple[np.ndarray, object]:
        inputs = self.train_set.labeling_inputs(
            idx, use_watch=self.use_watch, use_duration=self.use_duration, use_explicit=self.use_explicit
        )
        return self.labeling.with_params(phi).forward_batch(inputs)

    def _inner(self, theta: ParamVector, idx: np.ndarray, labels: np.ndarray):
        model = self.recommender.with_params(theta)
        inputs = self.train_set.recommender_inputs(idx)
        loss, grad, cache, preds = inner_loss_grad(model, inputs, labels, self.cfg.weight_decay)
        return model, loss, grad, cache, preds

    def _meta_lists(
        self, theta: ParamVector, users: list
    ) -> tuple[dict[str, UserList], np.ndarray, object, dict[str, slice]]:
        """Forward all chosen users' validation records in one batch."""
        idx = np.concatenate([self.val_set.user_groups[u] for u in users])
        model = self.recommender.with_params(theta)
        scores, cache = model.forward_batch(self.val_set.recommender_inputs(idx))
        lists, slices = {}, {}
        pos = 0
        for u in users:
            g_idx = self.val_set.user_groups[u]
            sl = slice(pos, pos + g_idx.size)
            lists[u] = UserList(
                scores=scores[sl],
                scaled_watch=self.val_set.scaled_watch[g_idx],
                positive=self.val_positive[g_idx],
                scaled_duration=self.val_set.scaled_duration[g_idx],
            )
            slices[u] = sl
            pos += g_idx.size
        return lists, idx, cache, slices

    def meta_step(
        self, state: TrainState, batch_idx: np.ndarray, meta_users: list
    ) -> tuple[ParamVector, ObjectiveBreakdown, float]:
        """One labeling-model update; theta is read but never mutated."""
        cfg = self.cfg
        labels, lab_cache = self._labels(state.phi, batch_idx)
        _, loss, grad_theta, rec_cache, _ = self._inner(state.theta, batch_idx, labels)
        theta_prime = sgd_step(state.theta, grad_theta, cfg.eta1)

        lists, _, meta_cache, slices = self._meta_lists(theta_prime, meta_users)
        breakdown, grads = objective_pred_grads(lists, self.objective_cfg)

        upstream = np.zeros(sum(self.val_set.user_groups[u].size for u in meta_users))
        for u in meta_users:
            upstream[slices[u]] = grads[u]
        model_prime = self.recommender.with_params(theta_prime)
        grad_m_theta = model_prime.backward_batch(meta_cache, upstream)

        rec_model = self.recommender.with_params(state.theta)
        dots = rec_model.grad_dots(rec_cache, grad_m_theta)
        label_weights = (2.0 * cfg.eta1 / batch_idx.size) * dots
        lab_model = self.labeling.with_params(state.phi)
        grad_phi = lab_model.backward_batch(lab_cache, label_weights)

        ascent = grad_phi.values - 2.0 * cfg.phi_weight_decay * state.phi.values
        phi_new = ParamVector(state.phi.values + cfg.eta2 * ascent, state.phi.layout)
        return phi_new, breakdown, loss

    def theta_step(self, state: TrainState, batch_idx: np.ndarray) -> tuple[ParamVector, float]:
        """One recommender update on labels from the current labeling model."""
        labels, _ = self._labels(state.phi, batch_idx)
        _, loss, grad_theta, _, _ = self._inner(state.theta, batch_idx, labels)
        return sgd_step(state.theta, grad_theta, self.cfg.eta1), loss

    def validation_objective(self, theta: ParamVector) -> ObjectiveBreakdown:
        """Merged objective on all validation users with deployment-style hard top-k."""
        lists, _, _, _ = self._meta_lists(theta, self.val_users)
        return hard_objective(lists, self.objective_cfg)

    # -- the loop ------------------------------------------------------------

    def run(self) -> TrainResult:
        cfg = self.cfg
        rng = np.random.default_rng(cfg.seed)
        state = TrainState(theta=self.recommender.params.copy(), phi=self.labeling.params.copy())
        n = len(self.train_set)
        result = TrainResult(theta=state.theta, phi=state.phi)

        best_theta, best_phi = state.theta.copy(), state.phi.copy()
        for epoch in range(cfg.max_epochs):
            state.epoch = epoch
            perm = rng.permutation(n)
            theta_perm = rng.permutation(n) if cfg.fresh_theta_batch else perm
            for start in range(0, n, cfg.batch_size):
                batch = perm[start : start + cfg.batch_size]
                meta_users = self._sample_meta_users(rng)
                state.phi, breakdown, meta_loss = self.meta_step(state, batch, meta_users)
                theta_batch = theta_perm[start : start + cfg.batch_size]
                state.theta, loss = self.theta_step(state, theta_batch)
                if not np.isfinite(loss):
                    raise RuntimeError(
                        f"non-finite training loss at epoch {epoch} step {state.step}; "
                        "reduce eta1/eta2 or weight_decay"
                    )
                result.history.append(
                    {"step": state.step, "epoch": epoch, "loss": loss, **breakdown.as_dict()}
                )
                state.step += 1

            val = self.validation_objective(state.theta)
            result.epoch_history.append({"epoch": epoch, "val": val.as_dict()})
            if val.total > state.best_val_objective:
                state.best_val_objective = val.total
                state.epochs_since_best = 0
                best_theta, best_phi = state.theta.copy(), state.phi.copy()
                result.best_epoch = epoch
                result.best_objective = val.total
            else:
                state.epochs_since_best += 1
                if state.epochs_since_best > cfg.patience:
                    break
        result.stopped_epoch = state.epoch
        result.theta, result.phi = best_theta, best_phi
        return result

    def _sample_meta_users(self, rng: np.random.Generator) -> list:
        m = min(self.cfg.meta_users_per_step, len(self.val_users))
        picks = rng.choice(len(self.val_users), size=m, replace=False)
        return [self.val_users[i] for i in np.sort(picks)]
