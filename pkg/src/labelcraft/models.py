"""Feed-forward scoring models with an exact analytic gradient contract.

Both the recommender and the labeling model are embedding lookups (user,
item, optional mean-pooled history over the item table) concatenated with a
numeric block, followed by a ReLU MLP. Gradients are hand-derived per layer;
the finite-difference suites in the tests guard every path.

Batched entry points (forward_batch / backward_batch / grad_dots) are what
the trainer uses; *_forward / *_param_grad expose the per-sample contract.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .params import ParamVector, sgd_step

__all__ = [
    "ModelSpec",
    "EmbedMLP",
    "RecommenderModel",
    "LabelingModel",
    "recommender_forward",
    "recommender_param_grad",
    "labeling_forward",
    "labeling_param_grad",
    "sgd_step",
]


@dataclass(frozen=True)
class ModelSpec:
    """Architecture description; input width is derived, not stored."""

    user_vocab: int
    item_vocab: int
    embed_dim: int
    n_numeric: int
    hidden: tuple[int, ...] = (32,)
    use_history: bool = False
    sigmoid_head: bool = False

    @property
    def input_dim(self) -> int:
        blocks = 2 + (1 if self.use_history else 0)
        return blocks * self.embed_dim + self.n_numeric

    def layer_sizes(self) -> list[tuple[int, int]]:
        dims = [self.input_dim, *self.hidden, 1]
        return [(dims[i], dims[i + 1]) for i in range(len(dims) - 1)]


@dataclass
class ForwardCache:
    """Intermediates of one batched forward pass, reused by the backward passes."""

    inputs: dict
    h: list[np.ndarray]  # post-activation per layer, h[0] = input block
    z: list[np.ndarray]  # pre-activation per layer
    out: np.ndarray  # pre-head scalar per sample
    hist_count: np.ndarray | None
    _unit_deltas: list[np.ndarray] | None = field(default=None, repr=False)


class EmbedMLP:
    """Embedding + MLP scorer over a flat ParamVector.

    Instances are immutable value objects: parameter updates go through
    ``with_params`` and forward/gradient calls never mutate state.
    """

    def __init__(self, spec: ModelSpec, params: ParamVector):
        self.spec = spec
        self.params = params

    # -- construction -------------------------------------------------------

    @classmethod
    def initialize(cls, spec: ModelSpec, seed: int) -> "EmbedMLP":
        rng = np.random.default_rng(seed)
        blocks: list[tuple[str, np.ndarray]] = []
        for name, rows, cols in (
            ("user_emb", spec.user_vocab, spec.embed_dim),
            ("item_emb", spec.item_vocab, spec.embed_dim),
        ):
            a = np.sqrt(6.0 / (1 + cols))
            blocks.append((name, rng.uniform(-a, a, size=(rows, cols))))
        for l, (fan_in, fan_out) in enumerate(spec.layer_sizes()):
            a = np.sqrt(6.0 / (fan_in + fan_out))
            blocks.append((f"W{l}", rng.uniform(-a, a, size=(fan_in, fan_out))))
            blocks.append((f"b{l}", np.zeros(fan_out)))
        return cls(spec, ParamVector.from_blocks(blocks))

    def with_params(self, params: ParamVector) -> "EmbedMLP":
        if not params.same_layout(self.params):
            raise ValueError("parameter layout does not match model spec")
        return type(self)(self.spec, params)

    @property
    def n_layers(self) -> int:
        return len(self.spec.hidden) + 1

    # -- forward -------------------------------------------------------------

    def _embed(self, inputs: dict) -> tuple[np.ndarray, np.ndarray | None]:
        spec = self.spec
        user = np.asarray(inputs["user"], dtype=np.int64)
        item = np.asarray(inputs["item"], dtype=np.int64)
        numeric = np.asarray(inputs["numeric"], dtype=np.float64)
        if user.min(initial=0) < 0 or user.max(initial=-1) >= spec.user_vocab:
            raise IndexError("user index out of embedding-table range")
        if item.min(initial=0) < 0 or item.max(initial=-1) >= spec.item_vocab:
            raise IndexError("item index out of embedding-table range")
        parts = [self.params.block("user_emb")[user], self.params.block("item_emb")[item]]
        hist_count = None
        if spec.use_history:
            hist = inputs.get("history")
            if hist is None:
                raise ValueError("model expects a history block")
            hist = np.asarray(hist, dtype=np.int64)
            if hist.max(initial=-1) >= spec.item_vocab:
                raise IndexError("history index out of embedding-table range")
            mask = hist >= 0
            hist_count = mask.sum(axis=1).astype(np.float64)
            table = self.params.block("item_emb")
            pooled = np.where(mask[:, :, None], table[np.clip(hist, 0, None)], 0.0).sum(axis=1)
            pooled /= np.maximum(hist_count, 1.0)[:, None]
            parts.append(pooled)
        if numeric.shape[1] != spec.n_numeric:
            raise ValueError(f"expected {spec.n_numeric} numeric inputs, got {numeric.shape[1]}")
        parts.append(numeric)
        return np.concatenate(parts, axis=1), hist_count

    def forward_batch(self, inputs: dict) -> tuple[np.ndarray, ForwardCache]:
        """Scores for a batch; labeling models apply the sigmoid head."""
        h0, hist_count = self._embed(inputs)
        h, z = [h0], []
        for l in range(self.n_layers):
            zl = h[-1] @ self.params.block(f"W{l}") + self.params.block(f"b{l}")
            z.append(zl)
            h.append(np.maximum(zl, 0.0) if l < self.n_layers - 1 else zl)
        out = h[-1][:, 0]
        cache = ForwardCache(inputs=inputs, h=h[:-1], z=z, out=out, hist_count=hist_count)
        if self.spec.sigmoid_head:
            return _sigmoid(out), cache
        return out.copy(), cache

    # -- reverse mode --------------------------------------------------------

    def _head_delta(self, cache: ForwardCache, weights: np.ndarray) -> np.ndarray:
        """Upstream on the pre-head output given upstream on the model output."""
        if self.spec.sigmoid_head:
            y = _sigmoid(cache.out)
            return weights * y * (1.0 - y)
        return weights

    def backward_batch(self, cache: ForwardCache, weights: np.ndarray) -> ParamVector:
        """Sum over the batch of weights[b] * d output[b] / d params."""
        weights = np.asarray(weights, dtype=np.float64)
        grad = self.params.zeros_like()
        delta = self._head_delta(cache, weights)[:, None]
        for l in range(self.n_layers - 1, -1, -1):
            grad.block(f"W{l}")[...] = cache.h[l].T @ delta
            grad.block(f"b{l}")[...] = delta.sum(axis=0)
            if l > 0:
                delta = (delta @ self.params.block(f"W{l}").T) * (cache.z[l - 1] > 0)
        dh0 = delta @ self.params.block("W0").T
        self._scatter_input_grad(cache, dh0, grad)
        return grad

    def _scatter_input_grad(self, cache: ForwardCache, dh0: np.ndarray, grad: ParamVector) -> None:
        d = self.spec.embed_dim
        user = np.asarray(cache.inputs["user"], dtype=np.int64)
        item = np.asarray(cache.inputs["item"], dtype=np.int64)
        np.add.at(grad.block("user_emb"), user, dh0[:, :d])
        np.add.at(grad.block("item_emb"), item, dh0[:, d : 2 * d])
        if self.spec.use_history:
            hist = np.asarray(cache.inputs["history"], dtype=np.int64)
            mask = hist >= 0
            share = dh0[:, 2 * d : 3 * d] / np.maximum(cache.hist_count, 1.0)[:, None]
            rows = np.clip(hist, 0, None)[mask]
            np.add.at(grad.block("item_emb"), rows, np.repeat(share, mask.sum(axis=1), axis=0))

    def _per_sample_deltas(self, cache: ForwardCache) -> list[np.ndarray]:
        """Per-layer upstream on z for a unit upstream on the pre-head output."""
        if cache._unit_deltas is None:
            deltas = [np.ones((cache.out.shape[0], 1))]
            for l in range(self.n_layers - 1, 0, -1):
                deltas.append((deltas[-1] @ self.params.block(f"W{l}").T) * (cache.z[l - 1] > 0))
            cache._unit_deltas = deltas[::-1]  # index by layer
        return cache._unit_deltas

    def grad_dots(self, cache: ForwardCache, direction: ParamVector) -> np.ndarray:
        """Per-sample inner products of d pre-head-output / d params with a direction.

        Used by the meta step, which needs one scalar per training sample."""
        if not direction.same_layout(self.params):
            raise ValueError("direction layout does not match model")
        deltas = self._per_sample_deltas(cache)
        dots = np.zeros(cache.out.shape[0])
        for l in range(self.n_layers):
            dots += np.einsum("bi,bi->b", cache.h[l] @ direction.block(f"W{l}"), deltas[l])
            dots += deltas[l] @ direction.block(f"b{l}")
        dh0 = deltas[0] @ self.params.block("W0").T
        d = self.spec.embed_dim
        user = np.asarray(cache.inputs["user"], dtype=np.int64)
        item = np.asarray(cache.inputs["item"], dtype=np.int64)
        dots += np.einsum("bi,bi->b", dh0[:, :d], direction.block("user_emb")[user])
        dots += np.einsum("bi,bi->b", dh0[:, d : 2 * d], direction.block("item_emb")[item])
        if self.spec.use_history:
            hist = np.asarray(cache.inputs["history"], dtype=np.int64)
            mask = hist >= 0
            rows = direction.block("item_emb")[np.clip(hist, 0, None)]
            contrib = np.einsum("bi,bti->bt", dh0[:, 2 * d : 3 * d], rows)
            dots += (contrib * mask).sum(axis=1) / np.maximum(cache.hist_count, 1.0)
        return dots

    def numeric_input_grads(self, cache: ForwardCache) -> np.ndarray:
        """Per-sample gradient of the pre-head output w.r.t. the numeric block."""
        dh0 = self._per_sample_deltas(cache)[0] @ self.params.block("W0").T
        return dh0[:, -self.spec.n_numeric :] if self.spec.n_numeric else dh0[:, :0]

    # -- per-sample contract ---------------------------------------------------

    def forward_one(self, inputs: dict) -> float:
        scores, _ = self.forward_batch(_as_batch(inputs))
        return float(scores[0])

    def param_grad_one(self, inputs: dict) -> ParamVector:
        """Exact gradient of the (post-head) output for a single sample."""
        _, cache = self.forward_batch(_as_batch(inputs))
        return self.backward_batch(cache, np.ones(1))


class RecommenderModel(EmbedMLP):
    """Linear-head scorer f: features -> real ranking score."""

    @classmethod
    def build(cls, spec: ModelSpec, seed: int) -> "RecommenderModel":
        if spec.sigmoid_head:
            raise ValueError("recommender head is linear")
        return cls.initialize(spec, seed)


class LabelingModel(EmbedMLP):
    """Sigmoid-head labeler g: (features, raw feedback) -> label in (0, 1)."""

    @classmethod
    def build(cls, spec: ModelSpec, seed: int) -> "LabelingModel":
        if not spec.sigmoid_head:
            raise ValueError("labeling model requires the sigmoid head")
        return cls.initialize(spec, seed)


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    e = np.exp(x[~pos])
    out[~pos] = e / (1.0 + e)
    # keep labels strictly inside (0, 1) even under float saturation
    return np.clip(out, 1e-12, 1.0 - 1e-12)


def _as_batch(inputs: dict) -> dict:
    batch = {}
    for key, val in inputs.items():
        if val is None:
            batch[key] = None
        else:
            arr = np.asarray(val)
            batch[key] = arr[None, ...] if arr.ndim == (0 if key in ("user", "item") else 1) else arr
    return batch


# Free-function views of the per-sample contract.


def recommender_forward(model: RecommenderModel, inputs: dict) -> float:
    return model.forward_one(inputs)


def recommender_param_grad(model: RecommenderModel, inputs: dict) -> ParamVector:
    return model.param_grad_one(inputs)


def labeling_forward(model: LabelingModel, inputs: dict) -> float:
    return model.forward_one(inputs)


def labeling_param_grad(model: LabelingModel, inputs: dict) -> ParamVector:
    return model.param_grad_one(inputs)
