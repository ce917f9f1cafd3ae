"""Automated label generation for implicit-feedback recommendation.

A labeling network is trained by bi-level optimization — meta-gradients
through one recommender SGD step — to maximize differentiable soft top-k
platform objectives (watch time, explicit feedback, duration diversity),
alongside rule-based labeling baselines and ranking metrics for comparison.
"""
from ._kernels import BACKEND as KERNEL_BACKEND
from .data import (
    DatasetSplit,
    InteractionRecord,
    SyntheticConfig,
    chronological_split,
    generate_synthetic,
    group_by_user,
    kcore_filter,
    load_interactions,
    save_interactions,
)
from .models import LabelingModel, ModelSpec, RecommenderModel, sgd_step
from .objectives import (
    ObjectiveBreakdown,
    ObjectiveConfig,
    ScaleParams,
    balance,
    fit_scale,
    scale_value,
    sub_objectives,
)
from .params import ParamVector, load_checkpoint, save_checkpoint
from .softtopk import SoftTopKConfig, SoftTopKResult, hard_topk, soft_topk, soft_topk_vjp

__version__ = "0.1.0"
