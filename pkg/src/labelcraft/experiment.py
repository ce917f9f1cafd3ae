"""End-to-end experiment orchestration shared by the CLI commands.

A Bundle holds everything derived from one (config, seed) pair: the split,
the feedback scalers fitted on the validation days, and the encoded array
datasets. Methods then train and evaluate against the same bundle so
comparisons share identical data.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .baselines import RULE_KINDS, make_rule, train_with_rule
from .config import ConfigError
from .data import (
    DatasetSplit,
    SyntheticConfig,
    chronological_split,
    generate_synthetic,
    load_interactions,
)
from .evaluation import MetricsReport, evaluate
from .features import EncodedDataset, EncoderConfig, FeatureEncoder
from .models import LabelingModel, ModelSpec, RecommenderModel
from .objectives import ObjectiveConfig, ScaleParams, fit_scale, scale_values
from .softtopk import SoftTopKConfig
from .trainer import LabelCraftTrainer, TrainConfig, TrainResult

__all__ = ["Bundle", "MethodRun", "build_records", "prepare_bundle", "run_method", "METHODS"]

METHODS = ("labelcraft",) + RULE_KINDS

# offsets deriving per-component seeds from the run seed
_SEED_DATA, _SEED_REC, _SEED_LAB, _SEED_LOOP = 0, 101, 202, 303


@dataclass
class Bundle:
    split: DatasetSplit
    encoder: FeatureEncoder
    train_set: EncodedDataset
    val_set: EncodedDataset
    test_set: EncodedDataset
    watch_scale: ScaleParams
    duration_scale: ScaleParams
    seed: int


@dataclass
class MethodRun:
    method: str
    result: TrainResult
    report: MetricsReport
    rule_params: dict | None = None


def build_records(cfg: dict, seed: int):
    data = cfg["data"]
    if data["source"] == "csv":
        if not data["path"]:
            raise ConfigError("data.source is 'csv' but data.path is empty")
        return load_interactions(data["path"])
    if data["source"] != "synthetic":
        raise ConfigError(f"unknown data.source {data['source']!r}")
    syn = SyntheticConfig(
        n_users=data["n_users"],
        n_items=data["n_items"],
        n_days=data["n_days"],
        latent_dim=data["latent_dim"],
        duration_bias_strength=data["duration_bias_strength"],
        explicit_rate=data["explicit_rate"],
        seed=data["seed"] if data["seed"] >= 0 else seed + _SEED_DATA,
        events_per_user_per_day=data["events_per_user_per_day"],
    )
    return generate_synthetic(syn)


def prepare_bundle(cfg: dict, seed: int, records=None) -> Bundle:
    """Split, fit the validation-day scalers, and encode all three splits."""
    if records is None:
        records = build_records(cfg, seed)
    sp = cfg["split"]
    split = chronological_split(records, sp["train_days"], sp["val_days"], sp["test_days"])

    obj = cfg["objective"]
    watch_scale = fit_scale(
        np.array([r.watch_time for r in split.validation]),
        beta=obj["beta"],
        fitted_on="watch_time:validation",
        mode=obj["scale_mode"],
    )
    duration_scale = fit_scale(
        np.array([r.duration for r in split.validation]),
        beta=obj["beta"],
        fitted_on="duration:validation",
        mode=obj["scale_mode"],
    )

    enc_cfg = cfg["encoder"]
    encoder = FeatureEncoder(
        EncoderConfig(
            user_hash_size=enc_cfg["user_hash_size"],
            item_hash_size=enc_cfg["item_hash_size"],
            history_length=enc_cfg["history_length"],
        )
    )
    sets = {}
    context = {"train": None, "validation": split.train, "test": split.train + split.validation}
    for name, records_part in split.parts().items():
        ds = EncodedDataset(records_part, encoder, context=context[name])
        ds.attach_scales(
            scale_values(duration_scale, ds.duration), scale_values(watch_scale, ds.watch_time)
        )
        sets[name] = ds
    return Bundle(
        split=split,
        encoder=encoder,
        train_set=sets["train"],
        val_set=sets["validation"],
        test_set=sets["test"],
        watch_scale=watch_scale,
        duration_scale=duration_scale,
        seed=seed,
    )


def _model_specs(cfg: dict, bundle: Bundle) -> tuple[ModelSpec, ModelSpec]:
    enc = bundle.encoder.cfg
    model = cfg["model"]
    n_feats = bundle.train_set.numeric.shape[1]
    rec_spec = ModelSpec(
        user_vocab=enc.user_hash_size,
        item_vocab=enc.item_hash_size,
        embed_dim=model["embed_dim"],
        n_numeric=1 + n_feats,  # scaled duration + passthrough features
        hidden=tuple(model["recommender_hidden"]),
        use_history=enc.history_length > 0,
        sigmoid_head=False,
    )
    lab = cfg["labeling"]
    n_lab_numeric = (
        int(lab["use_duration"]) + n_feats + int(lab["use_watch"]) + 3 * int(lab["use_explicit"])
    )
    lab_spec = ModelSpec(
        user_vocab=enc.user_hash_size,
        item_vocab=enc.item_hash_size,
        embed_dim=model["embed_dim"],
        n_numeric=n_lab_numeric,
        hidden=tuple(model["labeling_hidden"]),
        use_history=False,
        sigmoid_head=True,
    )
    return rec_spec, lab_spec


def _train_config(cfg: dict, seed: int) -> TrainConfig:
    t = cfg["train"]
    return TrainConfig(
        eta1=t["eta1"],
        eta2=t["eta2"],
        weight_decay=t["weight_decay"],
        phi_weight_decay=t["phi_weight_decay"],
        batch_size=t["batch_size"],
        meta_users_per_step=t["meta_users_per_step"],
        max_epochs=t["max_epochs"],
        patience=t["patience"],
        seed=seed + _SEED_LOOP,
        fresh_theta_batch=t["fresh_theta_batch"],
    )


def _objective_config(cfg: dict) -> ObjectiveConfig:
    o = cfg["objective"]
    eps = o["epsilon"] if o["epsilon"] > 0 else None
    return ObjectiveConfig(
        k=o["k"],
        tau=o["tau"],
        soft=SoftTopKConfig(epsilon=eps, max_iters=o["max_iters"], tol=o["tol"]),
        m3_exponent=o["m3_exponent"],
        use_m1=o["use_m1"],
        use_m2=o["use_m2"],
        use_m3=o["use_m3"],
        dynamic_balance=o["dynamic_balance"],
    )


def run_method(cfg: dict, bundle: Bundle, method: str) -> MethodRun:
    """Train one method against the bundle and evaluate it on the test days."""
    method = method.lower()
    if method not in METHODS:
        raise ConfigError(f"unknown method {method!r}; expected one of {METHODS}")
    rec_spec, lab_spec = _model_specs(cfg, bundle)
    recommender = RecommenderModel.build(rec_spec, bundle.seed + _SEED_REC)
    train_cfg = _train_config(cfg, bundle.seed)

    rule_params = None
    if method == "labelcraft":
        labeling = LabelingModel.build(lab_spec, bundle.seed + _SEED_LAB)
        lab = cfg["labeling"]
        trainer = LabelCraftTrainer(
            recommender,
            labeling,
            bundle.train_set,
            bundle.val_set,
            train_cfg,
            _objective_config(cfg),
            labeling_flags=(lab["use_watch"], lab["use_duration"], lab["use_explicit"]),
        )
        result = trainer.run()
    else:
        rule = make_rule(
            method,
            bundle.split.train,
            beta=cfg["objective"]["beta"],
            n_buckets=cfg["baselines"]["n_buckets"],
            wt_raw=cfg["baselines"]["wt_raw"],
            scale_mode=cfg["objective"]["scale_mode"],
        )
        rule_params = rule.params_dict()
        result = train_with_rule(rule, recommender, bundle.train_set, bundle.val_set, train_cfg)

    best_model = recommender.with_params(result.theta)
    report = evaluate(
        best_model,
        bundle.test_set,
        k=cfg["eval"]["k"],
        method=method,
        histogram_bins=cfg["eval"]["histogram_bins"],
    )
    return MethodRun(method=method, result=result, report=report, rule_params=rule_params)
