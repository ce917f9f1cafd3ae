import numpy as np
import pytest

from labelcraft.data import SyntheticConfig, chronological_split, generate_synthetic
from labelcraft.features import EncodedDataset, EncoderConfig, FeatureEncoder
from labelcraft.models import LabelingModel, ModelSpec, RecommenderModel
from labelcraft.objectives import ObjectiveConfig, fit_scale, scale_values, soft_objective
from labelcraft.params import ParamVector, sgd_step
from labelcraft.softtopk import SoftTopKConfig
from labelcraft.trainer import LabelCraftTrainer, TrainConfig, TrainState, inner_loss_grad

from conftest import max_rel_err


def tiny_setup(seed=0, n_users=4, n_items=8, rec_hidden=(), lab_hidden=(2,), k=2, eta1=0.1, eta2=0.7):
    records = generate_synthetic(
        SyntheticConfig(
            n_users=n_users, n_items=n_items, n_days=4, latent_dim=3,
            duration_bias_strength=0.4, explicit_rate=0.5, seed=seed,
            events_per_user_per_day=3, n_tag_features=1,
        )
    )
    split = chronological_split(records, 2, 1, 1)
    encoder = FeatureEncoder(EncoderConfig(user_hash_size=7, item_hash_size=11))
    watch_scale = fit_scale(np.array([r.watch_time for r in split.validation]))
    dur_scale = fit_scale(np.array([r.duration for r in split.validation]))
    sets = {}
    for name, part in split.parts().items():
        ds = EncodedDataset(part, encoder)
        ds.attach_scales(scale_values(dur_scale, ds.duration), scale_values(watch_scale, ds.watch_time))
        sets[name] = ds
    rec = RecommenderModel.build(ModelSpec(7, 11, 1, 2, hidden=rec_hidden), seed + 1)
    lab = LabelingModel.build(ModelSpec(7, 11, 1, 6, hidden=lab_hidden, sigmoid_head=True), seed + 2)
    tcfg = TrainConfig(
        eta1=eta1, eta2=eta2, weight_decay=0.01, batch_size=8,
        meta_users_per_step=n_users, max_epochs=3, patience=1, seed=seed,
    )
    ocfg = ObjectiveConfig(k=k, tau=0.5, soft=SoftTopKConfig(epsilon=0.3, max_iters=80, tol=1e-15))
    trainer = LabelCraftTrainer(rec, lab, sets["train"], sets["validation"], tcfg, ocfg)
    return trainer


class TestInnerLossGrad:
    def test_perfect_fit_zero_loss_and_grad(self, rng):
        trainer = tiny_setup()
        idx = np.arange(6)
        model = trainer.recommender
        preds, _ = model.forward_batch(trainer.train_set.recommender_inputs(idx))
        loss, grad, _, _ = inner_loss_grad(
            model, trainer.train_set.recommender_inputs(idx), preds, weight_decay=0.0
        )
        assert loss == pytest.approx(0.0, abs=1e-24)
        assert np.abs(grad.values).max() < 1e-12

    def test_regularizer_isolation(self):
        trainer = tiny_setup()
        idx = np.arange(6)
        model = trainer.recommender
        preds, _ = model.forward_batch(trainer.train_set.recommender_inputs(idx))
        lam = 0.3
        loss, grad, _, _ = inner_loss_grad(
            model, trainer.train_set.recommender_inputs(idx), preds, weight_decay=lam
        )
        assert loss == pytest.approx(lam * float(model.params.values @ model.params.values))
        assert np.abs(grad.values - 2 * lam * model.params.values).max() < 1e-12

    def test_grad_matches_finite_differences(self, rng):
        trainer = tiny_setup(seed=3)
        idx = np.arange(8)
        inputs = trainer.train_set.recommender_inputs(idx)
        labels = rng.uniform(size=8)
        model = trainer.recommender
        _, grad, _, _ = inner_loss_grad(model, inputs, labels, weight_decay=0.05)
        h = 1e-6
        fd = np.zeros(len(model.params))
        for i in range(len(model.params)):
            vp, vm = model.params.values.copy(), model.params.values.copy()
            vp[i] += h
            vm[i] -= h
            lp = inner_loss_grad(model.with_params(ParamVector(vp, model.params.layout)), inputs, labels, 0.05)[0]
            lm = inner_loss_grad(model.with_params(ParamVector(vm, model.params.layout)), inputs, labels, 0.05)[0]
            fd[i] = (lp - lm) / (2 * h)
        assert max_rel_err(grad.values, fd) < 1e-4

    def test_empty_batch_rejected(self):
        trainer = tiny_setup()
        with pytest.raises(ValueError):
            inner_loss_grad(trainer.recommender, {}, np.array([]), 0.0)


class TestMetaStep:
    def test_eta2_zero_keeps_phi(self, rng):
        trainer = tiny_setup(eta2=0.0)
        state = TrainState(theta=trainer.recommender.params.copy(), phi=trainer.labeling.params.copy())
        batch = rng.permutation(len(trainer.train_set))[:8]
        phi_new, _, _ = trainer.meta_step(state, batch, trainer.val_users)
        assert np.array_equal(phi_new.values, state.phi.values)

    def test_saturated_groups_give_zero_hypergradient(self, rng):
        # k above every group size: alpha is constant, the chain is dead
        trainer = tiny_setup(k=50)
        state = TrainState(theta=trainer.recommender.params.copy(), phi=trainer.labeling.params.copy())
        batch = rng.permutation(len(trainer.train_set))[:8]
        phi_new, _, _ = trainer.meta_step(state, batch, trainer.val_users)
        assert np.array_equal(phi_new.values, state.phi.values)

    def test_theta_not_mutated(self, rng):
        trainer = tiny_setup()
        state = TrainState(theta=trainer.recommender.params.copy(), phi=trainer.labeling.params.copy())
        theta_before = state.theta.values.copy()
        batch = rng.permutation(len(trainer.train_set))[:8]
        trainer.meta_step(state, batch, trainer.val_users)
        assert np.array_equal(state.theta.values, theta_before)

    def test_hypergradient_matches_finite_differences(self):
        # full-pipeline FD over every labeling parameter, anchors and balancing
        # weights frozen at the base point exactly as the backward pass treats them
        worst = 0.0
        for seed in range(5):
            trainer = tiny_setup(seed=seed)
            rng = np.random.default_rng(seed)
            state = TrainState(theta=trainer.recommender.params.copy(), phi=trainer.labeling.params.copy())
            batch = rng.permutation(len(trainer.train_set))[:8]
            users = trainer.val_users
            phi_new, breakdown, _ = trainer.meta_step(state, batch, users)
            hypergrad = (phi_new.values - state.phi.values) / trainer.cfg.eta2
            w0 = np.asarray(breakdown.weights)

            labels, _ = trainer._labels(state.phi, batch)
            _, _, grad_theta, _, _ = trainer._inner(state.theta, batch, labels)
            theta_prime = sgd_step(state.theta, grad_theta, trainer.cfg.eta1)
            base_lists, _, _, _ = trainer._meta_lists(theta_prime, users)
            anchors = {
                u: (float(ul.scores.min()), float(ul.scores.max())) for u, ul in base_lists.items()
            }

            def value(phi_values):
                phi = ParamVector(phi_values, state.phi.layout)
                labels, _ = trainer._labels(phi, batch)
                _, _, gth, _, _ = trainer._inner(state.theta, batch, labels)
                lists, _, _, _ = trainer._meta_lists(sgd_step(state.theta, gth, trainer.cfg.eta1), users)
                for u in lists:
                    lists[u].anchors = anchors[u]
                bd, _ = soft_objective(lists, trainer.objective_cfg)
                return w0 @ np.array([bd.m1, bd.m2, bd.m3])

            h = 1e-6
            fd = np.zeros(len(state.phi))
            for i in range(len(state.phi)):
                vp, vm = state.phi.values.copy(), state.phi.values.copy()
                vp[i] += h
                vm[i] -= h
                fd[i] = (value(vp) - value(vm)) / (2 * h)
            worst = max(worst, max_rel_err(hypergrad, fd))
        assert worst < 1e-3


class TestThetaStep:
    def test_descent_on_fixed_batch(self):
        # two consecutive steps strictly decrease the batch loss for small eta1
        wins = 0
        for seed in range(20):
            trainer = tiny_setup(seed=seed, eta1=1e-3, rec_hidden=(4,))
            state = TrainState(theta=trainer.recommender.params.copy(), phi=trainer.labeling.params.copy())
            batch = np.arange(min(12, len(trainer.train_set)))
            labels, _ = trainer._labels(state.phi, batch)
            _, loss0, _, _, _ = trainer._inner(state.theta, batch, labels)
            state.theta, _ = trainer.theta_step(state, batch)
            _, loss1, _, _, _ = trainer._inner(state.theta, batch, labels)
            state.theta, _ = trainer.theta_step(state, batch)
            _, loss2, _, _, _ = trainer._inner(state.theta, batch, labels)
            wins += loss2 < loss1 < loss0
        assert wins == 20

    def test_phi_not_mutated(self, rng):
        trainer = tiny_setup()
        state = TrainState(theta=trainer.recommender.params.copy(), phi=trainer.labeling.params.copy())
        phi_before = state.phi.values.copy()
        trainer.theta_step(state, np.arange(8))
        assert np.array_equal(state.phi.values, phi_before)


class TestTrainLoop:
    def test_deterministic_history(self):
        a = tiny_setup(seed=11).run()
        b = tiny_setup(seed=11).run()
        assert a.history == b.history
        assert np.array_equal(a.theta.values, b.theta.values)
        assert np.array_equal(a.phi.values, b.phi.values)

    def test_patience_zero_stops_at_first_plateau(self):
        trainer = tiny_setup(seed=5)
        trainer.cfg = TrainConfig(
            eta1=trainer.cfg.eta1, eta2=trainer.cfg.eta2, weight_decay=trainer.cfg.weight_decay,
            batch_size=trainer.cfg.batch_size, meta_users_per_step=trainer.cfg.meta_users_per_step,
            max_epochs=50, patience=0, seed=trainer.cfg.seed,
        )
        result = trainer.run()
        # stops exactly one epoch after the best one
        assert result.stopped_epoch == result.best_epoch + 1 or result.stopped_epoch == 49

    def test_returns_best_epoch_params(self):
        trainer = tiny_setup(seed=7)
        result = trainer.run()
        best_total = max(e["val"]["total"] for e in result.epoch_history)
        assert result.best_objective == pytest.approx(best_total)

    def test_eta2_zero_is_plain_supervised(self):
        trainer = tiny_setup(seed=9, eta2=0.0)
        result = trainer.run()
        phi0 = trainer.labeling.params.values
        assert np.array_equal(result.phi.values, phi0)
        assert len(result.history) > 0

    def test_history_records_breakdown(self):
        result = tiny_setup(seed=13).run()
        row = result.history[0]
        for key in ("step", "epoch", "loss", "m1", "m2", "m3", "weights", "total", "tau"):
            assert key in row
