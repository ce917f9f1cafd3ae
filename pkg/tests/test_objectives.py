import numpy as np
import pytest

from labelcraft.objectives import (
    ObjectiveConfig,
    UserList,
    balance,
    fit_scale,
    hard_objective,
    objective_pred_grads,
    scale_value,
    scale_values,
    soft_objective,
    sub_objectives,
)
from labelcraft.softtopk import SoftTopKConfig, hard_topk

from conftest import max_rel_err, record


class TestFitScale:
    def test_hand_case(self):
        # max 100, 80th percentile 20: knee value is max(0.2, 0.2)
        values = np.array([20.0] * 8 + [50.0, 100.0])
        p = fit_scale(values, beta=80.0)
        assert p.v_max == 100.0 and p.v_beta == 20.0
        assert p.beta_prime == pytest.approx(0.2)

    def test_all_equal(self):
        p = fit_scale(np.full(5, 7.0), beta=80.0)
        assert p.v_max == p.v_beta == 7.0
        assert p.beta_prime == 1.0

    def test_default_beta_is_80(self):
        import inspect

        assert inspect.signature(fit_scale).parameters["beta"].default == 80.0

    def test_errors(self):
        with pytest.raises(ValueError):
            fit_scale(np.array([]))
        with pytest.raises(ValueError):
            fit_scale(np.array([-1.0, 2.0]))
        with pytest.raises(ValueError):
            fit_scale(np.ones(3), beta=100.0)


class TestScaleValue:
    def params(self):
        return fit_scale(np.array([20.0] * 8 + [50.0, 100.0]), beta=80.0)

    def test_hand_values(self):
        p = self.params()
        assert scale_value(p, 10.0) == pytest.approx(0.10)
        assert scale_value(p, 60.0) == pytest.approx(0.60)

    def test_endpoints(self):
        p = self.params()
        assert scale_value(p, 0.0) == 0.0
        assert scale_value(p, 100.0) == 1.0

    def test_knee_continuity(self):
        p = self.params()
        assert scale_value(p, p.v_beta) == pytest.approx(p.beta_prime)
        assert scale_value(p, p.v_beta + 1e-9) == pytest.approx(p.beta_prime, abs=1e-8)

    def test_clamps_above_max(self):
        p = self.params()
        assert scale_value(p, 1e6) == 1.0

    def test_degenerate_limits(self):
        zero = fit_scale(np.zeros(4))
        assert scale_value(zero, 0.0) == 0.0
        flat = fit_scale(np.full(4, 3.0))
        assert scale_value(flat, 3.0) == 1.0

    def test_random_properties(self, rng):
        # monotone, continuous at the knee, onto [0,1], head interval >= 1-beta%
        for _ in range(1000):
            values = rng.uniform(0, 100, size=int(rng.integers(2, 30)))
            beta = float(rng.uniform(5, 95))
            p = fit_scale(values, beta=beta)
            grid = np.linspace(0, p.v_max, 17)
            mapped = scale_values(p, grid)
            assert np.all(np.diff(mapped) >= -1e-12)
            assert mapped[0] == 0.0 and mapped[-1] == pytest.approx(1.0)
            knee_gap = abs(scale_value(p, p.v_beta) - scale_value(p, min(p.v_beta + 1e-9, p.v_max)))
            assert knee_gap < 1e-6
            assert scale_value(p, p.v_beta) >= (1 - beta / 100.0) - 1e-12

    def test_minmax_mode(self):
        p = fit_scale(np.array([0.0, 50.0, 100.0]), mode="minmax")
        assert scale_value(p, 25.0) == 0.25


class TestBalance:
    def test_tau_zero_uniform(self):
        w, total = balance(np.array([0.1, 0.9, 0.4]), 0.0)
        assert np.allclose(w, 1 / 3)
        assert total == pytest.approx(np.mean([0.1, 0.9, 0.4]))

    def test_hand_softmax(self):
        w, total = balance(np.array([0.2, 0.5, 0.8]), 1.0)
        assert np.allclose(w, [0.4368, 0.3236, 0.2397], atol=5e-5)
        assert total == pytest.approx(0.4409, abs=5e-5)

    def test_equal_inputs_symmetric(self, rng):
        for tau in (0.0, 0.5, 3.0):
            w, total = balance(np.full(3, 0.7), tau)
            assert np.allclose(w, 1 / 3)
            assert total == pytest.approx(0.7)

    def test_random_properties(self, rng):
        # weights sum to one; ordering reversed relative to the inputs;
        # smallest sub-objective always carries the largest weight
        for _ in range(1000):
            m = rng.uniform(0, 1, size=3)
            tau = float(rng.uniform(0.01, 5.0))
            w, _ = balance(m, tau)
            assert w.sum() == pytest.approx(1.0)
            order_m = np.argsort(m)
            assert np.all(np.diff(w[order_m]) <= 1e-12)
            assert np.argmax(w) == np.argmin(m)

    def test_active_mask_renormalizes(self):
        w, total = balance(np.array([0.2, 0.5, 0.8]), 0.0, active=np.array([True, False, True]))
        assert w[1] == 0.0
        assert w[0] == w[2] == pytest.approx(0.5)
        assert total == pytest.approx(0.5 * 0.2 + 0.5 * 0.8)

    def test_rejects_nonfinite(self):
        with pytest.raises(ValueError):
            balance(np.array([np.inf, 0.0, 0.0]), 1.0)


def make_list(scores, watch, positive, dur, anchors=None):
    return UserList(
        scores=np.asarray(scores, dtype=np.float64),
        scaled_watch=np.asarray(watch, dtype=np.float64),
        positive=np.asarray(positive, dtype=np.float64),
        scaled_duration=np.asarray(dur, dtype=np.float64),
        anchors=anchors,
    )


class TestSubObjectives:
    def test_full_selection_reduces_to_means(self, rng):
        n = 6
        lists = {
            "u": make_list(rng.normal(size=n), rng.uniform(size=n), rng.integers(0, 2, n), rng.uniform(size=n))
        }
        cfg = ObjectiveConfig(k=n, tau=0.0)
        bd, alphas = soft_objective(lists, cfg)
        assert np.array_equal(alphas["u"], np.ones(n))
        assert bd.m1 == pytest.approx(lists["u"].scaled_watch.mean())
        assert bd.m2 == pytest.approx(lists["u"].positive.mean())

    def test_zero_watch_times(self, rng):
        lists = {"u": make_list(rng.normal(size=5), np.zeros(5), np.ones(5), rng.uniform(size=5))}
        bd, _ = soft_objective(lists, ObjectiveConfig(k=2, tau=0.0))
        assert bd.m1 == 0.0

    def test_m3_hard_selection_oracle(self):
        # predictions pick positions 0 and 2; durations (0.1, 0.9) have std 0.4,
        # doubled by the [0,1] normalization of the diversity term
        scores = np.array([5.0, 0.0, 4.0, -1.0])
        dur = np.array([0.1, 0.1, 0.9, 0.9])
        lists = {"u": make_list(scores, np.zeros(4), np.zeros(4), dur)}
        cfg = ObjectiveConfig(k=2, tau=0.0, soft=SoftTopKConfig(epsilon=1e-3, max_iters=20000, tol=1e-10))
        bd, _ = soft_objective(lists, cfg)
        assert bd.m3 == pytest.approx(2 * 0.4, abs=1e-3)

    def test_m3_reciprocal_variant(self):
        scores = np.array([5.0, 0.0, 4.0, -1.0])
        dur = np.array([0.1, 0.1, 0.9, 0.9])
        lists = {"u": make_list(scores, np.zeros(4), np.zeros(4), dur)}
        cfg = ObjectiveConfig(
            k=2, tau=0.0, m3_exponent=-0.5, soft=SoftTopKConfig(epsilon=1e-3, max_iters=20000, tol=1e-10)
        )
        bd, _ = soft_objective(lists, cfg)
        assert bd.m3 == pytest.approx(1 / 0.4, rel=1e-2)

    def test_m2_brute_force_hard_topk_oracle(self, rng):
        # sharp relaxation against exact top-k positive counting, n <= 8
        for _ in range(25):
            n = int(rng.integers(2, 9))
            k = int(rng.integers(1, n + 1))
            scores = rng.permutation(np.linspace(0, 1, n))
            positive = rng.integers(0, 2, n).astype(float)
            lists = {
                "a": make_list(scores, rng.uniform(size=n), positive, rng.uniform(size=n)),
            }
            cfg = ObjectiveConfig(k=k, tau=0.0, soft=SoftTopKConfig(epsilon=1e-4, max_iters=60000, tol=1e-9))
            bd, _ = soft_objective(lists, cfg)
            k_eff = min(k, n)
            want = (hard_topk(scores, k_eff) @ positive) / k_eff
            assert abs(bd.m2 - want) < 5e-3

    def test_small_groups_use_all_records(self, rng):
        lists = {
            "big": make_list(rng.normal(size=7), rng.uniform(size=7), np.zeros(7), rng.uniform(size=7)),
            "small": make_list(rng.normal(size=2), np.array([0.4, 0.8]), np.zeros(2), rng.uniform(size=2)),
        }
        bd, alphas = soft_objective(lists, ObjectiveConfig(k=4, tau=0.0))
        assert np.array_equal(alphas["small"], np.ones(2))

    def test_record_level_surface(self, rng):
        groups = {
            "u1": [record(user="u1", item=f"a{i}", ts=i, watch=10 * i, duration=30 + i) for i in range(5)],
            "u2": [record(user="u2", item=f"b{i}", ts=i, watch=5, duration=60, explicit=(1, 0, 0)) for i in range(3)],
        }
        watch_scale = fit_scale(np.array([5.0, 10, 20, 30, 40]))
        dur_scale = fit_scale(np.array([30.0, 40, 60]))
        scores = {r.item_id: float(rng.normal()) for rs in groups.values() for r in rs}
        m1, m2, m3, alphas = sub_objectives(
            lambda r: scores[r.item_id], groups, 2, SoftTopKConfig(), (watch_scale, dur_scale)
        )
        assert set(alphas) == {"u1", "u2"}
        assert 0.0 <= m1 <= 1.0 and 0.0 <= m2 <= 1.0 and 0.0 <= m3 <= 1.0

    def test_empty_groups_rejected(self):
        with pytest.raises(ValueError):
            soft_objective({}, ObjectiveConfig())


class TestPredGrads:
    def build_lists(self, rng, n_users=3, n=6, freeze=True):
        lists = {}
        for u in range(n_users):
            scores = rng.normal(size=n)
            anchors = (float(scores.min()), float(scores.max())) if freeze else None
            lists[f"u{u}"] = make_list(
                scores, rng.uniform(size=n), rng.integers(0, 2, n), rng.uniform(size=n), anchors
            )
        return lists

    def test_matches_finite_differences(self, rng):
        cfg = ObjectiveConfig(k=2, tau=0.7, soft=SoftTopKConfig(epsilon=0.4, max_iters=60, tol=1e-15))
        worst = 0.0
        for _ in range(10):
            lists = self.build_lists(rng)
            bd, grads = objective_pred_grads(lists, cfg)
            w0 = np.asarray(bd.weights)

            def merged_total(ls):
                vals, _ = soft_objective(ls, cfg)
                return w0 @ np.array([vals.m1, vals.m2, vals.m3])

            h = 1e-6
            for u, ul in lists.items():
                fd = np.zeros_like(ul.scores)
                for i in range(ul.scores.size):
                    up = {k: make_list(v.scores.copy(), v.scaled_watch, v.positive, v.scaled_duration, v.anchors) for k, v in lists.items()}
                    dn = {k: make_list(v.scores.copy(), v.scaled_watch, v.positive, v.scaled_duration, v.anchors) for k, v in lists.items()}
                    up[u].scores[i] += h
                    dn[u].scores[i] -= h
                    fd[i] = (merged_total(up) - merged_total(dn)) / (2 * h)
                worst = max(worst, max_rel_err(grads[u], fd))
        assert worst < 1e-3

    def test_saturated_group_zero_grad(self, rng):
        lists = {
            "sat": make_list(rng.normal(size=3), rng.uniform(size=3), np.ones(3), rng.uniform(size=3)),
            "big": make_list(rng.normal(size=8), rng.uniform(size=8), np.ones(8), rng.uniform(size=8)),
        }
        _, grads = objective_pred_grads(lists, ObjectiveConfig(k=3, tau=0.5))
        assert np.array_equal(grads["sat"], np.zeros(3))
        assert np.abs(grads["big"]).max() > 0

    def test_weights_held_constant(self, rng):
        lists = self.build_lists(rng, n_users=2)
        bd, _ = objective_pred_grads(lists, ObjectiveConfig(k=2, tau=0.9))
        w, total = balance(np.array([bd.m1, bd.m2, bd.m3]), 0.9)
        assert np.allclose(bd.weights, w)
        assert bd.total == pytest.approx(total)


class TestHardObjective:
    def test_matches_soft_in_sharp_limit(self, rng):
        lists = {}
        for u in range(4):
            scores = rng.permutation(np.linspace(0, 1, 7))
            lists[f"u{u}"] = make_list(scores, rng.uniform(size=7), rng.integers(0, 2, 7), rng.uniform(size=7))
        sharp = ObjectiveConfig(k=3, tau=0.4, soft=SoftTopKConfig(epsilon=1e-4, max_iters=60000, tol=1e-9))
        soft_bd, _ = soft_objective(lists, sharp)
        hard_bd = hard_objective(lists, ObjectiveConfig(k=3, tau=0.4))
        assert hard_bd.m1 == pytest.approx(soft_bd.m1, abs=5e-3)
        assert hard_bd.m2 == pytest.approx(soft_bd.m2, abs=5e-3)
        assert hard_bd.m3 == pytest.approx(soft_bd.m3, abs=2e-2)

    def test_disabled_balance_uniform_weights(self, rng):
        lists = {"u": make_list(rng.normal(size=5), rng.uniform(size=5), np.ones(5), rng.uniform(size=5))}
        bd = hard_objective(lists, ObjectiveConfig(k=2, tau=0.9, dynamic_balance=False))
        assert np.allclose(bd.weights, 1 / 3)

    def test_dropped_term_renormalizes(self, rng):
        lists = {"u": make_list(rng.normal(size=5), rng.uniform(size=5), np.ones(5), rng.uniform(size=5))}
        bd = hard_objective(lists, ObjectiveConfig(k=2, tau=0.0, use_m2=False))
        assert bd.weights[1] == 0.0
        assert bd.weights[0] == bd.weights[2] == pytest.approx(0.5)
        assert bd.total == pytest.approx(0.5 * bd.m1 + 0.5 * bd.m3)
