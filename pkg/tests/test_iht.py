import math
import warnings

import numpy as np
import pytest

from sparsenet.data import blob_split
from sparsenet.iht import (
    DivergenceError,
    SparsityPlan,
    TrainConfig,
    budget_for,
    change_ratio,
    finetune_masked,
    flip_horizontal,
    layer_budget,
    model_budgets,
    nonzero_counts,
    progressive_ratio,
    random_threshold_model,
    restore_and_train,
    run_iht,
    threshold_model,
    train_dense,
)
from sparsenet.network import OptimizerState, build_network

BLOB_ARCH = {
    "input_shape": [6],
    "classes": 3,
    "layers": [
        {"kind": "fully_connected", "units": 8},
        {"kind": "relu"},
        {"kind": "fully_connected", "units": 3},
        {"kind": "softmax"},
    ],
}


def blobs():
    train, test = blob_split(3, 40, 10, 6, separation=6.0, seed=0)
    return train, test


def small_cfg(**kw):
    base = dict(s1=2, s2=2, cycle_count=3, learning_rate=0.05, momentum=0.9, batch_size=16, seed=0)
    base.update(kw)
    return TrainConfig(**base)


def toy_pair(w0, w1):
    """FC(1 -> 2) without bias; with x = 1 the logits are the weights."""
    net = build_network({"input_shape": [1], "classes": 2, "layers": [
        {"kind": "fully_connected", "units": 2, "bias": False}, {"kind": "softmax"}]})
    net.layers[0].weight[...] = [[w0], [w1]]
    return net


def sigmoid(z):
    return 1 / (1 + math.exp(-z))


class TestSchedule:
    def test_progressive_midpoint(self):
        assert progressive_ratio(0.0, 0.9, 5, 10) == pytest.approx(0.45)

    def test_progressive_endpoints(self):
        assert progressive_ratio(0.2, 0.8, 0, 6) == 0.2
        assert progressive_ratio(0.2, 0.8, 6, 6) == pytest.approx(0.8)
        assert progressive_ratio(0.2, 0.8, 0, 0) == 0.8
        with pytest.raises(ValueError):
            progressive_ratio(0.2, 0.8, 7, 6)

    @pytest.mark.parametrize("ratio,size,k", [(0.5, 1000, 500), (0.9, 1000, 100), (0.0, 7, 7), (0.25, 2, 2), (0.5, 3, 2)])
    def test_budget_examples(self, ratio, size, k):
        assert budget_for(ratio, size) == k

    def test_budget_never_zero(self):
        with pytest.warns(RuntimeWarning, match="rounds to 0"):
            assert budget_for(0.99, 10) == 1

    def test_layer_budget(self):
        plan = SparsityPlan(0.9, start_ratio=0.0, total_epochs=10)
        assert layer_budget(plan, 1000, 10) == 100
        assert layer_budget(plan, 1000, 5) == 550

    def test_plan_validation(self):
        with pytest.raises(ValueError):
            SparsityPlan(1.0)
        with pytest.raises(ValueError):
            SparsityPlan(0.5, start_ratio=0.7)
        with pytest.raises(ValueError):
            SparsityPlan(layer_ratios=[0.1, 0.5]).finals(3)

    def test_per_layer_ratios(self):
        net = build_network(BLOB_ARCH)
        plan = SparsityPlan(layer_ratios=[0.5, 0.0], total_epochs=0)
        _, budgets = model_budgets(net, plan, 0)
        assert budgets == [24, 24]


class TestThreshold:
    def test_example(self):
        net = toy_pair(0.3, -0.7)
        masks = threshold_model(net, [1])
        np.testing.assert_array_equal(net.layers[0].weight, [[0.0], [-0.7]])
        np.testing.assert_array_equal(masks[0], [[False], [True]])

    def test_sort_oracle(self):
        rng = np.random.default_rng(0)
        net = build_network({"input_shape": [50], "classes": 20, "layers": [
            {"kind": "fully_connected", "units": 20}, {"kind": "softmax"}]}, seed=1)
        w0 = rng.standard_normal((20, 50))
        net.layers[0].weight[...] = w0
        threshold_model(net, [137])
        cutoff = np.sort(np.abs(w0).ravel())[::-1][136]
        expected = np.where(np.abs(w0) >= cutoff, w0, 0.0)
        np.testing.assert_array_equal(net.layers[0].weight, expected)

    def test_bias_untouched(self):
        net = build_network(BLOB_ARCH, seed=2)
        net.layers[0].bias[...] = 1.0
        threshold_model(net, [1, 1])
        assert np.all(net.layers[0].bias == 1.0)
        assert nonzero_counts(net) == [1, 1]

    def test_budget_count_mismatch(self):
        with pytest.raises(ValueError):
            threshold_model(build_network(BLOB_ARCH), [3])

    def test_random_threshold(self):
        a, b = build_network(BLOB_ARCH, seed=3), build_network(BLOB_ARCH, seed=3)
        ma = random_threshold_model(a, [10, 5], seed=7)
        mb = random_threshold_model(b, [10, 5], seed=7)
        for x, y in zip(ma, mb):
            np.testing.assert_array_equal(x, y)
        assert [int(m.sum()) for m in ma] == [10, 5]
        assert nonzero_counts(a) == [10, 5]


class TestChangeRatio:
    def test_identical(self):
        m = np.array([True, False, True])
        assert change_ratio([m], [m]) == ([0.0], 0.0)

    def test_disjoint(self):
        a = np.array([True, True, False, False])
        assert change_ratio([a], [~a])[0] == [1.0]

    def test_half(self):
        a = np.array([True, True, False, False])
        b = np.array([True, False, True, False])
        assert change_ratio([a], [b])[0] == [0.5]

    def test_global_is_size_weighted(self):
        small = (np.array([True, False]), np.array([False, True]))
        big = (np.ones(6, bool), np.ones(6, bool))
        per, agg = change_ratio([small[0], big[0]], [small[1], big[1]])
        assert per == [1.0, 0.0]
        assert agg == pytest.approx(2 / 8)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            change_ratio([np.ones(3, bool)], [np.ones(4, bool)])


class TestMaskedTraining:
    def test_masked_matches_closed_form(self):
        # w1 pinned at 0, so loss = -log sigmoid(w0) and w0 <- w0 + lr * (1 - sigmoid(w0))
        lr = 0.5
        net = toy_pair(0.2, 0.0)
        cfg = TrainConfig(s1=1, s2=1, momentum=0.0, weight_decay=0.0, batch_size=1, learning_rate=lr)
        opt = OptimizerState.for_model(net, lr, 0.0)
        mask = [np.array([[True], [False]])]
        x, y = np.ones((1, 1)), np.array([0])
        finetune_masked(net, mask, 5, x, y, opt, np.random.default_rng(0), cfg)
        w0 = 0.2
        for _ in range(5):
            w0 += lr * (1 - sigmoid(w0))
        assert net.layers[0].weight[0, 0] == pytest.approx(w0, abs=1e-12)
        assert net.layers[0].weight[1, 0] == 0.0

    def test_restored_matches_two_dimensional_descent(self):
        lr = 0.5
        net = toy_pair(0.2, 0.0)
        cfg = TrainConfig(s1=1, s2=1, momentum=0.0, weight_decay=0.0, batch_size=1, learning_rate=lr)
        opt = OptimizerState.for_model(net, lr, 0.0)
        restore_and_train(net, 4, np.ones((1, 1)), np.array([0]), opt, np.random.default_rng(0), cfg)
        w0, w1 = 0.2, 0.0
        for _ in range(4):
            p1 = sigmoid(w1 - w0)
            w0, w1 = w0 + lr * p1, w1 - lr * p1
        np.testing.assert_allclose(net.layers[0].weight.ravel(), [w0, w1], atol=1e-12)
        assert w1 != 0.0

    def test_all_false_mask_keeps_layer_zero(self):
        train, _ = blobs()
        net = build_network(BLOB_ARCH, seed=0)
        net.layers[2].weight[...] = 0.0
        masks = [np.ones((8, 6), bool), np.zeros((3, 8), bool)]
        cfg = small_cfg()
        opt = OptimizerState.for_model(net, cfg.learning_rate, cfg.momentum)
        finetune_masked(net, masks, 2, train.images, train.labels, opt, np.random.default_rng(0), cfg)
        assert not np.any(net.layers[2].weight)
        assert not np.any(opt.velocity[2])

    def test_rejects_weights_outside_mask(self):
        net = toy_pair(1.0, 1.0)
        cfg = TrainConfig()
        opt = OptimizerState.for_model(net, 0.1, 0.0)
        with pytest.raises(ValueError, match="outside its mask"):
            finetune_masked(net, [np.array([[True], [False]])], 1, np.ones((1, 1)), [0], opt, None, cfg)


class TestRunIht:
    @pytest.mark.parametrize("ratio", [0.25, 0.5, 0.9])
    def test_cardinality_contract(self, ratio):
        train, test = blobs()
        net = build_network(BLOB_ARCH, seed=1)
        res = run_iht(net, small_cfg(), SparsityPlan(ratio), train.images, train.labels, (test.images, test.labels))
        final_k = [budget_for(ratio, w.size) for w in net.weights()]
        assert res.budgets == final_k
        assert all(n <= k for n, k in zip(nonzero_counts(net), final_k))
        for c in res.cycles:
            assert all(n <= k for n, k in zip(c.nonzeros_after_finetune, c.budgets))

    def test_epoch_layout(self):
        train, _ = blobs()
        cfg = small_cfg(s1=2, s2=3, cycle_count=3)
        res = run_iht(build_network(BLOB_ARCH), cfg, SparsityPlan(0.5), train.images, train.labels)
        assert len(res.epochs) == cfg.total_epochs == 15
        assert [c.epoch for c in res.cycles] == [2, 7, 12]
        phases = [e.phase for e in res.epochs]
        assert phases == ["init"] * 2 + ["phase1"] * 3 + (["phase2"] * 2 + ["phase1"] * 3) * 2
        assert [e.epoch for e in res.epochs] == list(range(1, 16))

    def test_progressive_ratios(self):
        train, _ = blobs()
        res = run_iht(build_network(BLOB_ARCH), small_cfg(), SparsityPlan(0.8), train.images, train.labels)
        np.testing.assert_allclose([c.ratio[0] for c in res.cycles], [0.4, 0.6, 0.8])

    def test_change_ratios_recorded(self):
        train, _ = blobs()
        res = run_iht(build_network(BLOB_ARCH), small_cfg(), SparsityPlan(0.5), train.images, train.labels)
        assert res.cycles[0].change_ratio is None
        for c in res.cycles[1:]:
            assert 0 <= c.change_ratio_global <= 1
            assert all(0 <= r <= 1 for r in c.change_ratio)

    def test_zero_ratio_is_dense_training(self):
        train, test = blobs()
        cfg = small_cfg()
        a, b = build_network(BLOB_ARCH, seed=4), build_network(BLOB_ARCH, seed=4)
        run_iht(a, cfg, SparsityPlan(0.0), train.images, train.labels, (test.images, test.labels))
        train_dense(b, cfg, train.images, train.labels, test=(test.images, test.labels))
        for p, q in zip(a.parameters(), b.parameters()):
            assert p.tobytes() == q.tobytes()

    def test_deterministic(self):
        train, _ = blobs()
        runs = []
        for _ in range(2):
            net = build_network(BLOB_ARCH, seed=5)
            res = run_iht(net, small_cfg(), SparsityPlan(0.5), train.images, train.labels)
            runs.append((net, res))
        for p, q in zip(runs[0][0].parameters(), runs[1][0].parameters()):
            assert p.tobytes() == q.tobytes()
        assert [e.train_loss for e in runs[0][1].epochs] == [e.train_loss for e in runs[1][1].epochs]

    def test_learns_blobs(self):
        train, test = blobs()
        net = build_network(BLOB_ARCH, seed=0)
        res = run_iht(net, small_cfg(), SparsityPlan(0.5), train.images, train.labels, (test.images, test.labels))
        assert res.epochs[-1].test_acc >= 0.9

    def test_random_mode_respects_budgets(self):
        train, _ = blobs()
        net = build_network(BLOB_ARCH, seed=0)
        res = run_iht(net, small_cfg(thresholding_mode="random"), SparsityPlan(0.5), train.images, train.labels)
        assert all(n <= k for n, k in zip(nonzero_counts(net), res.budgets))

    def test_divergence_carries_metrics(self):
        train, _ = blobs()
        cfg = small_cfg(learning_rate=1e4, momentum=0.99)
        with pytest.raises(DivergenceError) as info:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                run_iht(build_network(BLOB_ARCH), cfg, SparsityPlan(0.5), train.images * 100, train.labels)
        err = info.value
        assert err.phase in ("init", "phase1", "phase2")
        assert "diverged" in str(err)
        assert isinstance(err.metrics, list) and isinstance(err.epochs, list)

    def test_config_validation(self):
        with pytest.raises(ValueError):
            TrainConfig(s1=0)
        with pytest.raises(ValueError):
            TrainConfig(thresholding_mode="soft")


class TestFlip:
    def test_always(self):
        out = flip_horizontal(np.array([[[1, 2], [3, 4]]]), 1.0, np.random.default_rng(0))
        np.testing.assert_array_equal(out[0], [[2, 1], [4, 3]])

    def test_never(self):
        x = np.random.default_rng(0).standard_normal((4, 3, 3))
        np.testing.assert_array_equal(flip_horizontal(x, 0.0, np.random.default_rng(0)), x)

    def test_flat_rejected(self):
        with pytest.raises(ValueError):
            flip_horizontal(np.zeros((3, 4)), 0.5, np.random.default_rng(0))
