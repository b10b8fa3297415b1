import numpy as np
import pytest

from bemap.config import ExperimentConfig
from bemap.errors import ValidationError
from bemap.graph import Graph, generate_biased, generate_gilbert, make_splits
from bemap.model import (
    GcnParams,
    adam_step,
    extract_embeddings,
    forward,
    init_params,
    load_checkpoint,
    loss_and_grads,
    predict_proba,
    save_checkpoint,
)
from bemap.sampling import compute_balance_table, full_epoch_graph, sample_epoch_graph
from bemap.training import train


def numeric_grads(params, eg, x, y, mask, wd, eps=1e-5):
    out = []
    for l, w in enumerate(params.weights):
        g = np.zeros_like(w)
        for idx in np.ndindex(*w.shape):
            for sign in (1, -1):
                ws = [v.copy() for v in params.weights]
                ws[l][idx] += sign * eps
                p = GcnParams(tuple(ws), params.activation, params.message_passing)
                g[idx] += sign * loss_and_grads(p, eg, x, y, mask, wd)[0]
        out.append(g / (2 * eps))
    return out


def small_instance(rng, n=10, f=4, hidden=5, activation="relu", norm="row", mlp=False, mode="bemap"):
    g = generate_gilbert(n, 0.35, seed=int(rng.integers(1 << 30)), feature_dim=f)
    labels = rng.integers(0, 2, n)
    g = Graph(g.indptr, g.indices, g.features, g.sensitive, labels, 2)
    bt = compute_balance_table(g)
    eg = sample_epoch_graph(g, bt, mode, 0.25, norm, rng)
    params = init_params(f, hidden, 2, 2, activation, not mlp, rng)
    mask = np.sort(rng.choice(n, size=n // 2, replace=False))
    return g, eg, params, mask


def max_rel_err(a, b):
    return float(np.max(np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), 1e-8)))


class TestForward:
    def test_edgeless_identity(self):
        x = np.random.default_rng(0).standard_normal((5, 3))
        g = Graph.from_edges(5, [], x, [0, 1, 0, 1, 0])
        params = GcnParams((np.eye(3), np.eye(3)[:, :2]), "linear")
        np.testing.assert_array_equal(forward(params, full_epoch_graph(g), x).logits, x[:, :2])

    def test_four_cycle_hand_oracle(self):
        g = Graph.from_edges(4, [(0, 1), (1, 2), (2, 3), (3, 0)], None, [0, 1, 0, 1])
        x = np.array([[1.0], [2.0], [3.0], [4.0]])
        params = GcnParams((np.eye(1), np.eye(1)), "linear")
        fw = forward(params, full_epoch_graph(g, "row"), x)
        # node 0 averages itself with nodes 1 and 3
        np.testing.assert_allclose(fw.aggregated[0].ravel(), [7 / 3, 6 / 3, 9 / 3, 8 / 3])
        sym = forward(params, full_epoch_graph(g, "symmetric"), x)
        # all degrees are 2, so symmetric weights 1/(sqrt3 sqrt3) equal the row weights
        np.testing.assert_allclose(sym.aggregated[0], fw.aggregated[0], rtol=1e-15)

    def test_mlp_ignores_edges(self):
        rng = np.random.default_rng(1)
        g, _, _, _ = small_instance(rng)
        params = init_params(4, 6, 2, 2, "relu", False, rng)
        a = forward(params, full_epoch_graph(g), g.features).logits
        other = generate_gilbert(10, 0.8, seed=9)
        b = forward(params, full_epoch_graph(other), g.features).logits
        np.testing.assert_array_equal(a, b)

    def test_shape_mismatch(self):
        g = generate_gilbert(6, 0.5, seed=0, feature_dim=3)
        params = init_params(4, 5, 2, 2, rng=0)
        with pytest.raises(ValidationError):
            forward(params, full_epoch_graph(g), g.features)
        with pytest.raises(ValidationError):
            GcnParams((np.zeros((3, 4)), np.zeros((5, 2))))


class TestGradients:
    @pytest.mark.parametrize("activation", ["relu", "linear"])
    @pytest.mark.parametrize("norm", ["row", "symmetric"])
    @pytest.mark.parametrize("mlp", [False, True])
    def test_finite_differences(self, activation, norm, mlp):
        rng = np.random.default_rng(hash((activation, norm, mlp)) % (1 << 32))
        g, eg, params, mask = small_instance(rng, activation=activation, norm=norm, mlp=mlp)
        _, grads = loss_and_grads(params, eg, g.features, g.labels, mask, 1e-3)
        num = numeric_grads(params, eg, g.features, g.labels, mask, 1e-3)
        for a, b in zip(grads, num):
            assert max_rel_err(a, b) <= 1e-5

    def test_three_layers(self):
        rng = np.random.default_rng(5)
        g, eg, _, mask = small_instance(rng)
        params = init_params(4, 3, 2, 3, "relu", True, rng)
        _, grads = loss_and_grads(params, eg, g.features, g.labels, mask)
        for a, b in zip(grads, numeric_grads(params, eg, g.features, g.labels, mask, 0.0)):
            assert max_rel_err(a, b) <= 1e-5

    def test_zero_weights_give_ln2(self):
        rng = np.random.default_rng(2)
        g, eg, params, mask = small_instance(rng)
        zero = GcnParams(tuple(np.zeros_like(w) for w in params.weights))
        loss, _ = loss_and_grads(zero, eg, g.features, g.labels, mask)
        assert loss == pytest.approx(np.log(2), abs=1e-15)

    def test_duplicated_training_nodes(self):
        rng = np.random.default_rng(3)
        g, eg, params, mask = small_instance(rng)
        a, ga = loss_and_grads(params, eg, g.features, g.labels, mask)
        b, gb = loss_and_grads(params, eg, g.features, g.labels, np.repeat(mask, 2))
        assert a == pytest.approx(b, rel=1e-14)
        for u, v in zip(ga, gb):
            np.testing.assert_allclose(u, v, rtol=1e-12, atol=1e-15)

    def test_bool_mask_equals_index_mask(self):
        rng = np.random.default_rng(4)
        g, eg, params, mask = small_instance(rng)
        bmask = np.zeros(g.n, dtype=bool)
        bmask[mask] = True
        assert loss_and_grads(params, eg, g.features, g.labels, bmask)[0] == \
            loss_and_grads(params, eg, g.features, g.labels, mask)[0]

    def test_empty_mask(self):
        rng = np.random.default_rng(4)
        g, eg, params, _ = small_instance(rng)
        with pytest.raises(ValidationError):
            loss_and_grads(params, eg, g.features, g.labels, np.array([], dtype=int))


class TestAdam:
    def test_zero_grad_keeps_params(self):
        params = init_params(3, 4, rng=0)
        new = adam_step(params, [np.zeros_like(w) for w in params.weights])
        for a, b in zip(params.weights, new.weights):
            np.testing.assert_array_equal(a, b)
        assert new.step == 1

    @pytest.mark.parametrize("scale", [1e-6, 1.0, 1e6])
    def test_first_step_is_signed_lr(self, scale):
        params = init_params(3, 4, rng=0)
        rng = np.random.default_rng(1)
        grads = [scale * rng.standard_normal(w.shape) for w in params.weights]
        new = adam_step(params, grads, lr=1e-3)
        for w0, w1, g in zip(params.weights, new.weights, grads):
            # bias-corrected moments are g and g^2, so the step is lr * g / (|g| + eps)
            np.testing.assert_allclose(w1 - w0, -1e-3 * g / (np.abs(g) + 1e-8), rtol=1e-9)
            if scale >= 1e6:
                np.testing.assert_allclose(w1 - w0, -1e-3 * np.sign(g), rtol=1e-7)

    def test_quadratic_descent(self):
        # minimize 0.5 * ||W - T||^2 with the GcnParams container
        target = np.random.default_rng(2).standard_normal((3, 2))
        params = GcnParams((np.zeros((3, 2)),), "linear")
        losses = []
        for _ in range(100):
            diff = params.weights[0] - target
            losses.append(0.5 * float((diff ** 2).sum()))
            params = adam_step(params, [diff], lr=0.01)
        assert losses[-1] < losses[0]
        assert np.all(np.diff(losses[5:]) < 0)


class TestEmbeddingsAndCheckpoints:
    def test_layer_range(self):
        rng = np.random.default_rng(0)
        g, eg, params, _ = small_instance(rng)
        assert extract_embeddings(params, eg, g.features, 1).shape == (g.n, 5)
        np.testing.assert_array_equal(extract_embeddings(params, eg, g.features, 2),
                                      forward(params, eg, g.features).logits)
        for bad in (0, 3):
            with pytest.raises(ValidationError):
                extract_embeddings(params, eg, g.features, bad)

    def test_edge_removal_changes_affected_rows(self):
        g = generate_gilbert(12, 0.4, seed=3, feature_dim=4)
        params = init_params(4, 6, 2, 2, "linear", True, 0)
        before = extract_embeddings(params, full_epoch_graph(g), g.features)
        u = int(np.argmax(g.degrees))
        v = int(g.neighbors(u)[0])
        pairs = [(a, b) for a, b in zip(g.edge_rows(), g.indices) if a < b and {a, b} != {u, v}]
        h = Graph.from_edges(g.n, pairs, g.features, g.sensitive, g.labels)
        after = extract_embeddings(params, full_epoch_graph(h), g.features)
        changed = np.flatnonzero(np.abs(after - before).max(axis=1) > 1e-12)
        np.testing.assert_array_equal(changed, sorted({u, v}))

    def test_checkpoint_round_trip(self, tmp_path):
        params = init_params(5, 7, 2, 2, "linear", False, 3)
        save_checkpoint(params, tmp_path / "m.ckpt")
        back = load_checkpoint(tmp_path / "m.ckpt")
        assert back.activation == "linear" and not back.message_passing
        for a, b in zip(params.weights, back.weights):
            np.testing.assert_array_equal(a, b)

    def test_bad_checkpoint(self, tmp_path):
        (tmp_path / "x.ckpt").write_text("hello\n")
        with pytest.raises(ValidationError):
            load_checkpoint(tmp_path / "x.ckpt")


def quick_config(**trainer):
    cfg = ExperimentConfig()
    cfg.model.hidden = 16
    cfg.trainer.epochs = trainer.get("epochs", 30)
    cfg.trainer.lr = trainer.get("lr", 1e-2)
    return cfg


class TestTraining:
    def test_deterministic_log(self):
        g = generate_biased(n=120, seed=0)
        splits = make_splits(g, seed=0)
        cfg = quick_config()
        a = train(g, splits, cfg, seed=3, mode="bemap")
        b = train(g, splits, cfg, seed=3, mode="bemap")
        assert a.log == b.log
        assert a.best_epoch == b.best_epoch

    def test_separable_data(self):
        rng = np.random.default_rng(0)
        n = 200
        y = rng.integers(0, 2, n)
        x = rng.standard_normal((n, 4))
        x[:, 0] = 3.0 * (2 * y - 1) + 0.3 * rng.standard_normal(n)
        g = Graph.from_edges(n, [], x, rng.integers(0, 2, n), y)
        splits = make_splits(g, seed=0)
        cfg = quick_config(epochs=200)
        result = train(g, splits, cfg, seed=0, mode="none")
        pred = predict_proba(result.params, result.eval_graphs[0], x).argmax(axis=1)
        assert np.mean(pred[splits.train] == y[splits.train]) >= 0.95

    def test_log_fields(self):
        g = generate_biased(n=120, seed=1)
        result = train(g, make_splits(g, seed=0), quick_config(epochs=3), seed=0, mode="uniform")
        assert [r["epoch"] for r in result.log] == [1, 2, 3]
        assert set(result.log[0]) == {"epoch", "train_loss", "val_loss", "val_acc", "val_delta_sp", "val_delta_eo"}

    def test_linear_close_to_relu(self):
        g = generate_biased(n=313, seed=2)
        splits = make_splits(g, seed=0)
        accs = {}
        for act in ("relu", "linear"):
            cfg = quick_config(epochs=150)
            cfg.model.activation = act
            r = train(g, splits, cfg, seed=0, mode="none")
            pred = r.predict_proba(g.features).argmax(axis=1)
            accs[act] = np.mean(pred[splits.test] == g.labels[splits.test])
        assert abs(accs["relu"] - accs["linear"]) <= 0.05
