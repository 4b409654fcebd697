"""
Unit tests for the five classifier families and the shared model contract.
Run with: python -m pytest tests/test_models.py -v
"""

import sys
import os
sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

import tempfile
import unittest
from unittest import mock
import numpy as np


def make_dataset(features, labels, row_ids=None):
    from engines.dataset import Dataset
    features = np.asarray(features, dtype=float)
    if features.ndim == 1:
        features = features[:, None]
    n, d = features.shape
    return Dataset(
        features=features,
        labels=np.asarray(labels),
        feature_names=tuple(f"x{j}" for j in range(1, d + 1)),
        row_ids=np.arange(n) if row_ids is None else np.asarray(row_ids),
    )


def noisy_linear(n=300, d=3, seed=0):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, d))
    score = X @ np.linspace(1.0, -0.5, d) + 0.5 * rng.normal(size=n)
    return make_dataset(X, (score > 0.8).astype(int))


def blobs(n_per_class=400, seed=0):
    rng = np.random.default_rng(seed)
    X = np.vstack([rng.normal(-2.0, 0.5, size=(n_per_class, 2)), rng.normal(2.0, 0.5, size=(n_per_class, 2))])
    y = np.r_[np.zeros(n_per_class, dtype=int), np.ones(n_per_class, dtype=int)]
    return make_dataset(X, y)


class TestModelContract(unittest.TestCase):
    """Spec validation, thresholds and input checks shared by all families."""

    def _zero_logreg(self, d=3):
        from models.base import ModelSpec
        from models.logreg import LogRegModel
        return LogRegModel(ModelSpec("logreg").with_defaults(), np.zeros(d), 0.0)

    def test_unknown_family(self):
        from models.base import ModelSpec
        from utils.errors import UsageError
        with self.assertRaises(UsageError):
            ModelSpec("svm").validate()

    def test_unknown_hyperparameter(self):
        from models.base import ModelSpec
        from utils.errors import HyperparameterError
        with self.assertRaises(HyperparameterError) as ctx:
            ModelSpec("knn", {"neighbours": 3}).validate()
        self.assertEqual(ctx.exception.exit_code, 2)

    def test_out_of_range_hyperparameter(self):
        from models.base import ModelSpec
        from utils.errors import HyperparameterError
        for family, hyper in (("forest", {"n_trees": 0}), ("logreg", {"l2": -1.0}),
                              ("mlp", {"layers": []}), ("gbt", {"learning_rate": 0.0})):
            with self.assertRaises(HyperparameterError):
                ModelSpec(family, hyper).validate()

    def test_defaults_filled(self):
        from models.base import ModelSpec
        spec = ModelSpec.from_entry({"family": "knn", "k": 7}, seed=3)
        self.assertEqual(spec.hyperparameters, {"k": 7})
        mlp = ModelSpec("mlp").with_defaults()
        self.assertEqual(mlp.hyperparameters["layers"], [32, 16])

    def test_threshold_is_strict(self):
        from models.base import predict
        model = self._zero_logreg()
        X = np.ones((4, 3))
        np.testing.assert_array_equal(predict(model, X, 0.5), np.zeros(4))
        np.testing.assert_array_equal(predict(model, X, 0.4), np.ones(4))
        np.testing.assert_array_equal(predict(model, X, 1.0), np.zeros(4))

    def test_threshold_out_of_range(self):
        from models.base import predict
        from utils.errors import UsageError
        with self.assertRaises(UsageError):
            predict(self._zero_logreg(), np.ones(3), 1.5)

    def test_single_row_returns_float(self):
        from models.base import predict_proba
        self.assertIsInstance(predict_proba(self._zero_logreg(), [0.1, 0.2, 0.3]), float)
        self.assertEqual(predict_proba(self._zero_logreg(), np.zeros((5, 3))).shape, (5,))

    def test_dimension_mismatch(self):
        from models.base import predict_proba
        from utils.errors import DataValidationError
        with self.assertRaises(DataValidationError):
            predict_proba(self._zero_logreg(), np.zeros((2, 4)))

    def test_single_class_training(self):
        from models.base import ModelSpec, fit_model
        from utils.errors import DataValidationError
        ds = make_dataset(np.arange(6.0), np.zeros(6, dtype=int))
        for family in ("logreg", "forest", "gbt", "mlp"):
            with self.assertRaises(DataValidationError):
                fit_model(ModelSpec(family), ds)


class TestLogisticRegression(unittest.TestCase):

    def test_zero_weights_give_half(self):
        from models.base import ModelSpec, predict_proba
        from models.logreg import LogRegModel
        model = LogRegModel(ModelSpec("logreg").with_defaults(), np.zeros(3), 0.0)
        self.assertEqual(predict_proba(model, [4.0, -2.0, 9.0]), 0.5)

    def test_separable_line(self):
        from models.base import ModelSpec, fit_model, predict
        ds = make_dataset([-3.0, -2.0, -1.0, 1.0, 2.0, 3.0], [0, 0, 0, 1, 1, 1])
        model = fit_model(ModelSpec("logreg"), ds)
        np.testing.assert_array_equal(predict(model, ds.features), ds.labels)

    def test_gradient_matches_finite_differences(self):
        from models.logreg import logistic_loss_and_grad
        rng = np.random.default_rng(4)
        X = rng.normal(size=(20, 3))
        y = (rng.random(20) < 0.4).astype(float)
        w, b, l2, h = rng.normal(size=3), 0.3, 0.1, 1e-6
        _, grad_w, grad_b = logistic_loss_and_grad(w, b, X, y, l2)

        def rel(a, n):
            return abs(a - n) / max(1e-6, abs(a) + abs(n))

        for j in range(3):
            step = np.zeros(3)
            step[j] = h
            up = logistic_loss_and_grad(w + step, b, X, y, l2)[0]
            down = logistic_loss_and_grad(w - step, b, X, y, l2)[0]
            self.assertLessEqual(rel(grad_w[j], (up - down) / (2 * h)), 1e-6)
        up = logistic_loss_and_grad(w, b + h, X, y, l2)[0]
        down = logistic_loss_and_grad(w, b - h, X, y, l2)[0]
        self.assertLessEqual(rel(grad_b, (up - down) / (2 * h)), 1e-6)

    def test_stops_at_tolerance(self):
        from models.base import ModelSpec, fit_model
        model = fit_model(ModelSpec("logreg", {"l2": 0.1, "tol": 1e-5}), noisy_linear())
        self.assertTrue(model.converged)
        self.assertLessEqual(model.grad_norm, 1e-5)
        self.assertLess(model.n_iter, 2000)

    def test_zero_iterations(self):
        from models.base import ModelSpec, fit_model
        model = fit_model(ModelSpec("logreg", {"max_iters": 0}), noisy_linear())
        self.assertFalse(model.converged)
        np.testing.assert_array_equal(model.coefficients, np.zeros(3))


class TestRandomForest(unittest.TestCase):

    def test_pure_node_is_leaf(self):
        from models.trees import cart_fit
        tree = cart_fit(np.arange(10.0)[:, None], np.zeros(10), max_depth=5)
        self.assertTrue(tree.is_leaf)
        self.assertEqual(tree.value, 0.0)

    def test_depth_zero_is_fraud_fraction(self):
        from models.trees import cart_fit
        tree = cart_fit(np.arange(8.0)[:, None], np.array([0, 0, 0, 1, 0, 1, 0, 0]), max_depth=0)
        self.assertTrue(tree.is_leaf)
        self.assertEqual(tree.value, 0.25)

    def test_single_tree_forest_equals_cart(self):
        from models.base import ModelSpec, fit_model
        from models.trees import cart_fit
        ds = noisy_linear(d=4)
        spec = ModelSpec("forest", {"n_trees": 1, "bootstrap": False, "features_per_split": 4, "max_depth": 6})
        forest = fit_model(spec, ds)
        tree = cart_fit(ds.features, ds.labels, max_depth=6, min_leaf=1, features_per_split=4)
        self.assertEqual(forest.trees[0].to_dict(), tree.to_dict())

    def test_probability_is_mean_of_trees(self):
        from models.base import ModelSpec, fit_model, predict_proba
        ds = noisy_linear()
        forest = fit_model(ModelSpec("forest", {"n_trees": 9, "max_depth": 5}, seed=2), ds)
        X = np.random.default_rng(1).normal(size=(50, 3))
        np.testing.assert_allclose(predict_proba(forest, X), forest.tree_predictions(X).mean(axis=0),
                                   rtol=0, atol=1e-12)

    def test_depth_limit(self):
        from models.base import ModelSpec, fit_model
        forest = fit_model(ModelSpec("forest", {"n_trees": 5, "max_depth": 3}), noisy_linear())
        self.assertTrue(all(t.depth <= 3 for t in forest.trees))

    def test_thread_count_does_not_change_forest(self):
        from models.base import ModelSpec, fit_model
        ds = noisy_linear()
        spec = ModelSpec("forest", {"n_trees": 8, "max_depth": 5}, seed=11)
        one = fit_model(spec, ds, threads=1)
        four = fit_model(spec, ds, threads=4)
        self.assertEqual(one.to_params(), four.to_params())

    def test_seed_changes_forest(self):
        from models.base import ModelSpec, fit_model
        ds = noisy_linear()
        a = fit_model(ModelSpec("forest", {"n_trees": 4, "max_depth": 5}, seed=1), ds)
        b = fit_model(ModelSpec("forest", {"n_trees": 4, "max_depth": 5}, seed=2), ds)
        self.assertNotEqual(a.to_params(), b.to_params())


class TestGradientBoosting(unittest.TestCase):

    def test_zero_rounds_predicts_prevalence(self):
        from models.base import ModelSpec, fit_model, predict_proba
        ds = noisy_linear()
        model = fit_model(ModelSpec("gbt", {"n_rounds": 0}), ds)
        prevalence = ds.labels.mean()
        np.testing.assert_allclose(predict_proba(model, ds.features), prevalence, rtol=0, atol=1e-12)

    def test_one_round_hand_computed(self):
        from models.base import ModelSpec, fit_model
        ds = make_dataset([1.0, 2.0, 3.0, 4.0], [0, 0, 1, 1])
        spec = ModelSpec("gbt", {"n_rounds": 1, "max_depth": 1, "lambda_l2": 1.0,
                                 "min_child_weight": 0.0, "learning_rate": 1.0})
        model = fit_model(spec, ds)
        self.assertEqual(model.base_score, 0.0)
        tree = model.trees[0]
        self.assertEqual(tree.feature, 0)
        self.assertEqual(tree.threshold, 2.5)
        self.assertAlmostEqual(tree.left.value, -2.0 / 3.0, places=12)
        self.assertAlmostEqual(tree.right.value, 2.0 / 3.0, places=12)

    def test_training_loss_non_increasing(self):
        from models.base import ModelSpec, fit_model
        from engines.dataset import generate_synthetic
        from utils.config import SyntheticSpec
        ds = generate_synthetic(SyntheticSpec(n_majority=600, n_minority=60, dimensions=4))
        model = fit_model(ModelSpec("gbt", {"n_rounds": 50}), ds)
        losses = np.array(model.train_loss)
        self.assertEqual(losses.size, 51)
        self.assertTrue(np.all(np.diff(losses) <= 1e-12))

    def test_large_penalty_stays_near_prevalence(self):
        from models.base import ModelSpec, fit_model, predict_proba
        ds = noisy_linear()
        model = fit_model(ModelSpec("gbt", {"n_rounds": 10, "lambda_l2": 1e12}), ds)
        np.testing.assert_allclose(predict_proba(model, ds.features), ds.labels.mean(), rtol=0, atol=1e-6)

    def test_learns_signal(self):
        from models.base import ModelSpec, fit_model, predict
        ds = blobs(150)
        model = fit_model(ModelSpec("gbt", {"n_rounds": 20}), ds)
        self.assertGreaterEqual((predict(model, ds.features) == ds.labels).mean(), 0.99)


class TestNearestNeighbours(unittest.TestCase):

    def test_fraction_of_neighbour_labels(self):
        from models.base import ModelSpec, fit_model, predict_proba
        ds = make_dataset([0.1, 0.2, 0.3, 0.4, 0.5, 10.0, 11.0], [1, 1, 1, 0, 0, 1, 0])
        model = fit_model(ModelSpec("knn", {"k": 5}), ds)
        self.assertAlmostEqual(predict_proba(model, [0.0]), 0.6, places=12)

    def test_k_equals_training_size(self):
        from models.base import ModelSpec, fit_model, predict_proba
        ds = noisy_linear(n=40)
        model = fit_model(ModelSpec("knn", {"k": 40}), ds)
        np.testing.assert_allclose(predict_proba(model, np.zeros((3, 3))), ds.labels.mean())

    def test_k_above_training_size(self):
        from models.base import ModelSpec, fit_model
        from utils.errors import HyperparameterError
        with self.assertRaises(HyperparameterError):
            fit_model(ModelSpec("knn", {"k": 41}), noisy_linear(n=40))

    def test_training_point_with_k_one(self):
        from models.base import ModelSpec, fit_model, predict
        ds = noisy_linear(n=50)
        model = fit_model(ModelSpec("knn", {"k": 1}), ds)
        np.testing.assert_array_equal(predict(model, ds.features), ds.labels)

    def test_matches_brute_force_with_ties(self):
        from models.base import ModelSpec, fit_model
        rng = np.random.default_rng(21)
        X = rng.integers(0, 4, size=(60, 2)).astype(float)
        y = rng.integers(0, 2, size=60)
        ids = rng.permutation(1000)[:60]
        model = fit_model(ModelSpec("knn", {"k": 7}), make_dataset(X, y, row_ids=ids))
        queries = rng.integers(0, 4, size=(200, 2)).astype(float)
        found = model.row_ids[model.neighbors(queries)]
        label_of = dict(zip(ids.tolist(), y.tolist()))
        for q, got in zip(queries, found):
            ranked = sorted(zip(((X - q) ** 2).sum(axis=1).tolist(), ids.tolist()))
            expected = [rid for _, rid in ranked[:7]]
            self.assertEqual(got.tolist(), expected)
        proba = model._proba(queries)
        for p, got in zip(proba, found):
            self.assertAlmostEqual(p, np.mean([label_of[int(r)] for r in got]), places=12)


class TestMultilayerPerceptron(unittest.TestCase):

    @staticmethod
    def _perturb(params, layer, slot, index, delta):
        copied = [(W.copy(), b.copy()) for W, b in params]
        target = copied[layer][slot]
        target[index] += delta
        return copied

    def test_gradients_match_finite_differences(self):
        from models.mlp import init_params, mlp_loss_and_grads
        rng = np.random.default_rng(8)
        h = 1e-5
        for sizes in ([3, 4, 1], [2, 5, 3, 1], [4, 3, 3, 2, 1]):
            params = [(W, rng.normal(0.0, 0.1, size=b.shape)) for W, b in init_params(sizes, rng)]
            X = rng.normal(size=(10, sizes[0]))
            y = rng.integers(0, 2, size=10).astype(float)
            _, grads = mlp_loss_and_grads(params, X, y)
            for layer, (W, b) in enumerate(params):
                for slot, arr in enumerate((W, b)):
                    for index in np.ndindex(arr.shape):
                        up = mlp_loss_and_grads(self._perturb(params, layer, slot, index, h), X, y)[0]
                        down = mlp_loss_and_grads(self._perturb(params, layer, slot, index, -h), X, y)[0]
                        numeric = (up - down) / (2 * h)
                        analytic = grads[layer][slot][index]
                        err = abs(analytic - numeric) / max(1e-6, abs(analytic) + abs(numeric))
                        self.assertLessEqual(err, 1e-4, f"layers {sizes}, param {layer}/{slot}{index}")

    def test_zero_epochs_keeps_initialisation(self):
        from models.base import ModelSpec, fit_model, predict_proba
        from models.mlp import forward, init_params
        from utils.helpers import make_rng, open_unit_interval, sigmoid
        ds = noisy_linear()
        model = fit_model(ModelSpec("mlp", {"epochs": 0, "batch_size": 32}, seed=5), ds)
        self.assertEqual(model.history, [])
        expected = init_params([3, 32, 16, 1], make_rng(5, "mlp", "init"))
        reference = open_unit_interval(sigmoid(forward(expected, ds.features)[0]))
        np.testing.assert_array_equal(predict_proba(model, ds.features), reference)

    def test_separable_blobs(self):
        from models.base import ModelSpec, fit_model, predict
        ds = blobs()
        spec = ModelSpec("mlp", {"epochs": 30, "batch_size": 32, "learning_rate": 0.01}, seed=1)
        model = fit_model(spec, ds)
        self.assertGreaterEqual((predict(model, ds.features) == ds.labels).mean(), 0.99)
        self.assertEqual(len(model.history), 30)
        self.assertEqual(set(model.history[0]), {"epoch", "train_loss", "val_loss"})

    def test_non_finite_loss_aborts(self):
        from models.base import ModelSpec, fit_model
        from utils.errors import TrainingDivergedError
        with mock.patch("models.mlp.mlp_loss_and_grads", return_value=(float("nan"), None)):
            with self.assertRaises(TrainingDivergedError) as ctx:
                fit_model(ModelSpec("mlp", {"batch_size": 16}), noisy_linear())
        self.assertIn("epoch 1, batch 1", str(ctx.exception))
        self.assertEqual(ctx.exception.exit_code, 5)

    def test_batch_larger_than_training_rows(self):
        from models.base import ModelSpec, fit_model
        from utils.errors import HyperparameterError
        with self.assertRaises(HyperparameterError):
            fit_model(ModelSpec("mlp", {"batch_size": 1000}), noisy_linear(n=100))

    def test_batch_clamped_to_available_rows(self):
        from models.base import ModelSpec, adapt_spec_to_rows
        ds = make_dataset(np.arange(100.0), np.r_[np.zeros(90, dtype=int), np.ones(10, dtype=int)])
        spec, note = adapt_spec_to_rows(ModelSpec("mlp"), ds)
        self.assertEqual(spec.hyperparameters["batch_size"], 84)
        self.assertIn("batch_size", note)
        untouched, none = adapt_spec_to_rows(ModelSpec("knn"), ds)
        self.assertIsNone(none)
        self.assertEqual(untouched.hyperparameters, {"k": 5})


class TestModelDocuments(unittest.TestCase):
    """save_model / load_model."""

    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()

    def tearDown(self):
        self.tmp.cleanup()

    def test_every_family_round_trips(self):
        from models.base import ModelSpec, fit_model, load_model, predict_proba, save_model
        ds = noisy_linear(n=120)
        X = np.random.default_rng(3).normal(size=(30, 3))
        specs = [
            ModelSpec("logreg"),
            ModelSpec("forest", {"n_trees": 5, "max_depth": 4}),
            ModelSpec("gbt", {"n_rounds": 5}),
            ModelSpec("knn", {"k": 3}),
            ModelSpec("mlp", {"epochs": 2, "batch_size": 16}),
        ]
        for spec in specs:
            model = fit_model(spec, ds)
            path = os.path.join(self.tmp.name, f"{spec.family}.json")
            save_model(model, path)
            loaded, scaler = load_model(path)
            self.assertIsNone(scaler)
            self.assertEqual(loaded.family, spec.family)
            np.testing.assert_array_equal(predict_proba(loaded, X), predict_proba(model, X))

    def test_scaler_travels_with_model(self):
        from engines.dataset import fit_robust_scaler
        from models.base import ModelSpec, fit_model, load_model, save_model
        ds = noisy_linear()
        scaler = fit_robust_scaler(ds, ["x1", "x2"])
        path = os.path.join(self.tmp.name, "m.json")
        save_model(fit_model(ModelSpec("logreg"), ds), path, scaler=scaler)
        _, loaded = load_model(path)
        self.assertEqual(loaded, scaler)

    def test_same_seed_same_bytes(self):
        from models.base import ModelSpec, fit_model, save_model
        ds = noisy_linear()
        spec = ModelSpec("forest", {"n_trees": 3, "max_depth": 4}, seed=6)
        paths = [os.path.join(self.tmp.name, f"{i}.json") for i in range(2)]
        for path in paths:
            save_model(fit_model(spec, ds), path)
        with open(paths[0], "rb") as a, open(paths[1], "rb") as b:
            self.assertEqual(a.read(), b.read())

    def test_rejects_foreign_documents(self):
        from models.base import load_model
        from utils.errors import DataError, DataValidationError
        path = os.path.join(self.tmp.name, "other.json")
        with open(path, "w") as fh:
            fh.write('{"format": "something-else", "version": 1}')
        with self.assertRaises(DataValidationError):
            load_model(path)
        with self.assertRaises(DataError):
            load_model(os.path.join(self.tmp.name, "missing.json"))


if __name__ == "__main__":
    unittest.main()
