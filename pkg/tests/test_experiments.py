"""
Unit tests for the four experiments, the leakage guards and the report writer.
Run with: python -m pytest tests/test_experiments.py -v
"""

import sys
import os
sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

import copy
import dataclasses
import json
import tempfile
import unittest
from unittest import mock
import numpy as np


def small_config(**overrides):
    from utils.config import ExperimentConfig, SweepSettings, SyntheticSpec
    settings = dict(
        synthetic=SyntheticSpec(n_majority=1_500, n_minority=60, dimensions=4, class_separation=4.0),
        models=[{"family": "logreg"}, {"family": "knn", "k": 3},
                {"family": "forest", "n_trees": 5, "max_depth": 5}],
        sweep=SweepSettings(ratios=[0.1, 0.2, 0.3], multiplier=2.0),
        threads=1,
    )
    settings.update(overrides)
    return ExperimentConfig(**settings)


def distribution_row(result, subset):
    table = result.distribution.set_index("Subset")
    row = table.loc[subset]
    return int(row["Class 0 (Non-Fraud)"]), int(row["Class 1 (Fraud)"])


class TestBaselineExperiment(unittest.TestCase):

    def test_one_report_per_model(self):
        from engines.experiments import ORIGINAL_TEST, run_experiment
        result = run_experiment("baseline", small_config())
        self.assertEqual(result.models, ["logreg", "knn", "forest"])
        self.assertEqual(result.splits, [ORIGINAL_TEST])
        self.assertEqual(distribution_row(result, "Original Train"), (1_125, 45))
        self.assertEqual(distribution_row(result, "Original Test"), (375, 15))
        for report in result.reports:
            self.assertEqual(report.dataset["rows"], 390)
            self.assertIsNone(report.sampling)

    def test_rerun_is_identical(self):
        from engines.experiments import run_experiment
        a = run_experiment("baseline", small_config())
        b = run_experiment("baseline", small_config())
        self.assertEqual(a.to_dict(), b.to_dict())

    def test_thread_count_does_not_change_results(self):
        from engines.experiments import run_experiment
        serial = run_experiment("baseline", small_config(threads=1))
        parallel = run_experiment("baseline", small_config(threads=3))
        self.assertEqual(serial.to_dict(), parallel.to_dict())

    def test_summary_box(self):
        from engines.experiments import run_experiment
        text = run_experiment("baseline", small_config()).summary()
        self.assertIn("EXPERIMENT: BASELINE", text)
        self.assertIn("Logistic Regression", text)

    def test_unknown_experiment(self):
        from engines.experiments import run_experiment
        from utils.errors import UsageError
        with self.assertRaises(UsageError):
            run_experiment("oversample", small_config())

    def test_invalid_config(self):
        from engines.experiments import run_experiment
        from utils.errors import ConfigError
        with self.assertRaises(ConfigError):
            run_experiment("baseline", small_config(split_fraction=1.5))


class TestResamplingExperiments(unittest.TestCase):

    def test_undersampling_splits(self):
        from engines.experiments import BALANCED_TEST, ORIGINAL_TEST, run_experiment
        result = run_experiment("undersample", small_config())
        self.assertEqual(distribution_row(result, "Undersampled Pool"), (60, 60))
        train = distribution_row(result, "Undersampled Train")
        test = distribution_row(result, "Undersampled Test")
        self.assertEqual(sum(train), 90)
        self.assertEqual(sum(test), 30)
        imbalanced = distribution_row(result, "Original Test")
        self.assertEqual(imbalanced, (375, test[1]))
        for model in result.models:
            self.assertEqual([r.split for r in result.reports_for(model=model)], [BALANCED_TEST, ORIGINAL_TEST])
            self.assertEqual(result.reports_for(model=model)[0].sampling["kind"], "undersample")

    def test_imbalanced_test_excludes_pool_training_rows(self):
        from engines.dataset import generate_synthetic, random_split
        from engines.experiments import imbalanced_test_for_pool
        from engines.resampling import undersample
        from utils.config import SyntheticSpec
        ds = generate_synthetic(SyntheticSpec(n_majority=2_000, n_minority=40, dimensions=3))
        pool = undersample(ds, 40, seed=1)
        pool_train, pool_test = random_split(pool, 0.25, seed=2)
        test = imbalanced_test_for_pool(ds, pool, pool_test, 0.25, seed=3)
        self.assertEqual(np.intersect1d(test.row_ids, pool_train.row_ids).size, 0)
        self.assertTrue(np.isin(pool_test.row_ids, test.row_ids).all())
        self.assertEqual(test.class_counts(), (500, pool_test.class_counts()[1]))

    def test_smote_splits(self):
        from engines.experiments import BALANCED_TEST, ORIGINAL_TEST, run_experiment
        result = run_experiment("smote", small_config())
        self.assertEqual(distribution_row(result, "SMOTE Train"), (1_125, 1_125))
        self.assertEqual(distribution_row(result, "SMOTE Test"), (375, 375))
        for model in result.models:
            reports = result.reports_for(model=model)
            self.assertEqual([r.split for r in reports], [ORIGINAL_TEST, BALANCED_TEST])
            self.assertEqual(reports[0].dataset["rows"], 390)
            self.assertEqual(reports[1].dataset["rows"], 750)

    def test_hybrid_selects_from_grid(self):
        from engines.experiments import ORIGINAL_TEST, VALIDATION, run_experiment
        result = run_experiment("hybrid", small_config())
        self.assertEqual(set(result.selected_ratios), {"logreg", "knn", "forest"})
        for family, ratio in result.selected_ratios.items():
            self.assertIn(ratio, (0.1, 0.2, 0.3))
            self.assertEqual(result.sweeps[family].eval_split, VALIDATION)
            self.assertEqual(len(result.sweeps[family].points), 3)
        self.assertEqual(result.splits, [ORIGINAL_TEST])
        self.assertEqual(len(result.comparison), 12)
        self.assertEqual({row["Metric"] for row in result.comparison},
                         {"Precision", "Recall", "F1-Score", "Accuracy"})

    def test_hybrid_paper_protocol_sweeps_on_test(self):
        from engines.experiments import ORIGINAL_TEST, run_experiment
        from utils.config import SweepSettings
        config = small_config(models=[{"family": "logreg"}],
                              sweep=SweepSettings(ratios=[0.1, 0.3], multiplier=2.0, paper_protocol=True))
        result = run_experiment("hybrid", config)
        self.assertEqual(result.sweeps["logreg"].eval_split, ORIGINAL_TEST)

    def test_sweep_only(self):
        from engines.experiments import run_sweep
        from utils.errors import UsageError
        result = run_sweep(small_config(), "logreg")
        self.assertEqual(list(result.sweeps), ["logreg"])
        self.assertEqual(result.reports, [])
        with self.assertRaises(UsageError):
            run_sweep(small_config(), "mlp")


class TestLeakageGuards(unittest.TestCase):

    def test_overlapping_split_is_caught(self):
        from engines.experiments import run_baseline
        from utils.errors import LeakageError
        with mock.patch("engines.experiments._master_split", side_effect=lambda ds, config: (ds, ds)):
            with self.assertRaises(LeakageError):
                run_baseline(small_config())

    def test_guards(self):
        from engines.dataset import generate_synthetic, fit_robust_scaler
        from engines.experiments import assert_disjoint, assert_no_synthetic, assert_scaler_provenance
        from engines.resampling import smote
        from utils.config import SyntheticSpec
        from utils.errors import LeakageError
        ds = generate_synthetic(SyntheticSpec(n_majority=100, n_minority=10, dimensions=2))
        half = ds.select(ds.row_ids[:50])
        with self.assertRaises(LeakageError):
            assert_disjoint(ds, half)
        with self.assertRaises(LeakageError):
            assert_no_synthetic(smote(ds, 20, k=3, seed=0))
        with self.assertRaises(LeakageError):
            assert_scaler_provenance(fit_robust_scaler(ds, ["x1"]), half)
        assert_no_synthetic(ds)
        assert_scaler_provenance(fit_robust_scaler(half, ["x1"]), half)


class TestReportWriter(unittest.TestCase):

    @classmethod
    def setUpClass(cls):
        from engines.experiments import run_experiment
        cls.smote_result = run_experiment("smote", small_config())
        cls.hybrid_result = run_experiment("hybrid", small_config(models=[{"family": "logreg"}]))

    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.root = self.tmp.name

    def tearDown(self):
        self.tmp.cleanup()

    def _read(self, *parts):
        with open(os.path.join(*parts), "r", encoding="utf-8") as fh:
            return fh.read()

    def test_layout_and_manifest(self):
        from engines.reports import emit_reports
        from utils.helpers import sha256_file
        out = os.path.join(self.root, "a")
        written = emit_reports(self.smote_result, out, ["json", "csv", "markdown", "svg"])
        self.assertEqual(written[-1], "manifest.json")
        for rel in ("reports/smote/logreg.json", "reports/smote/knn.csv", "reports/smote/forest.md",
                    "reports/smote/logreg.svg", "reports/smote/summary.md", "reports/smote/summary.csv",
                    "reports/smote/class_distribution.csv"):
            self.assertIn(rel, written)
            self.assertTrue(os.path.exists(os.path.join(out, rel)))

        manifest = json.loads(self._read(out, "manifest.json"))
        self.assertEqual(manifest["format"], "fraudlab-manifest")
        paths = [a["path"] for a in manifest["artifacts"]]
        self.assertEqual(paths, sorted(written[:-1]))
        for artifact in manifest["artifacts"]:
            self.assertEqual(artifact["sha256"], sha256_file(os.path.join(out, artifact["path"])))

    def test_summary_column_order(self):
        from engines.reports import emit_reports
        emit_reports(self.smote_result, self.root, ["csv", "markdown"])
        markdown = self._read(self.root, "reports", "smote", "summary.md")
        self.assertIn("| Model | Precision | Recall | F1-Score | Accuracy |", markdown)
        header = self._read(self.root, "reports", "smote", "summary.csv").splitlines()[0]
        self.assertEqual(header, "Split,Model,Precision,Recall,F1-Score,Accuracy")

    def test_model_document(self):
        from engines.reports import emit_reports
        emit_reports(self.smote_result, self.root, ["json"])
        doc = json.loads(self._read(self.root, "reports", "smote", "logreg.json"))
        self.assertEqual(doc["display_name"], "Logistic Regression")
        self.assertEqual([r["split"] for r in doc["reports"]], ["original_test", "balanced_test"])
        self.assertIn("content_hash", doc["reports"][0]["dataset"])

    def test_hybrid_artifacts(self):
        from engines.reports import emit_reports
        written = emit_reports(self.hybrid_result, self.root, ["csv", "markdown", "svg", "html"])
        for rel in ("sweeps/logreg.csv", "sweeps/logreg.svg", "reports/hybrid/comparison.csv",
                    "reports/hybrid/comparison.md", "charts/hybrid_metrics.html",
                    "charts/hybrid_sweep_logreg.html", "charts/hybrid_comparison.html"):
            self.assertIn(rel, written)
        self.assertIn("<polyline", self._read(self.root, "sweeps", "logreg.svg"))
        self.assertIn("fraudlab-hybrid-metrics", self._read(self.root, "charts", "hybrid_metrics.html"))

    def test_metrics_chart_compares_all_four_metrics(self):
        from engines.reports import metrics_figure
        fig = metrics_figure(self.smote_result)
        names = [trace.name for trace in fig.data]
        self.assertEqual(len(names), 4 * len(self.smote_result.splits))
        for split in self.smote_result.splits:
            for label in ("Precision", "Recall", "F1", "Accuracy"):
                self.assertIn(f"{label} ({split})", names)
        accuracy = next(t for t in fig.data if t.name.startswith("Accuracy"))
        self.assertEqual(len(accuracy.y), len(self.smote_result.models))

    def test_empty_format_set_writes_manifest_only(self):
        from engines.reports import emit_reports
        self.assertEqual(emit_reports(self.smote_result, self.root, []), ["manifest.json"])
        self.assertEqual(os.listdir(self.root), ["manifest.json"])

    def test_identical_result_identical_manifest(self):
        from engines.reports import emit_reports
        a, b, c = (os.path.join(self.root, name) for name in "abc")
        formats = ["json", "csv", "markdown", "svg"]
        emit_reports(self.smote_result, a, formats)
        emit_reports(self.smote_result, b, formats)
        self.assertEqual(self._read(a, "manifest.json"), self._read(b, "manifest.json"))

        changed = copy.deepcopy(self.smote_result)
        changed.reports[0] = dataclasses.replace(changed.reports[0], threshold=0.7)
        emit_reports(changed, c, formats)
        self.assertNotEqual(self._read(a, "manifest.json"), self._read(c, "manifest.json"))

    def test_unknown_format(self):
        from engines.reports import emit_reports
        from utils.errors import UsageError
        with self.assertRaises(UsageError):
            emit_reports(self.smote_result, self.root, ["pdf"])

    def test_unwritable_output(self):
        from engines.reports import emit_reports
        from utils.errors import OutputError
        blocker = os.path.join(self.root, "blocker")
        with open(blocker, "w") as fh:
            fh.write("x")
        with self.assertRaises(OutputError) as ctx:
            emit_reports(self.smote_result, os.path.join(blocker, "out"), ["json"])
        self.assertEqual(ctx.exception.exit_code, 3)


class TestDirectionalSynthetic(unittest.TestCase):
    """Qualitative outcomes on a 0.5%-fraud synthetic set with moderate separation."""

    @classmethod
    def setUpClass(cls):
        from engines.dataset import generate_synthetic
        from engines.experiments import run_experiment
        from utils.config import ExperimentConfig, SweepSettings, SyntheticSpec
        cls.config = ExperimentConfig(
            synthetic=SyntheticSpec(n_majority=19_900, n_minority=100, dimensions=10, class_separation=4.0),
            models=[{"family": "logreg"}, {"family": "forest", "n_trees": 25},
                    {"family": "gbt"}, {"family": "knn"}, {"family": "mlp", "batch_size": 32}],
            sweep=SweepSettings(ratios=[0.02, 0.05, 0.1, 0.2], multiplier=2.0),
            threads=2,
        )
        ds = generate_synthetic(cls.config.synthetic)
        cls.baseline = run_experiment("baseline", cls.config, ds)
        cls.undersample = run_experiment("undersample", cls.config, ds)
        cls.hybrid = run_experiment("hybrid", cls.config, ds)

    def _metric(self, result, model, attr):
        from engines.experiments import ORIGINAL_TEST
        (report,) = result.reports_for(model=model, split=ORIGINAL_TEST)
        return getattr(report.class_1, attr)

    def test_undersampling_trades_precision_for_recall(self):
        models = self.baseline.models
        self.assertEqual(len(models), 5)
        for model in models:
            if "precision" in self._metric(self.baseline, model, "degenerate"):
                continue
            self.assertLess(self._metric(self.undersample, model, "precision"),
                            self._metric(self.baseline, model, "precision"), model)

    def test_undersampling_raises_recall_for_every_model(self):
        for model in self.baseline.models:
            self.assertGreater(self._metric(self.undersample, model, "recall"),
                               self._metric(self.baseline, model, "recall"), model)

    def test_mlp_learns_at_this_scale(self):
        for result in (self.baseline, self.undersample, self.hybrid):
            self.assertGreater(self._metric(result, "mlp", "recall"), 0.0, result.name)

    def test_hybrid_keeps_or_raises_recall(self):
        for model in ("logreg", "mlp"):
            self.assertGreaterEqual(self._metric(self.hybrid, model, "recall"),
                                    self._metric(self.baseline, model, "recall"), model)

    def test_hybrid_f1_close_to_or_above_baseline_for_every_model(self):
        for model in self.baseline.models:
            self.assertGreaterEqual(self._metric(self.hybrid, model, "f1"),
                                    self._metric(self.baseline, model, "f1") - 0.05, model)


if __name__ == "__main__":
    unittest.main()
