import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gridsigma import agents, evalkit, promptkit
from gridsigma.errors import GridSigmaError
from gridsigma.evalkit import (
    AS_WRONG,
    EXCLUDED,
    ConfusionCounts,
    MetricsReport,
    RunConfig,
    ablation_table,
    confusion,
    f1_from,
    lift,
    metrics,
    run_experiment,
)
from gridsigma.scenario import ANOMALY, NORMAL, zscores
from gridsigma.ruleoracle import three_sigma_label

INVALID = promptkit.INVALID


class TestConfusion:
    def test_perfect_predictions(self):
        preds = [ANOMALY, NORMAL, ANOMALY]
        counts, invalid = confusion(preds, preds)
        assert counts.fp == counts.fn == 0
        assert counts.tp == 2 and counts.tn == 1
        assert invalid == 0

    def test_invalid_as_wrong_on_true_anomaly(self):
        counts, invalid = confusion([INVALID], [ANOMALY], AS_WRONG)
        assert counts.fn == 1
        assert invalid == 1

    def test_invalid_excluded_shrinks_total(self):
        counts, invalid = confusion(
            [INVALID, ANOMALY], [ANOMALY, ANOMALY], EXCLUDED
        )
        assert counts.total == 1
        assert invalid == 1

    def test_length_mismatch(self):
        with pytest.raises(GridSigmaError):
            confusion([NORMAL], [NORMAL, NORMAL])

    def test_brute_force_recount_1000(self):
        rng = np.random.default_rng(5)
        labels = [NORMAL, ANOMALY, INVALID]
        for _ in range(1000):
            n = int(rng.integers(1, 40))
            preds = [labels[i] for i in rng.integers(0, 3, size=n)]
            truths = [labels[i] for i in rng.integers(0, 2, size=n)]
            counts, invalid = confusion(preds, truths, AS_WRONG)
            # independent recount
            tp = fp = fn = tn = inv = 0
            for p, t in zip(preds, truths):
                if p == INVALID:
                    inv += 1
                    p = NORMAL if t == ANOMALY else ANOMALY
                if t == ANOMALY and p == ANOMALY:
                    tp += 1
                elif t == ANOMALY:
                    fn += 1
                elif p == ANOMALY:
                    fp += 1
                else:
                    tn += 1
            assert (counts.tp, counts.fp, counts.fn, counts.tn) == (tp, fp, fn, tn)
            assert invalid == inv


class TestMetrics:
    def test_all_half(self):
        report = metrics(ConfusionCounts(tp=1, fp=1, fn=1, tn=1))
        assert report.accuracy == report.recall == report.precision == report.f1 == 0.5

    def test_all_one(self):
        report = metrics(ConfusionCounts(tp=5, fp=0, fn=0, tn=5))
        assert report.accuracy == report.recall == report.precision == report.f1 == 1.0

    def test_undefined_precision(self):
        report = metrics(ConfusionCounts(tp=0, fp=0, fn=3, tn=2))
        assert report.precision is None
        assert report.f1 is None
        assert report.accuracy == pytest.approx(0.4)

    def test_accuracy_identity_audit(self):
        rng = np.random.default_rng(11)
        for _ in range(200):
            c = ConfusionCounts(*[int(x) for x in rng.integers(0, 50, size=4)])
            if c.total == 0:
                continue
            report = metrics(c)
            assert report.accuracy == (c.tp + c.tn) / c.total

    def test_f1_between_precision_and_recall_1000(self):
        rng = np.random.default_rng(3)
        checked = 0
        while checked < 1000:
            c = ConfusionCounts(*[int(x) for x in rng.integers(0, 30, size=4)])
            report = metrics(c)
            if None in (report.precision, report.recall, report.f1):
                continue
            low = min(report.precision, report.recall)
            high = max(report.precision, report.recall)
            assert low - 1e-12 <= report.f1 <= high + 1e-12
            checked += 1


class TestF1From:
    def test_hybrid_row_identity(self):
        assert f1_from(0.965, 0.980) == pytest.approx(0.972, abs=0.0005)

    def test_traditional_dl_row_identity(self):
        assert f1_from(0.980, 0.803) == pytest.approx(0.883, abs=0.0005)

    def test_both_zero_undefined(self):
        assert f1_from(0.0, 0.0) is None

    @given(st.floats(min_value=0.001, max_value=1.0))
    @settings(max_examples=100, deadline=None)
    def test_harmonic_mean_of_equals(self, x):
        assert f1_from(x, x) == pytest.approx(x, rel=1e-12)

    def test_f1_lift_reproduces_published_delta(self):
        value = lift(0.972, 0.883)
        assert abs(value * 100 - 10.08) <= 0.1


class TestRunExperiment:
    def test_reference_rule_matches_oracle_rate(self, dataset42):
        run = RunConfig(paradigm="zero_shot", variant="z_only",
                        agent=agents.REFERENCE_RULE, data_dir="unused")
        report, manifest = run_experiment(run, dataset=dataset42)
        test = dataset42.split_samples("test")
        oracle_rate = np.mean(
            [
                three_sigma_label(zscores(s.features, dataset42.stats)).label
                == s.label
                for s in test
            ]
        )
        assert report.accuracy == pytest.approx(float(oracle_rate))
        for entry, sample in zip(manifest["samples"], test):
            direct = three_sigma_label(zscores(sample.features, dataset42.stats))
            assert entry["label"] == direct.label

    def test_always_normal_degenerate(self, dataset42):
        run = RunConfig(paradigm="zero_shot", variant="z_only",
                        agent=agents.ALWAYS_NORMAL, data_dir="unused")
        report, _ = run_experiment(run, dataset=dataset42)
        assert report.recall == 0.0
        assert report.accuracy == 0.5

    def test_coin_flip_deterministic(self, dataset42):
        run = RunConfig(paradigm="few_shot", variant="z_only",
                        agent=agents.COIN_FLIP, coin_seed=3, data_dir="unused")
        a, _ = run_experiment(run, dataset=dataset42)
        b, _ = run_experiment(run, dataset=dataset42)
        assert a == b

    def test_examples_excluded_and_recorded(self, dataset42):
        run = RunConfig(paradigm="icl", variant="z_only",
                        agent=agents.REFERENCE_RULE, data_dir="unused")
        report, manifest = run_experiment(run, dataset=dataset42)
        assert len(manifest["example_ids"]) == 10
        target_ids = {e["id"] for e in manifest["samples"]}
        assert not target_ids & set(manifest["example_ids"])
        assert report.counts.total == len(manifest["samples"])

    def test_manifest_written_and_stable(self, dataset42, tmp_path):
        run = RunConfig(paradigm="zero_shot", variant="value",
                        agent=agents.ALWAYS_NORMAL, data_dir="unused")
        _, m1 = run_experiment(run, dataset=dataset42, out_dir=tmp_path / "a")
        _, m2 = run_experiment(run, dataset=dataset42, out_dir=tmp_path / "b")
        a = (tmp_path / "a" / evalkit.manifest_name(run)).read_bytes()
        b = (tmp_path / "b" / evalkit.manifest_name(run)).read_bytes()
        assert a == b
        doc = json.loads(a)
        assert set(doc["metrics"]) == {AS_WRONG, EXCLUDED}
        assert doc["dataset_digest"]


class TestAblationTable:
    def _report(self, acc, rec, prec, f1):
        return MetricsReport(
            accuracy=acc, recall=rec, precision=prec, f1=f1,
            counts=ConfusionCounts(1, 1, 1, 1),
        )

    def test_zero_shot_variant_rows(self):
        rows = [
            ("Z_score", self._report(0.785, 0.645, 0.896, 0.750)),
            ("Value", self._report(0.525, 0.120, 0.632, 0.202)),
            ("Mean-Std-Value-Z", self._report(0.605, 0.795, 0.576, 0.668)),
            ("Mean-Std-Value", self._report(0.522, 0.565, 0.521, 0.542)),
        ]
        table = ablation_table(rows)
        lines = table.strip().splitlines()
        assert lines[0].split()[:2] == ["Configuration", "Accuracy"]
        body = [line.split()[0] for line in lines[2:]]
        assert body == ["Value", "Mean-Std-Value", "Mean-Std-Value-Z", "Z_score"]

    def test_five_paradigm_order(self):
        rows = [
            ("Hybrid", self._report(0.973, 0.965, 0.980, 0.972)),
            ("ICL", self._report(0.815, 0.865, 0.786, 0.824)),
            ("Zero-shot", self._report(0.785, 0.645, 0.896, 0.750)),
            ("Fine-tuned", self._report(0.805, 0.990, 0.723, 0.835)),
            ("Few-shot", self._report(0.775, 0.880, 0.727, 0.796)),
        ]
        table = ablation_table(rows)
        body = [line.split()[0] for line in table.strip().splitlines()[2:]]
        assert body == ["Zero-shot", "Few-shot", "ICL", "Fine-tuned", "Hybrid"]

    def test_lift_row_matches_published_numbers(self):
        rows = [
            ("Traditional DL", self._report(0.870, 0.980, 0.803, 0.883)),
            ("LLM + DL", self._report(0.973, 0.965, 0.980, 0.972)),
        ]
        table = ablation_table(rows, with_lift=True)
        lift_line = table.strip().splitlines()[-1]
        assert lift_line.startswith("Performance lift")
        cells = lift_line.split()
        assert cells[-1] == "10.08%"
        assert cells[-4] == "11.84%"
        assert cells[-3] == "-1.53%"

    def test_duplicate_rows_rejected(self):
        rows = [("Hybrid", self._report(1, 1, 1, 1)), ("Hybrid", self._report(1, 1, 1, 1))]
        with pytest.raises(GridSigmaError, match="duplicate"):
            ablation_table(rows)

    def test_undefined_renders_na(self):
        rows = [("Zero-shot", self._report(0.5, None, None, None))]
        table = ablation_table(rows)
        assert "n/a" in table

    def test_json_format(self):
        rows = [("Zero-shot", self._report(0.785, 0.645, 0.896, 0.750))]
        doc = json.loads(ablation_table(rows, fmt="json"))
        assert doc["rows"][0]["configuration"] == "Zero-shot"
        assert doc["rows"][0]["f1"] == 0.750

    def test_md_format(self):
        rows = [("Zero-shot", self._report(0.785, 0.645, 0.896, 0.750))]
        table = ablation_table(rows, fmt="md")
        assert table.startswith("| Configuration")
        assert "| Zero-shot" in table
