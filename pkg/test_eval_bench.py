"""
Benchmark - Test Suite
Trajectory metrics, equivalence and report export
"""

import json
import math
import tempfile
import unittest
from pathlib import Path

import numpy as np

from decoders import DecodeResult, DecodeTrace
from eval_bench import (
    BenchConfig, BenchmarkRunner, MetricsRow, ade, check_equivalence, constant_velocity_baseline,
    fde, l2_at, metrics_row, run_benchmark,
)
from export_formats import ReportExporter, read_rows_csv, to_json
from synth_driving_data import parse_prompt, record_for_index
from tools.checkpoint_io import init_model
from tools.schema_scaffold import load_reference_layout
from tools.tiny_lm import ModelConfig

STRAIGHT = [(10.0 * t, 0.0) for t in range(1, 6)]


class TestMetrics(unittest.TestCase):
    """Test ADE, L2 and FDE"""

    def test_identical_is_zero(self):
        self.assertEqual(ade(STRAIGHT, STRAIGHT, 3), 0.0)
        self.assertEqual(ade(STRAIGHT, STRAIGHT, 5), 0.0)

    def test_lateral_offset(self):
        shifted = [(x, y + 1.0) for x, y in STRAIGHT]
        self.assertAlmostEqual(ade(shifted, STRAIGHT, 5), 1.0)
        self.assertAlmostEqual(fde(shifted, STRAIGHT), 1.0)

    def test_one_second_lag(self):
        lagging = [(x - 10.0, y) for x, y in STRAIGHT]
        self.assertAlmostEqual(ade(lagging, STRAIGHT, 3), 10.0)

    def test_horizon_uses_prefix(self):
        pred = list(STRAIGHT)
        pred[4] = (0.0, 0.0)
        self.assertEqual(ade(pred, STRAIGHT, 3), 0.0)
        self.assertAlmostEqual(ade(pred, STRAIGHT, 5), 10.0)

    def test_l2_at(self):
        pred = [(x, 2.0 * t) for t, (x, _) in enumerate(STRAIGHT, start=1)]
        self.assertAlmostEqual(l2_at(pred, STRAIGHT, 1), 2.0)
        self.assertAlmostEqual(l2_at(pred, STRAIGHT, 3), 6.0)

    def test_horizon_too_long(self):
        with self.assertRaises(ValueError):
            ade(STRAIGHT[:2], STRAIGHT[:2], 3)

    def test_constant_velocity_baseline(self):
        record = record_for_index(0, 3)
        v0 = parse_prompt(record.prompt).v0
        self.assertEqual(constant_velocity_baseline(record.prompt), [(v0 * t, 0.0) for t in range(1, 6)])


class TestEquivalence(unittest.TestCase):
    """Test token-level equivalence"""

    def test_identical(self):
        self.assertTrue(check_equivalence([1, 2, 3], [1, 2, 3]).identical)

    def test_first_mismatch(self):
        eq = check_equivalence([1, 2, 3, 4], [1, 2, 5, 4])
        self.assertFalse(eq.identical)
        self.assertEqual(eq.first_mismatch, 2)

    def test_length_difference(self):
        self.assertEqual(check_equivalence([1, 2], [1, 2, 3]).first_mismatch, 2)


class TestMetricsRow(unittest.TestCase):
    """Test per-sample rows"""

    def test_invalid_output_gives_nan_scores(self):
        result = DecodeResult(tokens=[], trace=DecodeTrace(), parsed=None, parse_error="bad")
        row = metrics_row(0, "sd", result, record_for_index(0, 0))
        self.assertFalse(row.structural_valid)
        self.assertTrue(math.isnan(row.ade_5s))

    def test_columns(self):
        columns = MetricsRow.columns()
        self.assertEqual(columns[:2], ["sample_id", "strategy"])
        self.assertIn("tok_per_step", columns)


class TestBenchmarkRunner(unittest.TestCase):
    """Test the benchmark end to end on an untrained model"""

    @classmethod
    def setUpClass(cls):
        cls.layout = load_reference_layout()
        config = ModelConfig(d_model=8, n_layers=1, n_heads=2, seed=1, init_scale=0.5, head_init_scale=0.5)
        cls.model = init_model(config, cls.layout)
        cls.records = [record_for_index(9, i) for i in range(2)]

    def test_rows_and_equivalence(self):
        report = BenchmarkRunner(self.model, self.layout, BenchConfig(strategies=["ar", "ss"])).run(self.records)
        self.assertEqual(len(report.rows), 4)
        self.assertEqual(report.strategies(), ["ar", "ss"])
        self.assertEqual(report.equivalence, {"ss_vs_ar": 0})
        for row in report.rows:
            self.assertTrue(row.structural_valid)
            if row.strategy == "ar":
                self.assertEqual(row.tok_per_step, 1.0)
                self.assertEqual(row.forward_passes, self.layout.total_len)

    def test_parallel_matches_serial(self):
        serial = BenchmarkRunner(self.model, self.layout, BenchConfig(strategies=["ss"])).run(self.records)
        parallel = BenchmarkRunner(self.model, self.layout,
                                   BenchConfig(strategies=["ss"], max_workers=2)).run(self.records)
        self.assertEqual([r.sample_id for r in parallel.rows], [0, 1])
        self.assertEqual([r.ade_5s for r in serial.rows], [r.ade_5s for r in parallel.rows])

    def test_empty_dataset(self):
        report = BenchmarkRunner(self.model, self.layout, BenchConfig(strategies=["ar"])).run([])
        self.assertEqual(report.rows, [])
        self.assertEqual(report.aggregates(), {})

    def test_aggregates_recomputable_from_csv(self):
        config = BenchConfig(strategies=["ss", "sd"])
        with tempfile.TemporaryDirectory() as tmp:
            report = run_benchmark(self.model, self.layout, self.records, config, out_dir=tmp)
            rows = read_rows_csv(Path(tmp) / "bench_rows.csv")
            summary = {r["strategy"]: r for r in read_rows_csv(Path(tmp) / "bench_summary.csv")}
            table = (Path(tmp) / "bench_summary.txt").read_text(encoding="utf-8")
        for strategy in ("ss", "sd"):
            values = [float(r["ade_5s"]) for r in rows if r["strategy"] == strategy]
            self.assertAlmostEqual(float(summary[strategy]["ade_5s_mean"]), np.mean(values), places=9)
            self.assertAlmostEqual(report.aggregates()[strategy]["ade_5s_mean"], np.mean(values), places=9)
            self.assertIn(strategy, table)


class TestReportExporter(unittest.TestCase):
    """Test plain exports"""

    def test_text_table(self):
        table = ReportExporter().format_text_table({"ar": {"samples": 2, "ade_3s_mean": 1.5}},
                                                   columns=("samples", "ade_3s_mean"), title="T")
        lines = table.splitlines()
        self.assertEqual(lines[0], "T")
        self.assertTrue(lines[1].startswith("strategy"))
        self.assertIn("1.500", lines[3])

    def test_json_written(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = ReportExporter().export_json({"a": [1.0]}, Path(tmp) / "x.json")
            self.assertTrue(path.exists())

    def test_json_non_finite_values_written_as_null(self):
        def reject(token):
            raise ValueError(f"non-standard JSON constant {token}")

        payload = {"ratio": [float("nan"), 0.5], "spread": np.array([np.inf, 1.0]), "n": np.int64(3)}
        with tempfile.TemporaryDirectory() as tmp:
            path = ReportExporter().export_json(payload, Path(tmp) / "x.json")
            data = json.loads(path.read_text(encoding="utf-8"), parse_constant=reject)
        self.assertEqual(data, {"ratio": [None, 0.5], "spread": [None, 1.0], "n": 3})
        self.assertEqual(json.loads(to_json({"v": float("-inf")}), parse_constant=reject), {"v": None})


if __name__ == "__main__":
    unittest.main(verbosity=2)
