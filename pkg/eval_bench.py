"""
eval_bench.py
Trajectory metrics, equivalence checking and the decoding benchmark
"""

import concurrent.futures
import math
import time
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Dict, List, Literal, Optional, Sequence, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from decoders import DecodeConfig, DecodeResult, make_decoder
from decoders.base_decoder import Strategy
from export_formats import ReportExporter
from synth_driving_data import parse_prompt
from tools import console
from tools.schema_scaffold import DrivingRecord, ScaffoldLayout
from tools.tiny_lm import TinyLM

STRATEGIES = ("ar", "sd", "selfspec", "ss")


# ==================== METRICS ====================

def _as_points(waypoints) -> np.ndarray:
    return np.asarray(waypoints, dtype=np.float64).reshape(-1, 2)


def ade(pred, gt, horizon_s: float) -> float:
    """Mean Euclidean distance over 1 Hz waypoints with t <= horizon_s"""
    pred, gt = _as_points(pred), _as_points(gt)
    count = int(math.floor(horizon_s + 1e-9))
    if count < 1 or len(pred) < count or len(gt) < count:
        raise ValueError(f"need at least {count} waypoints for horizon {horizon_s}s")
    return float(np.linalg.norm(pred[:count] - gt[:count], axis=1).mean())


def l2_at(pred, gt, t_s: float) -> float:
    """Euclidean distance at the 1 Hz waypoint nearest t_s"""
    pred, gt = _as_points(pred), _as_points(gt)
    times = np.arange(1, len(gt) + 1)
    i = int(np.argmin(np.abs(times - t_s)))
    return float(np.linalg.norm(pred[i] - gt[i]))


def fde(pred, gt) -> float:
    pred, gt = _as_points(pred), _as_points(gt)
    return float(np.linalg.norm(pred[-1] - gt[-1]))


def constant_velocity_baseline(prompt: str, horizon_s: int = 5) -> List[tuple]:
    """Straight-ahead extrapolation at the prompt's initial speed"""
    v0 = parse_prompt(prompt).v0
    return [(v0 * t, 0.0) for t in range(1, horizon_s + 1)]


@dataclass
class Equivalence:
    identical: bool
    first_mismatch: Optional[int] = None


def check_equivalence(result_a: Union[DecodeResult, Sequence[int]],
                      result_b: Union[DecodeResult, Sequence[int]]) -> Equivalence:
    a = result_a.tokens if isinstance(result_a, DecodeResult) else list(result_a)
    b = result_b.tokens if isinstance(result_b, DecodeResult) else list(result_b)
    for i, (x, y) in enumerate(zip(a, b)):
        if x != y:
            return Equivalence(False, i)
    if len(a) != len(b):
        return Equivalence(False, min(len(a), len(b)))
    return Equivalence(True)


# ==================== BENCHMARK ====================

class BenchConfig(BaseModel):
    """Benchmark settings"""
    model_config = ConfigDict(extra="forbid")

    strategies: List[Strategy] = Field(default_factory=lambda: list(STRATEGIES))
    block_size: int = Field(default=32, ge=1)
    tau: float = Field(default=0.9, gt=0.0, le=1.0)
    sd_commit: Literal["bidirectional", "causal"] = "bidirectional"
    max_samples: int = Field(default=500, ge=0)
    max_workers: int = Field(default=1, ge=1)
    seed: Optional[int] = None


@dataclass
class MetricsRow:
    sample_id: int
    strategy: str
    ade_3s: float
    ade_5s: float
    l2_1s: float
    l2_2s: float
    l2_3s: float
    fde: float
    structural_valid: bool
    forward_passes: int
    tok_per_step: float
    anchor_miss: int
    wall_time: float

    @classmethod
    def columns(cls) -> List[str]:
        return [f.name for f in fields(cls)]


METRIC_COLUMNS = ("ade_3s", "ade_5s", "l2_1s", "l2_2s", "l2_3s", "fde",
                  "forward_passes", "tok_per_step", "wall_time")


@dataclass
class BenchReport:
    rows: List[MetricsRow] = field(default_factory=list)
    equivalence: Dict[str, int] = field(default_factory=dict)
    elapsed_time: float = 0.0

    def strategies(self) -> List[str]:
        seen = []
        for row in self.rows:
            if row.strategy not in seen:
                seen.append(row.strategy)
        return seen

    def aggregates(self) -> Dict[str, Dict[str, float]]:
        """Per-strategy mean/median of every metric column, plus validity rate"""
        out = {}
        for strategy in self.strategies():
            rows = [r for r in self.rows if r.strategy == strategy]
            agg = {"samples": len(rows),
                   "structural_valid_rate": sum(r.structural_valid for r in rows) / len(rows)}
            for col in METRIC_COLUMNS:
                values = np.array([getattr(r, col) for r in rows], dtype=np.float64)
                values = values[np.isfinite(values)]
                agg[f"{col}_mean"] = float(values.mean()) if len(values) else float("nan")
                agg[f"{col}_median"] = float(np.median(values)) if len(values) else float("nan")
            out[strategy] = agg
        return out


def metrics_row(sample_id: int, strategy: str, result: DecodeResult, gt: DrivingRecord) -> MetricsRow:
    nan = float("nan")
    if result.parsed is not None:
        pred = result.parsed.waypoints
        scores = dict(
            ade_3s=ade(pred, gt.waypoints, 3), ade_5s=ade(pred, gt.waypoints, 5),
            l2_1s=l2_at(pred, gt.waypoints, 1), l2_2s=l2_at(pred, gt.waypoints, 2),
            l2_3s=l2_at(pred, gt.waypoints, 3), fde=fde(pred, gt.waypoints),
        )
    else:
        scores = dict(ade_3s=nan, ade_5s=nan, l2_1s=nan, l2_2s=nan, l2_3s=nan, fde=nan)
    trace = result.trace
    return MetricsRow(
        sample_id=sample_id,
        strategy=strategy,
        structural_valid=result.structural_valid,
        forward_passes=trace.total_passes,
        tok_per_step=trace.tok_per_step,
        anchor_miss=trace.anchor_miss,
        wall_time=trace.wall_time,
        **scores,
    )


class BenchmarkRunner:
    """
    Decode a set of records with every requested strategy

    Samples may run in parallel worker threads over the shared read-only
    parameters; rows are always assembled in sample-id order.
    """

    def __init__(self, model: TinyLM, layout: ScaffoldLayout, config: BenchConfig = BenchConfig()):
        self.model = model
        self.layout = layout
        self.config = config
        self.decoders = {
            s: make_decoder(model, layout, DecodeConfig(
                strategy=s, block_size=config.block_size, tau=config.tau,
                sd_commit=config.sd_commit, seed=config.seed))
            for s in config.strategies
        }

    def _process_single_sample(self, sample_id: int, record: DrivingRecord) -> Dict:
        prompt_ids = self.layout.vocab.encode_prompt(record.prompt)
        results = {s: dec.decode(prompt_ids) for s, dec in self.decoders.items()}
        rows = [metrics_row(sample_id, s, res, record) for s, res in results.items()]
        mismatches = {}
        if "ar" in results:
            for other in ("ss", "selfspec"):
                if other in results:
                    mismatches[f"{other}_vs_ar"] = not check_equivalence(results[other], results["ar"]).identical
        return {"sample_id": sample_id, "rows": rows, "mismatches": mismatches}

    def _process_parallel(self, records: Sequence[DrivingRecord]) -> List[Dict]:
        results = []
        with concurrent.futures.ThreadPoolExecutor(max_workers=self.config.max_workers) as executor:
            futures = [executor.submit(self._process_single_sample, i, r) for i, r in enumerate(records)]
            for future in console.progress(concurrent.futures.as_completed(futures), desc="bench", total=len(futures)):
                results.append(future.result())
        return results

    def run(self, records: Sequence[DrivingRecord]) -> BenchReport:
        records = list(records)[:self.config.max_samples]
        console.step(f"Benchmarking {len(records)} samples x {len(self.decoders)} strategies")
        start = time.perf_counter()
        if self.config.max_workers > 1:
            results = self._process_parallel(records)
        else:
            results = [self._process_single_sample(i, r)
                       for i, r in console.progress(enumerate(records), desc="bench", total=len(records))]
        results.sort(key=lambda r: r["sample_id"])

        report = BenchReport(elapsed_time=time.perf_counter() - start)
        for r in results:
            report.rows.extend(r["rows"])
            for key, mismatch in r["mismatches"].items():
                report.equivalence[key] = report.equivalence.get(key, 0) + int(mismatch)
        return report


def run_benchmark(model: TinyLM, layout: ScaffoldLayout, records: Sequence[DrivingRecord],
                  config: BenchConfig = BenchConfig(), out_dir=None) -> BenchReport:
    """Benchmark and, when out_dir is given, write rows/summary CSV and a text table"""
    report = BenchmarkRunner(model, layout, config).run(records)
    if out_dir is not None:
        ReportExporter().export_all(report, Path(out_dir))
    return report

