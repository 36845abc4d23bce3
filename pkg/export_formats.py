"""
export_formats.py
Export benchmark and scaling reports to CSV, JSON and text tables
"""

import csv
import json
import math
from dataclasses import asdict, is_dataclass
from pathlib import Path
from typing import Dict, List, Sequence

import numpy as np

from tools import console


def to_plain(value):
    """JSON-ready copy: dataclasses and numpy scalars unpacked, NaN and inf as null"""
    if is_dataclass(value) and not isinstance(value, type):
        value = asdict(value)
    if isinstance(value, dict):
        return {str(k): to_plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple, np.ndarray)):
        return [to_plain(v) for v in value]
    if isinstance(value, np.generic):
        value = value.item()
    if isinstance(value, float) and not math.isfinite(value):
        return None
    return value


def to_json(payload, indent: int = 2) -> str:
    return json.dumps(to_plain(payload), indent=indent, allow_nan=False)


class ReportExporter:
    """
    Export reports to plain formats

    Supports:
    - per-sample rows as CSV (fixed column order)
    - per-strategy summary as CSV
    - human-readable text table
    - JSON documents (decode traces, check verdicts)
    """

    def export_rows_csv(self, rows: Sequence, output_path) -> Path:
        output_path = Path(output_path)
        output_path.parent.mkdir(parents=True, exist_ok=True)
        dict_rows = [asdict(r) if is_dataclass(r) else dict(r) for r in rows]
        columns = list(dict_rows[0]) if dict_rows else []
        with open(output_path, "w", newline="", encoding="utf-8") as f:
            writer = csv.DictWriter(f, fieldnames=columns)
            writer.writeheader()
            writer.writerows(dict_rows)
        console.ok(f"Rows saved: {output_path}")
        return output_path

    def export_summary_csv(self, aggregates: Dict[str, Dict[str, float]], output_path) -> Path:
        output_path = Path(output_path)
        output_path.parent.mkdir(parents=True, exist_ok=True)
        columns = ["strategy"]
        for agg in aggregates.values():
            columns += [k for k in agg if k not in columns]
        with open(output_path, "w", newline="", encoding="utf-8") as f:
            writer = csv.DictWriter(f, fieldnames=columns)
            writer.writeheader()
            for strategy, agg in aggregates.items():
                writer.writerow({"strategy": strategy, **agg})
        console.ok(f"Summary saved: {output_path}")
        return output_path

    def format_text_table(self, aggregates: Dict[str, Dict[str, float]],
                          columns: Sequence[str] = ("samples", "structural_valid_rate", "ade_3s_mean",
                                                    "ade_5s_mean", "l2_1s_mean", "l2_2s_mean", "l2_3s_mean",
                                                    "fde_mean", "forward_passes_mean", "tok_per_step_mean",
                                                    "wall_time_mean"),
                          title: str = "") -> str:
        """Fixed-width table, one row per strategy"""
        header = ["strategy"] + [c.replace("_mean", "") for c in columns]
        body = []
        for strategy, agg in aggregates.items():
            cells = [strategy]
            for col in columns:
                value = agg.get(col, float("nan"))
                cells.append(f"{value:.3f}" if isinstance(value, float) else str(value))
            body.append(cells)
        widths = [max(len(r[i]) for r in [header] + body) for i in range(len(header))]
        lines = []
        if title:
            lines.append(title)
        lines.append("  ".join(h.ljust(w) for h, w in zip(header, widths)))
        lines.append("  ".join("-" * w for w in widths))
        for cells in body:
            lines.append("  ".join(c.ljust(w) for c, w in zip(cells, widths)))
        return "\n".join(lines) + "\n"

    def export_json(self, payload, output_path) -> Path:
        output_path = Path(output_path)
        output_path.parent.mkdir(parents=True, exist_ok=True)
        with open(output_path, "w", encoding="utf-8") as f:
            f.write(to_json(payload))
        console.ok(f"JSON saved: {output_path}")
        return output_path

    def export_all(self, report, output_dir) -> Dict[str, Path]:
        """Rows CSV, summary CSV, text table and equivalence JSON for a BenchReport"""
        output_dir = Path(output_dir)
        aggregates = report.aggregates()
        table_path = output_dir / "bench_summary.txt"
        table_path.parent.mkdir(parents=True, exist_ok=True)
        table_path.write_text(self.format_text_table(aggregates, title="Decoding benchmark"), encoding="utf-8")
        return {
            "rows": self.export_rows_csv(report.rows, output_dir / "bench_rows.csv"),
            "summary": self.export_summary_csv(aggregates, output_dir / "bench_summary.csv"),
            "table": table_path,
            "equivalence": self.export_json(report.equivalence, output_dir / "equivalence.json"),
        }


def read_rows_csv(path) -> List[Dict[str, str]]:
    with open(path, "r", newline="", encoding="utf-8") as f:
        return list(csv.DictReader(f))
