import csv
import logging
import os
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional

import fsspec

import sddp_tsto
from sddp_tsto.utils.json_utils import read_json, write_json


logger = logging.getLogger(__name__)

COMPARISON_COLUMNS = (
    "n",
    "costs",
    "label_a",
    "label_b",
    "mean_a",
    "mean_b",
    "mean_diff",
    "frac_nonnegative",
    "passes_threshold",
)


@dataclass
class ReportConfig:
    """Aggregates comparison summaries and training results into one table."""

    summaries: List[str] = field(default_factory=list)
    results: List[str] = field(default_factory=list)
    out: str = "report.json"
    csv_out: Optional[str] = None
    """defaults to ``out`` with a .csv suffix"""


def comparison_row(summary: Dict[str, Any]) -> Dict[str, Any]:
    instance = summary.get("instance", {})
    label_a, label_b = summary["labels"]
    return {
        "n": instance.get("n"),
        "costs": instance.get("costs"),
        "label_a": label_a,
        "label_b": label_b,
        "mean_a": summary["mean_a"],
        "mean_b": summary["mean_b"],
        "mean_diff": summary["mean_diff"],
        "frac_nonnegative": summary["frac_nonnegative"],
        "passes_threshold": summary["passes_threshold"],
    }


def training_row(path: str, results: Dict[str, Any]) -> Dict[str, Any]:
    return {
        "path": path,
        "label": results.get("label"),
        "termination": results["termination"],
        "iterations": results["iterations"],
        "lower": results["lower"],
        "upper": results["upper"],
        "gap": results["gap"],
    }


def build_report(summaries: List[str], results: List[str]) -> Dict[str, Any]:
    rows = sorted(
        (comparison_row(read_json(path)) for path in summaries),
        key=lambda r: (r["n"] is None, r["n"] or 0, r["costs"] or 0.0),
    )
    training = [training_row(path, read_json(path)) for path in results]
    return {
        "comparisons": rows,
        "training": training,
        "tsto_wins": sum(1 for r in rows if r["mean_a"] > r["mean_b"]),
    }


def main(config: ReportConfig):
    report = build_report(config.summaries, config.results)
    write_json(config.out, report)

    csv_out = config.csv_out or os.path.splitext(config.out)[0] + ".csv"
    with fsspec.open(csv_out, "w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=COMPARISON_COLUMNS)
        writer.writeheader()
        for row in report["comparisons"]:
            writer.writerow(row)

    logger.info(f"Wrote report over {len(report['comparisons'])} comparisons to {config.out} and {csv_out}")


if __name__ == "__main__":
    sddp_tsto.config.main(main)()
