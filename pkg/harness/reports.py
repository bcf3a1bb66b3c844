"""Report files written after a run.

Layout of ``out_dir``:

    results.jsonl                       one line per question and report
    summary.json                        every report's aggregates
    summary.csv                         one row per report
    plotdata/voting_consistency.csv     consistency histogram per report
    plotdata/nupr.csv                   mean NUPR@k per report
    plotdata/consistency_by_outcome.csv baseline vs voting correctness per consistency bin

Floats carry 6 significant digits and keys are sorted, so identical inputs
give identical bytes.
"""
import json
import logging
import math
from pathlib import Path
from typing import Dict, List, Sequence

import pandas as pd

from core.exceptions import DomainError
from harness.methods import METHOD_BASELINE, MethodReport

logger = logging.getLogger(__name__)

SUMMARY_COLUMNS = ["label", "method", "accuracy", "mean_steps", "mean_samples", "bpc", "questions", "skipped"]

OUTCOME_BOTH = "both_correct"
OUTCOME_BASELINE_ONLY = "baseline_only"
OUTCOME_VOTING_ONLY = "voting_only"
OUTCOME_NEITHER = "neither"


def fixed(value):
    """Round floats to 6 significant digits, recursively; infinities become "inf"."""
    if isinstance(value, bool) or value is None:
        return value
    if isinstance(value, float):
        if math.isinf(value):
            return "inf" if value > 0 else "-inf"
        return float(f"{value:.6g}")
    if isinstance(value, dict):
        return {str(k): fixed(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [fixed(v) for v in value]
    return value


def _write_csv(rows: List[dict], columns: List[str], path: Path) -> None:
    frame = pd.DataFrame([fixed(row) for row in rows], columns=columns)
    frame.to_csv(path, index=False, lineterminator="\n", encoding="utf-8")


def outcome_breakdown(reports: Sequence[MethodReport]) -> List[dict]:
    """Correctness of each voting report against the baseline, per consistency bin of the voting run."""
    baseline = next((r for r in reports if r.method == METHOD_BASELINE), None)
    if baseline is None:
        return []
    base_correct = {o.task_id: o.correct for o in baseline.outcomes}
    rows = []
    for report in reports:
        if report.method == METHOD_BASELINE:
            continue
        counts: Dict[tuple, int] = {}
        for outcome in report.outcomes:
            if outcome.task_id not in base_correct:
                continue
            base, voted = base_correct[outcome.task_id], outcome.correct
            if base and voted:
                category = OUTCOME_BOTH
            elif base:
                category = OUTCOME_BASELINE_ONLY
            elif voted:
                category = OUTCOME_VOTING_ONLY
            else:
                category = OUTCOME_NEITHER
            key = (outcome.consistency_bin, category)
            counts[key] = counts.get(key, 0) + 1
        for (bin_label, category), count in sorted(counts.items()):
            rows.append({"label": report.label, "bin": bin_label, "outcome": category, "count": count})
    return rows


def emit_report(reports: Sequence[MethodReport], out_dir) -> List[Path]:
    """Write every report file under ``out_dir`` and return their paths."""
    if not reports:
        raise DomainError("emit_report needs at least one report")
    out_dir = Path(out_dir)
    plot_dir = out_dir / "plotdata"
    plot_dir.mkdir(parents=True, exist_ok=True)
    ordered = sorted(reports, key=lambda r: r.label)

    results_path = out_dir / "results.jsonl"
    records = [o.to_record() for r in ordered for o in sorted(r.outcomes, key=lambda o: o.task_id)]
    with results_path.open("w", encoding="utf-8", newline="\n") as handle:
        for record in records:
            handle.write(json.dumps(fixed(record), sort_keys=True) + "\n")

    summary_path = out_dir / "summary.json"
    summary = {"reports": [fixed(r.summary()) for r in ordered]}
    summary_path.write_text(json.dumps(summary, sort_keys=True, indent=2) + "\n", encoding="utf-8")

    summary_csv = out_dir / "summary.csv"
    _write_csv([{c: r.summary()[c] for c in SUMMARY_COLUMNS} for r in ordered], SUMMARY_COLUMNS, summary_csv)

    histogram_csv = plot_dir / "voting_consistency.csv"
    _write_csv(
        [
            {"label": r.label, "bin": bin_label, "count": count}
            for r in ordered
            for bin_label, count in sorted(r.consistency_histogram.items())
        ],
        ["label", "bin", "count"],
        histogram_csv,
    )

    nupr_csv = plot_dir / "nupr.csv"
    _write_csv(
        [{"label": r.label, "k": int(k), "nupr": value} for r in ordered for k, value in sorted(r.nupr.items(), key=lambda item: int(item[0]))],
        ["label", "k", "nupr"],
        nupr_csv,
    )

    written = [results_path, summary_path, summary_csv, histogram_csv, nupr_csv]
    breakdown = outcome_breakdown(ordered)
    if breakdown:
        outcome_csv = plot_dir / "consistency_by_outcome.csv"
        _write_csv(breakdown, ["label", "bin", "outcome", "count"], outcome_csv)
        written.append(outcome_csv)

    logger.info("wrote %d report files to %s", len(written), out_dir)
    return written
