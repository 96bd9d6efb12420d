"""
Multi-seed reports from DG-MORL metrics files.

Collects every metrics.jsonl under the given run directories, aligns the
evaluation records by global step and writes:

    report.csv        step, mean, min, max, runs   (tidy, one row per step)
    report_table.csv  step, eu, plus, minus        (mean with +max/-min spread)
    runs.csv          run, step, eu                (raw per-run traces)
"""

import logging
import os
from dataclasses import dataclass, field
from typing import Dict, List, Sequence

import pandas as pd

from metrics import EVENT_EVAL, METRICS_FILENAME, read_metrics

logger = logging.getLogger(__name__)

REPORT_FILENAME = 'report.csv'
TABLE_FILENAME = 'report_table.csv'
RUNS_FILENAME = 'runs.csv'
FLOAT_FORMAT = '%.10g'


class ReportError(RuntimeError):
    pass


class MissingRuns(ReportError):
    pass


class StepMisalignment(ReportError):
    pass


@dataclass
class ReportResult:
    success: bool
    summary: pd.DataFrame
    table: pd.DataFrame
    runs: pd.DataFrame
    files: Dict[str, str] = field(default_factory=dict)


def find_metrics_files(paths: Sequence[str]) -> List[str]:
    """metrics.jsonl files under each path (a path may also be the file itself)"""
    found = []
    for path in paths:
        if os.path.isfile(path):
            found.append(path)
            continue
        for root, dirs, files in os.walk(path):
            dirs.sort()
            if METRICS_FILENAME in files:
                found.append(os.path.join(root, METRICS_FILENAME))
    return sorted(set(found))


def load_runs(paths: Sequence[str]) -> pd.DataFrame:
    """One row per evaluation record: run, step, eu"""
    files = find_metrics_files(paths)
    if not files:
        raise MissingRuns(f"No {METRICS_FILENAME} found under {list(paths)}")
    common = os.path.commonpath([os.path.dirname(f) for f in files]) if len(files) > 1 else None
    rows = []
    for path in files:
        run = os.path.relpath(os.path.dirname(path), common) if common else os.path.dirname(path)
        evals = [r for r in read_metrics(path) if r.get('type') == EVENT_EVAL]
        if not evals:
            raise MissingRuns(f"{path} holds no evaluation records (run incomplete?)")
        for record in evals:
            rows.append({'run': run, 'step': int(record['global_step']), 'eu': float(record['eu'])})
    return pd.DataFrame(rows, columns=['run', 'step', 'eu'])


def check_alignment(runs: pd.DataFrame):
    steps = runs.groupby('run')['step'].apply(tuple)
    if steps.nunique() > 1:
        detail = ', '.join(f"{run}: {list(s[:3])}..." for run, s in steps.items())
        raise StepMisalignment(f"Runs were evaluated at different steps ({detail})")


def aggregate(runs: pd.DataFrame) -> pd.DataFrame:
    check_alignment(runs)
    summary = runs.groupby('step')['eu'].agg(['mean', 'min', 'max', 'count']).reset_index()
    # summation rounding can push the mean of equal values past them
    summary['mean'] = summary['mean'].clip(lower=summary['min'], upper=summary['max'])
    return summary.rename(columns={'count': 'runs'})


def table_view(summary: pd.DataFrame) -> pd.DataFrame:
    return pd.DataFrame({
        'step': summary['step'],
        'eu': summary['mean'],
        'plus': summary['max'] - summary['mean'],
        'minus': summary['mean'] - summary['min'],
    })


def write_report(paths: Sequence[str], out_dir: str) -> ReportResult:
    runs = load_runs(paths)
    summary = aggregate(runs)
    table = table_view(summary)
    os.makedirs(out_dir, exist_ok=True)
    files = {
        'report': os.path.join(out_dir, REPORT_FILENAME),
        'table': os.path.join(out_dir, TABLE_FILENAME),
        'runs': os.path.join(out_dir, RUNS_FILENAME),
    }
    summary.to_csv(files['report'], index=False, float_format=FLOAT_FORMAT)
    table.to_csv(files['table'], index=False, float_format=FLOAT_FORMAT)
    runs.to_csv(files['runs'], index=False, float_format=FLOAT_FORMAT)
    logger.info(f"[METRICS] report over {runs['run'].nunique()} run(s), {len(summary)} step(s) -> {out_dir}")
    return ReportResult(success=True, summary=summary, table=table, runs=runs, files=files)
