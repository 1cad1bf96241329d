"""
Ablation report: metrics CSV to an HTML page of bar charts.
"""
import logging
from pathlib import Path
from typing import Sequence

import pandas as pd
import plotly.graph_objects as go
from plotly.subplots import make_subplots

logger = logging.getLogger(__name__)

CSV_COLUMNS = ['scenario_id', 'config', 'coll', 'road', 'accel', 'dist_m', 'runtime_ms_mean', 'solver_fail_count']
AGGREGATE_ID = 'MEAN'
METRICS = ('coll', 'road', 'accel', 'dist_m', 'solver_fail_count')
METRIC_TITLES = {
    'coll': 'Collisions per scenario',
    'road': 'Off-road episodes',
    'accel': 'Comfort violations',
    'dist_m': 'Distance traveled (m)',
    'solver_fail_count': 'Solver fallbacks',
}


def summarize(frame: pd.DataFrame, metrics: Sequence[str] = METRICS) -> pd.DataFrame:
    """Per-config means of the per-scenario rows (aggregate rows ignored)."""
    rows = frame[frame['scenario_id'] != AGGREGATE_ID]
    return rows.groupby('config', sort=False)[list(metrics)].mean()


def build_report(frame: pd.DataFrame, title: str = 'Ablation results') -> go.Figure:
    summary = summarize(frame)
    fig = make_subplots(rows=1, cols=len(METRICS), subplot_titles=[METRIC_TITLES[m] for m in METRICS])
    for col, metric in enumerate(METRICS, start=1):
        fig.add_trace(
            go.Bar(x=list(summary.index), y=summary[metric].tolist(), name=metric, showlegend=False,
                   text=[f"{v:.3g}" for v in summary[metric]], textposition='auto'),
            row=1, col=col,
        )
    fig.update_layout(title=title, height=420, width=320 * len(METRICS), template='plotly_white')
    return fig


def write_report(csv_path: Path, out_path: Path) -> Path:
    """
    Raises:
        FileNotFoundError: CSV missing
        KeyError: CSV lacks a metrics column
    """
    frame = pd.read_csv(csv_path)
    missing = [c for c in CSV_COLUMNS if c not in frame.columns]
    if missing:
        raise KeyError(f"metrics CSV lacks column(s) {missing}")
    fig = build_report(frame, title=f"Ablation results: {Path(csv_path).name}")
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    fig.write_html(str(out_path), include_plotlyjs='cdn')
    logger.info(f"✅ Report written to {out_path}")
    return out_path
