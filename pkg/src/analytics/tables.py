# src/analytics/tables.py

from __future__ import annotations

import json
import math
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Union

import pandas as pd

from src.analytics.metrics import MetricsReport
from src.transfer.iist import IistTrace
from src.workflows.iist_constants import COMPARISON_COLUMNS, TRACE_FIELDS

PathLike = Union[str, Path]


def _json_value(value: Any) -> Any:
    """NaN / missing -> null so every trace line is valid JSON."""
    if value is None:
        return None
    if isinstance(value, float) and not math.isfinite(value):
        return None
    if hasattr(value, "item"):
        return value.item()
    return value


def trace_frame(trace: IistTrace) -> pd.DataFrame:
    """
    One row per stage:
        k, inner_iterations, loss, content_term, style_term, diff_to_prev
    diff_to_prev is NaN for stage 0.
    """
    rows = trace.to_dicts()
    if not rows:
        return pd.DataFrame(columns=TRACE_FIELDS)
    df = pd.DataFrame(rows, columns=TRACE_FIELDS)
    df["diff_to_prev"] = df["diff_to_prev"].astype(float)
    return df


def trace_lines(trace: IistTrace) -> List[str]:
    out: List[str] = []
    for record in trace.to_dicts():
        out.append(json.dumps({k: _json_value(record[k]) for k in TRACE_FIELDS}))
    return out


def write_trace_jsonl(trace: IistTrace, path: PathLike) -> Path:
    """Write the trace as JSON lines, one stage per line."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = trace_lines(trace)
    path.write_text("\n".join(lines) + ("\n" if lines else ""), encoding="utf-8")
    return path


def read_trace_jsonl(path: PathLike) -> pd.DataFrame:
    text = Path(path).read_text(encoding="utf-8").strip()
    if not text:
        return pd.DataFrame(columns=TRACE_FIELDS)
    return pd.read_json(path, lines=True)[TRACE_FIELDS]


def metrics_row(
    report: MetricsReport,
    *,
    variant: str,
    pooling: str = "",
    content_layer: str = "",
    lambda_c: Optional[float] = None,
    stages: Optional[int] = None,
) -> Dict[str, Any]:
    """
    One comparison-table row. Ra/Rp/Rr/Ka are percentages, like the
    'Ra,Rp,Rr,Ka' CSV line.
    """
    return {
        "variant": variant,
        "pooling": pooling,
        "content_layer": content_layer,
        "lambda_c": lambda_c,
        "Ra": round(100.0 * report.Ra, 2),
        "Rp": round(100.0 * report.Rp, 2),
        "Rr": round(100.0 * report.Rr, 2),
        "Ka": round(100.0 * report.Ka, 2),
        "stages": stages,
    }


def comparison_frame(rows: Sequence[Dict[str, Any]]) -> pd.DataFrame:
    """Rows in the fixed column order; stages kept as a nullable integer."""
    df = pd.DataFrame(list(rows), columns=COMPARISON_COLUMNS)
    df["stages"] = df["stages"].astype("Int64")
    return df


def write_comparison_csv(df: pd.DataFrame, path: PathLike) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    df.to_csv(path, index=False, float_format="%.6g")
    return path
