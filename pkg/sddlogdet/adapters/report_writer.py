from __future__ import annotations

import json
import logging
import sys
from pathlib import Path
from typing import Any, Dict, Iterable, Optional, Union

import pandas as pd
from pydantic import BaseModel

from sddlogdet.models.reports import BenchRow

logger = logging.getLogger(__name__)

# excluded when comparing two runs of the same configuration
TIME_FIELDS = frozenset({"time_ms"})


def report_payload(report: Union[BaseModel, Dict[str, Any]]) -> Dict[str, Any]:
    return report.model_dump() if isinstance(report, BaseModel) else dict(report)


def render_report(report: Union[BaseModel, Dict[str, Any]]) -> str:
    """Flat JSON with sorted keys, so equal reports render to equal text."""
    return json.dumps(report_payload(report), indent=2, sort_keys=True, default=str)


def write_report(report: Union[BaseModel, Dict[str, Any]], out: Optional[str] = None) -> Optional[Path]:
    text = render_report(report)
    if out is None or out == "-":
        sys.stdout.write(text + "\n")
        sys.stdout.flush()
        return None
    target = Path(out)
    target.parent.mkdir(parents=True, exist_ok=True)
    target.write_text(text + "\n", encoding="utf-8")
    logger.info("Report written to %s", target)
    return target


def strip_time(payload: Dict[str, Any]) -> Dict[str, Any]:
    return {k: v for k, v in payload.items() if k not in TIME_FIELDS}


def write_bench_table(rows: Iterable[BenchRow], out: Optional[str] = None) -> pd.DataFrame:
    df = pd.DataFrame([row.as_row() for row in rows])
    if out is None or out == "-":
        df.to_csv(sys.stdout, index=False)
    else:
        target = Path(out)
        target.parent.mkdir(parents=True, exist_ok=True)
        df.to_csv(target, index=False)
        logger.info("Bench table with %d rows written to %s", len(df), target)
    return df


__all__ = ["TIME_FIELDS", "report_payload", "render_report", "write_report", "strip_time", "write_bench_table"]
