"""
Report emission: JSON and CSV outputs of certification, tuning and training runs.
"""

import json
import logging
import subprocess
import sys
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

import pandas as pd
import torch

from config.settings import VERSION

logger = logging.getLogger(__name__)


def _git_revision() -> Optional[str]:
    try:
        result = subprocess.run(['git', 'rev-parse', '--short', 'HEAD'], capture_output=True, text=True,
                                check=True, cwd=Path(__file__).resolve().parent, timeout=5)
    except (OSError, subprocess.SubprocessError):
        return None
    return result.stdout.strip() or None


def version_string() -> str:
    """Package version, with the git revision appended when available (e.g. '0.3.0+1a2b3c4')."""
    revision = _git_revision()
    return f"{VERSION}+{revision}" if revision else VERSION


def provenance(command: str, config: Dict[str, Any], seed: Optional[int] = None) -> Dict[str, Any]:
    """Metadata attached to every report so a run can be reproduced."""
    return {
        'command': command,
        'version': version_string(),
        'config': config,
        'seed': seed,
        'torch': torch.__version__,
        'created_at': datetime.now(timezone.utc).isoformat(),
    }


def report_format(path: Optional[str], default: str = 'json') -> str:
    """'csv' or 'json' from the output file suffix."""
    if path and Path(path).suffix.lower() == '.csv':
        return 'csv'
    if path and Path(path).suffix.lower() == '.json':
        return 'json'
    return default


def report_to_frame(report: Dict[str, Any]) -> pd.DataFrame:
    """
    Flatten a report into rows: one 'image' row per per-image entry and a final 'aggregate' row.

    List-valued cells (regression bounds) are joined with ';'.
    """
    rows: List[Dict[str, Any]] = []
    for entry in report.get('per_image', []):
        row = {'kind': 'image'}
        for key, value in entry.items():
            if isinstance(value, (list, tuple)):
                value = ';'.join(f"{v:.6g}" if isinstance(v, float) else str(v) for v in value)
            elif isinstance(value, dict):
                value = json.dumps(value, sort_keys=True, default=str)
            row[key] = value
        rows.append(row)
    aggregate = report.get('aggregate')
    if aggregate:
        rows.append({'kind': 'aggregate', **aggregate})
    return pd.DataFrame(rows)


def emit_report(report: Dict[str, Any], path: Optional[str] = None, fmt: Optional[str] = None) -> str:
    """
    Write a report as JSON or CSV.

    Args:
        report: dictionary with optional 'per_image' and 'aggregate' entries
        path: output file; stdout when omitted or '-'
        fmt: 'json' or 'csv' (inferred from the path suffix when omitted)

    Returns:
        the serialized text
    """
    fmt = fmt or report_format(path)
    if fmt == 'csv':
        text = report_to_frame(report).to_csv(index=False)
    elif fmt == 'json':
        text = json.dumps(report, indent=2, default=str) + '\n'
    else:
        raise ValueError(f"Unsupported report format: {fmt}")

    if path and path != '-':
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Path(path).write_text(text)
        logger.info(f"Wrote {fmt} report to {path}")
    else:
        sys.stdout.write(text)
    return text


def train_log_frame(entries: Sequence[Any], parameter_names: Sequence[str] = ()) -> pd.DataFrame:
    """One row per epoch; nu is expanded into one column per transform parameter."""
    names = list(parameter_names)
    if len(set(names)) != len(names):
        names = [f"{name}{d}" for d, name in enumerate(names)]
    rows = []
    for entry in entries:
        row = entry.to_dict()
        nu = row.pop('nu')
        for name, value in zip(names or [str(d) for d in range(len(nu))], nu):
            row[f"nu_{name}"] = value
        rows.append(row)
    return pd.DataFrame(rows)


def write_train_log(entries: Sequence[Any], path: str, parameter_names: Sequence[str] = ()) -> pd.DataFrame:
    frame = train_log_frame(entries, parameter_names)
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(path, index=False)
    logger.info(f"Wrote training log ({len(frame)} epochs) to {path}")
    return frame
