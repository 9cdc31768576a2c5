"""
CSV reports

Every report is an RFC-4180 CSV file:

    # shotperc v0.1.0
    # config: {"experiment": "coupling_rate", ...}
    experiment,lambda,R,r,epsilon,replicas,statistic,value,stderr,seed,<extra columns>
    coupling_rate,16,,,0.0625,200,median_error,0.31415...,0.0123...,12345,...

Floats are written with 17 significant digits so a report reads back to the
exact values that were written. Files are written to a temporary sibling and
renamed over the target, so a report is either complete or absent. Wall time
and thread count go to `<out>.log`, never into the CSV, so reports for the
same config and seed are byte-identical.
"""

import csv
import json
import logging
import math
import os
import tempfile
from dataclasses import dataclass
from importlib import metadata
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

from .errors import InvalidArgumentError, ReportError

logger = logging.getLogger(__name__)

COMMON_COLUMNS = (
    "experiment",
    "lambda",
    "R",
    "r",
    "epsilon",
    "replicas",
    "statistic",
    "value",
    "stderr",
    "seed",
)

EXTRA_COLUMNS: Dict[str, Tuple[str, ...]] = {
    "marginal_clt": ("pad",),
    "coupling_rate": ("m",),
    "truncation_rate": ("field",),
    "c1_tails": ("field", "u"),
    "lc_sweep": ("field", "bracket_lo", "bracket_hi"),
    "threshold_curve": ("field", "level"),
    "sprinkle": ("level", "h", "independent"),
    "kesten": ("level", "h"),
    "duality_audit": ("source",),
    "derivative_coupling": ("alpha", "m"),
    "poisson_gaussian_tail": ("t",),
    "epsilon_stability": ("field", "level"),
    "covariance_oracle": ("lag_x", "lag_y"),
    "qm_bounds": ("test_function", "m"),
}


@dataclass(frozen=True)
class Schema:
    """Column layout of one experiment's report"""

    experiment: str
    columns: Tuple[str, ...]

    @classmethod
    def for_experiment(cls, experiment: str) -> "Schema":
        if experiment not in EXTRA_COLUMNS:
            raise InvalidArgumentError(f"no report schema for experiment '{experiment}'")
        return cls(experiment, COMMON_COLUMNS + EXTRA_COLUMNS[experiment])


def version_string() -> str:
    try:
        return f"v{metadata.version('shotperc')}"
    except metadata.PackageNotFoundError:
        return "v0+unknown"


def format_value(value: Any) -> str:
    """One CSV cell; floats with 17 significant digits, None as empty"""
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, int):
        return str(value)
    if isinstance(value, float) or hasattr(value, "dtype"):
        x = float(value)
        if math.isnan(x):
            raise InvalidArgumentError("NaN cannot be written to a report")
        return format(x, ".17g")
    return str(value)


def parse_value(cell: str) -> Any:
    """Inverse of format_value for the types reports contain"""
    if cell == "":
        return None
    if cell in ("true", "false"):
        return cell == "true"
    try:
        return int(cell)
    except ValueError:
        pass
    try:
        return float(cell)
    except ValueError:
        return cell


def _render_rows(rows: Sequence[Dict[str, Any]], schema: Schema) -> List[List[str]]:
    known = set(schema.columns)
    rendered = []
    for i, row in enumerate(rows):
        unknown = set(row) - known
        if unknown:
            raise InvalidArgumentError(
                f"row {i} has columns outside the {schema.experiment} schema: {sorted(unknown)}"
            )
        try:
            rendered.append([format_value(row.get(col)) for col in schema.columns])
        except InvalidArgumentError as e:
            raise InvalidArgumentError(f"row {i} ({row.get('statistic')}): {e}") from e
    return rendered


def emit_csv(
    rows: Sequence[Dict[str, Any]],
    schema: Schema,
    path: Path,
    config_echo: Optional[Dict[str, Any]] = None,
) -> Path:
    """
    Write rows atomically as CSV under a '#' metadata header

    Every row is validated (schema columns, no NaN) before anything touches
    the disk.

    Raises:
        InvalidArgumentError: a row does not match the schema or holds NaN
        ReportError: the file cannot be written
    """
    path = Path(path)
    rendered = _render_rows(rows, schema)
    directory = path.parent if str(path.parent) else Path(".")
    tmp_name = None
    try:
        directory.mkdir(parents=True, exist_ok=True)
        fd, tmp_name = tempfile.mkstemp(prefix=f".{path.name}.", suffix=".tmp", dir=directory)
        with os.fdopen(fd, "w", newline="", encoding="utf-8") as fh:
            fh.write(f"# shotperc {version_string()}\n")
            if config_echo is not None:
                fh.write(f"# config: {json.dumps(config_echo, sort_keys=True)}\n")
            writer = csv.writer(fh)
            writer.writerow(schema.columns)
            writer.writerows(rendered)
        os.replace(tmp_name, path)
    except OSError as e:
        if tmp_name is not None and os.path.exists(tmp_name):
            os.unlink(tmp_name)
        raise ReportError(f"cannot write report {path}: {e}") from e
    logger.info(f"Wrote {len(rendered)} rows to {path}")
    return path


def read_csv(path: Path) -> Tuple[List[str], List[Dict[str, Any]]]:
    """
    Read a report back

    Returns:
        (metadata lines without the leading '# ', rows as typed dicts)
    """
    path = Path(path)
    meta: List[str] = []
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            lines = fh.readlines()
    except OSError as e:
        raise ReportError(f"cannot read report {path}: {e}") from e
    body = []
    for line in lines:
        if not body and line.startswith("#"):
            meta.append(line[1:].strip())
        else:
            body.append(line)
    rows = [
        {key: parse_value(cell) for key, cell in row.items()} for row in csv.DictReader(body)
    ]
    return meta, rows


def run_log_path(path: Path) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".log")


def write_run_log(path: Path, wall_time: float, threads: int, rows: int) -> Path:
    """Sidecar with the non-deterministic facts of a run"""
    log_path = run_log_path(path)
    try:
        with open(log_path, "w", encoding="utf-8") as fh:
            fh.write(f"version: {version_string()}\n")
            fh.write(f"wall_time_s: {wall_time:.3f}\n")
            fh.write(f"threads: {threads}\n")
            fh.write(f"rows: {rows}\n")
    except OSError as e:
        raise ReportError(f"cannot write run log {log_path}: {e}") from e
    return log_path
