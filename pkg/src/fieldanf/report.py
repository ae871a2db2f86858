"""Result tables (CSV / JSON) and approximate-vs-exact comparison metrics."""

from __future__ import annotations

import csv
import io
import json
import math
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional

import numpy as np
from scipy.stats import kendalltau

from .errors import ConsistencyError, ParseError
from .graph import read_text
from .logger import get_log_level_from_env, setup_logger
from .programs import harmonic_centrality

logger = setup_logger("fieldanf", get_log_level_from_env())


@dataclass
class Table:
    name: str
    columns: list[str]
    rows: list[list[Any]] = field(default_factory=list)

    def as_records(self) -> list[dict[str, Any]]:
        return [dict(zip(self.columns, row)) for row in self.rows]


def _cell(value: Any) -> str:
    if isinstance(value, bool):
        return "1" if value else "0"
    if value is None:
        return ""
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


def render_csv(table: Table) -> str:
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(table.columns)
    for row in table.rows:
        writer.writerow([_cell(value) for value in row])
    return buffer.getvalue()


def _json_value(value: Any) -> Any:
    if isinstance(value, (np.integer,)):
        return int(value)
    if isinstance(value, (float, np.floating)):
        value = float(value)
        return value if math.isfinite(value) else None
    return value


def render_json(payload: dict[str, Any]) -> str:
    def clean(obj: Any) -> Any:
        if isinstance(obj, dict):
            return {key: clean(value) for key, value in obj.items()}
        if isinstance(obj, (list, tuple)):
            return [clean(value) for value in obj]
        return _json_value(obj)

    return json.dumps(clean(payload), indent=2) + "\n"


def summary_path(out: str) -> str:
    return str(Path(out).with_suffix(".summary.csv"))


def _write_text(text: str, out: Optional[str]) -> None:
    if out is None:
        sys.stdout.write(text)
        return
    with open(out, "w", encoding="utf-8", newline="\n") as file:
        file.write(text)


def write_tables(tables: list[Table], fmt: str = "csv", out: Optional[str] = None) -> None:
    """Write the primary table and an optional summary table.

    JSON puts every table in one object keyed by table name. CSV writes the
    primary table to `out` and the summary to `<out stem>.summary.csv`; on
    stdout the two are separated by one blank line.
    """
    if fmt == "json":
        _write_text(render_json({t.name: t.as_records() for t in tables}), out)
        return
    primary, *rest = tables
    if out is None:
        sys.stdout.write("\n".join(render_csv(t) for t in tables))
        return
    _write_text(render_csv(primary), out)
    for table in rest:
        _write_text(render_csv(table), summary_path(out))


def write_report(report: dict[str, Any], out: Optional[str] = None) -> None:
    _write_text(render_json(report), out)


def read_table(path: str) -> tuple[list[str], list[dict[str, str]]]:
    reader = csv.DictReader(io.StringIO(read_text(path), newline=""))
    if reader.fieldnames is None:
        raise ParseError(f"{path}: empty table")
    return list(reader.fieldnames), list(reader)


def table_matrix(path: str) -> tuple[list[str], np.ndarray]:
    """Load a `vertex,h,<value>` table into a (vertices, H+1) matrix"""
    columns, records = read_table(path)
    if len(columns) != 3 or columns[:2] != ["vertex", "h"]:
        raise ParseError(f"{path}: expected columns vertex,h,<value>, got {','.join(columns)}")
    value_column = columns[2]
    cells: dict[tuple[str, int], float] = {}
    for line, record in enumerate(records, start=2):
        try:
            cells[(record["vertex"], int(record["h"]))] = float(record[value_column])
        except (TypeError, ValueError) as err:
            raise ParseError(f"{path}: bad row {record}: {err}", line) from err
    vertices = sorted({vertex for vertex, _ in cells}, key=_vertex_order)
    radii = sorted({h for _, h in cells})
    if radii != list(range(len(radii))) or len(cells) != len(vertices) * len(radii):
        raise ConsistencyError(f"{path}: table is not a full vertex x radius grid")
    matrix = np.array([[cells[(v, h)] for h in radii] for v in vertices], dtype=np.float64)
    return vertices, matrix


def _vertex_order(vertex: str) -> tuple[int, Any]:
    try:
        return (0, int(vertex))
    except ValueError:
        return (1, vertex)


def harmonic_scores(values: np.ndarray) -> np.ndarray:
    """Truncated harmonic centrality per row of a (vertices, H+1) table"""
    return np.array([harmonic_centrality(row[::-1].tolist()) for row in values])


def relative_errors(approx: np.ndarray, exact: np.ndarray) -> tuple[float, float]:
    """(max, mean) of |approx - exact| / exact over cells with a non-zero exact value"""
    mask = exact != 0
    if not mask.any():
        return 0.0, 0.0
    errors = np.abs(approx[mask] - exact[mask]) / exact[mask]
    return float(errors.max()), float(errors.mean())


def pairwise_agreement(a: np.ndarray, b: np.ndarray) -> float:
    """Share of vertex pairs that both score vectors order the same way (ties included)"""
    n = len(a)
    if n < 2:
        return 1.0
    upper = np.triu_indices(n, k=1)
    sign_a = np.sign(a[:, None] - a[None, :])[upper]
    sign_b = np.sign(b[:, None] - b[None, :])[upper]
    return float(np.mean(sign_a == sign_b))


def top_k(scores: np.ndarray, k: int) -> list[int]:
    """Indices of the k best scores; ties go to the lower index"""
    order = sorted(range(len(scores)), key=lambda v: (-scores[v], v))
    return order[:k]


def top_k_overlap(a: np.ndarray, b: np.ndarray, k: int) -> int:
    return len(set(top_k(a, k)) & set(top_k(b, k)))


def compare_tables(approx: np.ndarray, exact: np.ndarray, k: int = 10) -> dict[str, Any]:
    if approx.shape != exact.shape:
        raise ConsistencyError(
            f"tables differ in shape: approximate {approx.shape}, exact {exact.shape}"
        )
    max_rel, mean_rel = relative_errors(approx, exact)
    approx_scores = harmonic_scores(approx)
    exact_scores = harmonic_scores(exact)
    if len(exact_scores) > 1:
        tau, _ = kendalltau(approx_scores, exact_scores)
    else:
        tau = float("nan")
    overlap = top_k_overlap(approx_scores, exact_scores, k)
    logger.info(
        "Compared %d vertices: max relative error %.4g, top-%d overlap %d",
        approx.shape[0],
        max_rel,
        k,
        overlap,
    )
    return {
        "vertices": int(approx.shape[0]),
        "hmax": int(approx.shape[1] - 1),
        "max_rel_error": max_rel,
        "mean_rel_error": mean_rel,
        "pairwise_agreement": pairwise_agreement(approx_scores, exact_scores),
        "kendall_tau": tau,
        "top_k": k,
        "topK_overlap": overlap,
    }
