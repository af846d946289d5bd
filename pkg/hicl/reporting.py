"""Machine-readable run artefacts.

Training steps and evaluation events go to JSON-lines files; the final
:class:`MetricsReport` is written as JSON and as a one-row-per-run CSV.
Nothing here records wall-clock time or absolute paths.
"""

import csv
import io
import json
import logging
from pathlib import Path
from typing import Dict, List, Optional, Sequence, TextIO

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from .flops import FlopsReport

logger = logging.getLogger(__name__)

REPORT_CSV_COLUMNS = ["run", "task_il", "class_il", "routing_accuracy", "mean_forgetting",
                      "conditional_mflops", "dense_mflops"]


class StepRecord(BaseModel):
    """One optimisation step's loss breakdown"""
    model_config = ConfigDict(extra="forbid")

    phase: int = Field(..., ge=1, le=2)
    task: int
    epoch: int
    step: int
    terms: Dict[str, float]
    total: float


class EvalRecord(BaseModel):
    """Accuracy on one seen task after a task boundary"""
    model_config = ConfigDict(extra="forbid")

    event: str = "eval"
    after_task: int
    task: int
    task_il_accuracy: float
    class_il_accuracy: float
    n_samples: int


class MetricsReport(BaseModel):
    """Summary of a continual-learning run"""
    model_config = ConfigDict(extra="forbid")

    name: str
    seed: int
    n_tasks: int
    n_experts: int
    buffer_size: int
    accuracy_matrix: List[List[Optional[float]]] = Field(
        ..., description="Row i: Task-IL accuracy on every task after training task i (None if unseen)")
    class_il_by_boundary: List[float] = Field(..., description="Class-IL accuracy over seen tasks per boundary")
    task_il_accuracy: float
    class_il_accuracy: float
    routing_accuracy: float
    forgetting: List[float]
    mean_forgetting: float
    flops: FlopsReport

    def csv_row(self) -> Dict[str, object]:
        row = self.flops.as_row()
        return {
            "run": self.name,
            "task_il": round(100.0 * self.task_il_accuracy, 4),
            "class_il": round(100.0 * self.class_il_accuracy, 4),
            "routing_accuracy": round(100.0 * self.routing_accuracy, 4),
            "mean_forgetting": round(100.0 * self.mean_forgetting, 4),
            "conditional_mflops": round(row["conditional_mflops"], 6),
            "dense_mflops": round(row["dense_mflops"], 6),
        }


def forgetting_per_task(matrix: Sequence[Sequence[Optional[float]]]) -> List[float]:
    """Best accuracy ever reached minus final accuracy, for every task but the last"""
    if not matrix:
        return []
    final = matrix[-1]
    out: List[float] = []
    for task in range(len(final) - 1):
        history = [row[task] for row in matrix if row[task] is not None]
        out.append(float(max(history) - final[task]) if history else 0.0)
    return out


class JsonLinesWriter:
    """Append-only JSON-lines file, one pydantic record per line"""

    def __init__(self, path: Path):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self._handle: Optional[TextIO] = None

    def __enter__(self) -> "JsonLinesWriter":
        self._handle = self.path.open("w", encoding="utf-8", newline="\n")
        return self

    def __exit__(self, *exc) -> None:
        self.close()

    def write(self, record: BaseModel) -> None:
        if self._handle is None:
            self._handle = self.path.open("w", encoding="utf-8", newline="\n")
        self._handle.write(record.model_dump_json() + "\n")

    def close(self) -> None:
        if self._handle is not None:
            self._handle.close()
            self._handle = None


def read_json_lines(path: Path) -> List[dict]:
    return [json.loads(line) for line in Path(path).read_text(encoding="utf-8").splitlines() if line.strip()]


def csv_text(columns: Sequence[str], rows: Sequence[Dict[str, object]]) -> str:
    buffer = io.StringIO()
    writer = csv.DictWriter(buffer, fieldnames=list(columns), lineterminator="\n")
    writer.writeheader()
    for row in rows:
        writer.writerow(row)
    return buffer.getvalue()


def matrix_csv(matrix: np.ndarray, row_label: str = "row", col_prefix: str = "col") -> str:
    """CSV of a 2-D array with a leading index column; floats at full repr precision"""
    matrix = np.atleast_2d(np.asarray(matrix))
    columns = [row_label] + [f"{col_prefix}{j}" for j in range(matrix.shape[1])]
    rows = [{row_label: i, **{f"{col_prefix}{j}": repr(float(v)) for j, v in enumerate(r)}}
            for i, r in enumerate(matrix)]
    return csv_text(columns, rows)


def write_report(report: MetricsReport, output_dir: Path) -> None:
    """``report.json`` and ``report.csv`` in ``output_dir``"""
    output_dir = Path(output_dir)
    output_dir.mkdir(parents=True, exist_ok=True)
    (output_dir / "report.json").write_text(report.model_dump_json(indent=2) + "\n", encoding="utf-8")
    (output_dir / "report.csv").write_text(csv_text(REPORT_CSV_COLUMNS, [report.csv_row()]), encoding="utf-8")
    logger.info(f"Report written to {output_dir.name}/report.json")
