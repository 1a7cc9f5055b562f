"""Benchmark loading, grading, and accuracy reporting.

Datasets come in as line-delimited JSON in one of three layouts:

- ``gsm8k``: ``{"question", "answer"}`` where the reference answer is the
  text after the final ``"#### "`` marker in the answer field.
- ``math``: ``{"problem", "level", "type", "solution"}`` where the reference
  answer is the content of the last ``\\boxed{...}`` in the solution, the
  level is "Level 1".."Level 5", and the type is the subject name.
- ``jsonl``: ``{"id"?, "question", "answer", "source"?, "level"?,
  "subject"?}`` with the answer already isolated; this is the interchange
  format for out-of-domain sets.

Grading compares the extracted final answer of a solve trace against the
reference under the configured tolerance. Failed extraction, executor
failures, and budget terminations all grade as incorrect and are tallied
separately. The published grading scripts for these benchmarks are not
available, so absolute accuracy numbers from this harness are not directly
comparable with other reported results.
"""

from __future__ import annotations

import csv
import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Callable, Iterable, Sequence

from .answers import (
    EqConfig,
    answers_equivalent,
    extract_final_answer,
    last_boxed,
    normalize_answer,
    render_answer,
)
from .dataset import ProblemRecord, ProblemSource
from .orchestrator import ModelError, SolveTrace, Termination

log = logging.getLogger(__name__)

MATH_SUBJECTS = (
    "Algebra",
    "Counting & Probability",
    "Geometry",
    "Intermediate Algebra",
    "Number Theory",
    "Prealgebra",
    "Precalculus",
)
MATH_LEVELS = (1, 2, 3, 4, 5)

GSM8K_MARKER = "#### "


class DatasetFormat(Enum):
    GSM8K = "gsm8k"
    MATH = "math"
    UNIFIED_JSONL = "jsonl"


class FormatError(Exception):
    def __init__(self, path: str | Path, line_no: int, message: str):
        super().__init__(f"{path}:{line_no}: {message}")
        self.line_no = line_no


def load_problems(path: str | Path, fmt: DatasetFormat) -> list[ProblemRecord]:
    """Read one problem per JSON line; records without a usable reference
    answer are skipped with a warning rather than failing the run."""
    records: list[ProblemRecord] = []
    path = Path(path)
    with path.open(encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                raw = json.loads(line)
            except json.JSONDecodeError as exc:
                raise FormatError(path, line_no, f"bad JSON: {exc}") from exc
            if not isinstance(raw, dict):
                raise FormatError(path, line_no, "record must be a JSON object")
            try:
                record = _record_from(raw, fmt, line_no)
            except KeyError as exc:
                raise FormatError(path, line_no, f"missing field {exc}") from exc
            if record is None:
                log.warning("%s:%d: no reference answer; skipping", path, line_no)
                continue
            records.append(record)
    return records


def _record_from(
    raw: dict, fmt: DatasetFormat, line_no: int
) -> ProblemRecord | None:
    if fmt is DatasetFormat.GSM8K:
        marker_at = raw["answer"].rfind(GSM8K_MARKER)
        if marker_at < 0:
            return None
        value = raw["answer"][marker_at + len(GSM8K_MARKER) :].strip().split("\n")[0]
        return ProblemRecord(
            id=str(raw.get("id", f"gsm8k-{line_no}")),
            source=ProblemSource.GSM8K,
            question=raw["question"],
            ground_truth=normalize_answer(value),
        )
    if fmt is DatasetFormat.MATH:
        boxed = last_boxed(raw["solution"])
        level = _parse_level(raw["level"])
        if boxed is None or level is None:
            return None
        return ProblemRecord(
            id=str(raw.get("id", f"math-{line_no}")),
            source=ProblemSource.MATH,
            question=raw["problem"],
            ground_truth=normalize_answer(boxed),
            level=level,
            subject=raw["type"],
        )
    answer = raw.get("answer")
    if answer is None:
        return None
    source = {
        "gsm8k": ProblemSource.GSM8K,
        "math": ProblemSource.MATH,
        "interpolated": ProblemSource.INTERPOLATED,
    }.get(str(raw.get("source", "other")).lower(), ProblemSource.OTHER)
    return ProblemRecord(
        id=str(raw.get("id", f"problem-{line_no}")),
        source=source,
        question=raw["question"],
        ground_truth=normalize_answer(str(answer)),
        level=raw.get("level"),
        subject=raw.get("subject"),
    )


def _parse_level(raw: object) -> int | None:
    if isinstance(raw, int):
        return raw if 1 <= raw <= 5 else None
    if isinstance(raw, str):
        digits = "".join(ch for ch in raw if ch.isdigit())
        if digits and 1 <= int(digits) <= 5:
            return int(digits)
    return None


@dataclass(frozen=True)
class ProblemVerdict:
    problem_id: str
    correct: bool
    expected: str
    extracted: str | None
    termination: str
    level: int | None = None
    subject: str | None = None


@dataclass
class EvalReport:
    total: int = 0
    correct: int = 0
    verdicts: list[ProblemVerdict] = field(default_factory=list)
    extraction_failures: int = 0
    executor_failures: int = 0
    model_errors: int = 0
    block_limit_terminations: int = 0
    grid: dict[tuple[int, str], list[int]] = field(default_factory=dict)

    @property
    def accuracy(self) -> float:
        return self.correct / self.total if self.total else 0.0

    def to_json_dict(self) -> dict:
        out = {
            "accuracy": self.accuracy,
            "total": self.total,
            "correct": self.correct,
            "extraction_failures": self.extraction_failures,
            "executor_failures": self.executor_failures,
            "model_errors": self.model_errors,
            "block_limit_terminations": self.block_limit_terminations,
            "verdicts": [
                {
                    "id": v.problem_id,
                    "correct": v.correct,
                    "expected": v.expected,
                    "extracted": v.extracted,
                    "termination": v.termination,
                }
                for v in self.verdicts
            ],
        }
        if self.grid:
            out["math_grid"] = {
                f"{level}|{subject}": {"correct": c, "total": t}
                for (level, subject), (c, t) in sorted(self.grid.items())
            }
        return out


Solver = Callable[[ProblemRecord], SolveTrace]


def grade_trace(
    record: ProblemRecord, trace: SolveTrace, cfg: EqConfig
) -> ProblemVerdict:
    extracted = extract_final_answer(trace.conversation)
    correct = (
        extracted is not None
        and record.ground_truth is not None
        and answers_equivalent(extracted, record.ground_truth, cfg)
    )
    return ProblemVerdict(
        problem_id=record.id,
        correct=correct,
        expected=render_answer(record.ground_truth) if record.ground_truth else "",
        extracted=render_answer(extracted) if extracted is not None else None,
        termination=trace.termination.value,
        level=record.level,
        subject=record.subject,
    )


def run_eval(
    problems: Sequence[ProblemRecord],
    solver: Solver,
    cfg: EqConfig = EqConfig(),
    *,
    workers: int = 1,
    solver_factory: Callable[[], Solver] | None = None,
) -> EvalReport:
    """Grade every problem and aggregate a report.

    With ``workers > 1`` a solver per worker is created from
    ``solver_factory`` (each worker owns its model client and session) and
    results are merged back in input order, so reports are deterministic
    regardless of scheduling.
    """
    if workers > 1 and solver_factory is not None:
        verdicts = _solve_parallel(problems, solver_factory, cfg, workers)
    else:
        verdicts = [_solve_one(p, solver, cfg) for p in problems]
    return _aggregate(verdicts)


def _solve_one(record: ProblemRecord, solver: Solver, cfg: EqConfig) -> ProblemVerdict:
    try:
        trace = solver(record)
    except Exception as exc:  # per-problem errors never abort the run
        log.warning("solver failed on %s: %s", record.id, exc)
        kind = "model_error" if isinstance(exc, ModelError) else "solver_error"
        return ProblemVerdict(
            problem_id=record.id,
            correct=False,
            expected=render_answer(record.ground_truth) if record.ground_truth else "",
            extracted=None,
            termination=kind,
            level=record.level,
            subject=record.subject,
        )
    return grade_trace(record, trace, cfg)


def _solve_parallel(
    problems: Sequence[ProblemRecord],
    solver_factory: Callable[[], Solver],
    cfg: EqConfig,
    workers: int,
) -> list[ProblemVerdict]:
    from queue import SimpleQueue

    jobs: SimpleQueue[ProblemRecord | None] = SimpleQueue()
    for p in problems:
        jobs.put(p)
    for _ in range(workers):
        jobs.put(None)
    results: dict[str, ProblemVerdict] = {}

    def work() -> dict[str, ProblemVerdict]:
        solver = solver_factory()
        mine: dict[str, ProblemVerdict] = {}
        while (record := jobs.get()) is not None:
            mine[record.id] = _solve_one(record, solver, cfg)
        return mine

    with ThreadPoolExecutor(max_workers=workers) as pool:
        for part in pool.map(lambda _: work(), range(workers)):
            results.update(part)
    return [results[p.id] for p in problems]


def _aggregate(verdicts: Iterable[ProblemVerdict]) -> EvalReport:
    report = EvalReport()
    for v in verdicts:
        report.total += 1
        report.verdicts.append(v)
        if v.correct:
            report.correct += 1
        if v.extracted is None:
            report.extraction_failures += 1
        if v.termination in (Termination.EXECUTOR_FAILURE.value, "solver_error"):
            report.executor_failures += 1
        if v.termination in (Termination.MODEL_ERROR.value, "model_error"):
            report.model_errors += 1
        if v.termination == Termination.BLOCK_LIMIT.value:
            report.block_limit_terminations += 1
        if v.level is not None and v.subject is not None:
            cell = report.grid.setdefault((v.level, v.subject), [0, 0])
            cell[1] += 1
            if v.correct:
                cell[0] += 1
    return report


def format_report_table(report: EvalReport) -> str:
    lines = [
        f"accuracy           {report.accuracy:.4f}",
        f"problems           {report.total}",
        f"correct            {report.correct}",
        f"extraction misses  {report.extraction_failures}",
        f"executor failures  {report.executor_failures}",
        f"model errors       {report.model_errors}",
        f"block-limit stops  {report.block_limit_terminations}",
    ]
    if report.grid:
        lines.append("")
        lines.append("MATH accuracy by level and subject")
        subjects = sorted({s for (_, s) in report.grid})
        header = "level  " + "  ".join(f"{s[:12]:>12}" for s in subjects)
        lines.append(header)
        for level in MATH_LEVELS:
            cells = []
            for s in subjects:
                c, t = report.grid.get((level, s), (0, 0))
                cells.append(f"{c / t:.3f}" if t else "-")
            lines.append("    " + str(level) + "  " + "  ".join(f"{c:>12}" for c in cells))
    return "\n".join(lines)


def write_math_grid_csv(report: EvalReport, path: str | Path) -> None:
    """Level-by-subject accuracy grid, one row per level, blank when a cell
    has no problems. Counts live in the JSON report."""
    subjects = [s for s in MATH_SUBJECTS if any(k[1] == s for k in report.grid)]
    subjects += sorted({s for (_, s) in report.grid} - set(subjects))
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["level", *subjects])
        for level in MATH_LEVELS:
            row: list[str] = [str(level)]
            for s in subjects:
                c, t = report.grid.get((level, s), (0, 0))
                row.append(f"{c / t:.4f}" if t else "")
            writer.writerow(row)
