"""Deterministic on-disk reports for scenario runs.

One run produces a single ``summary.txt`` of ``key=value`` lines (config
echo, verdicts, then every summary figure with its standard error or
tolerance companion) plus one CSV per table.  Everything is derived from
the immutable ``ScenarioResult`` tuples in a fixed order, floats are
written with 17 significant digits, and line endings are always ``\\n``,
so re-running the same configuration yields byte-identical files.  Wall
time is deliberately not written here — the command line prints it to
stdout instead — because timing would break that reproducibility.
"""

from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

from .scenarios import ScenarioResult, Table

_FORMATS = ("summary", "tables")


def format_value(value) -> str:
    """Fixed text form: bools as pass/fail-agnostic true/false, floats %.17g."""
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return format(float(value), ".17g")
    return str(value)


def summary_lines(result: ScenarioResult) -> list[str]:
    """The summary file's lines (without trailing newlines)."""
    lines = [f"# {result.title}", "# provenance"]
    lines += [f"config.{k}={v}" for k, v in result.config_items]
    lines.append("# verdicts")
    lines += [f"verdict.{name}={'pass' if ok else 'fail'}"
              for name, ok in result.verdicts]
    lines.append(f"verdict.overall={'pass' if result.passed else 'fail'}")
    if result.summary:
        lines.append("# summary")
        lines += [f"summary.{key}={format_value(val)}" for key, val in result.summary]
    return lines


def _write_text(path: Path, lines: list[str]) -> None:
    try:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write("\n".join(lines) + "\n")
    except OSError as exc:
        raise OSError(f"cannot write report file {path}: {exc}") from exc


def _write_table(path: Path, table: Table) -> None:
    try:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(table.header)
            for row in table.rows:
                writer.writerow([format_value(v) for v in row])
    except OSError as exc:
        raise OSError(f"cannot write report file {path}: {exc}") from exc


def emit_report(result: ScenarioResult, out_dir,
                formats: tuple[str, ...] = _FORMATS) -> list[Path]:
    """Write summary.txt and the per-table CSVs; returns the paths written.

    formats selects a subset of {"summary", "tables"}.  Table files are
    named after the table (``<name>.csv``) in the result's fixed order.
    """
    unknown = set(formats) - set(_FORMATS)
    if unknown:
        raise ValueError(f"unknown report formats: {sorted(unknown)}; "
                         f"choose from {_FORMATS}")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written: list[Path] = []
    if "summary" in formats:
        path = out / "summary.txt"
        _write_text(path, summary_lines(result))
        written.append(path)
    if "tables" in formats:
        for table in result.tables:
            path = out / f"{table.name}.csv"
            _write_table(path, table)
            written.append(path)
    return written
