"""Machine-readable eval reports, flat summary rows, and aggregation.

Each evaluation writes a JSON report plus (optionally) one tab-separated
summary row keyed by task and config fingerprint. ``aggregate_summaries``
merges row files into one table and refuses to mix format versions.
"""

from __future__ import annotations

import json
from pathlib import Path

from .errors import ParseError, ValidationError
from .evaluation import EvalReport, RetrievalReport
from .meta import REPORT_FORMAT, REPORT_VERSION, SUMMARY_VERSION

_SUMMARY_HEADER = f"# format=saralign-summary version={SUMMARY_VERSION}"


def _parse_scalar(value: str):
    for cast in (int, float):
        try:
            return cast(value)
        except ValueError:
            continue
    return value.strip("'\"")


def retrieval_report_dict(i2t: RetrievalReport, t2i: RetrievalReport,
                          mean_recall: float, fingerprint: str = "") -> dict:
    metrics = {}
    for report, prefix in ((i2t, "i2t"), (t2i, "t2i")):
        for k in sorted(report.recall_at):
            metrics[f"{prefix}_r{k}"] = report.recall_at[k]
    metrics["mean_recall"] = mean_recall
    return {
        "format": REPORT_FORMAT,
        "format_version": REPORT_VERSION,
        "task": "retrieval",
        "config_fingerprint": fingerprint,
        "metrics": metrics,
    }


def eval_report_dict(report: EvalReport) -> dict:
    out = report.as_dict()
    out["format"] = REPORT_FORMAT
    out["format_version"] = REPORT_VERSION
    return out


def write_report(report: dict, path) -> None:
    Path(path).write_text(json.dumps(report, indent=2, sort_keys=True) + "\n",
                          encoding="utf-8")


def append_summary_row(path, task: str, fingerprint: str, metrics: dict) -> None:
    """One flat row per run: task, fingerprint, then key=value metric cells."""
    path = Path(path)
    cells = [task, fingerprint or "-"]
    cells += [f"{key}={metrics[key]!r}" for key in sorted(metrics)]
    line = "\t".join(cells)
    if path.exists():
        with open(path, "a", encoding="utf-8") as fh:
            fh.write(line + "\n")
    else:
        path.write_text(_SUMMARY_HEADER + "\n" + line + "\n", encoding="utf-8")


def read_summary_rows(path) -> list[dict]:
    path = Path(path)
    rows = []
    lines = path.read_text(encoding="utf-8").splitlines()
    if not lines or not lines[0].startswith("# format=saralign-summary"):
        raise ParseError("not a summary-row file", path=path, line=1)
    version = lines[0].rsplit("version=", 1)[-1]
    if version != str(SUMMARY_VERSION):
        raise ValidationError(
            f"{path}: summary version {version} does not match {SUMMARY_VERSION}; "
            "refusing to aggregate")
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip() or line.startswith("#"):
            continue
        cells = line.split("\t")
        if len(cells) < 2:
            raise ParseError("malformed summary row", path=path, line=lineno)
        metrics = {}
        for cell in cells[2:]:
            key, _, value = cell.partition("=")
            metrics[key] = _parse_scalar(value)
        rows.append({"task": cells[0], "fingerprint": cells[1], "metrics": metrics})
    return rows


def aggregate_summaries(paths) -> str:
    """Merge summary files into one aligned text table."""
    rows = []
    for path in paths:
        rows.extend(read_summary_rows(path))
    if not rows:
        return "no summary rows found\n"
    keys = sorted({k for row in rows for k in row["metrics"]})
    header = ["task", "fingerprint", *keys]
    table = [header]
    for row in rows:
        cells = [row["task"], row["fingerprint"]]
        for key in keys:
            value = row["metrics"].get(key, "")
            cells.append(f"{value:.4f}" if isinstance(value, float) else str(value))
        table.append(cells)
    widths = [max(len(r[c]) for r in table) for c in range(len(header))]
    lines = ["  ".join(cell.ljust(w) for cell, w in zip(row, widths)).rstrip()
             for row in table]
    return "\n".join(lines) + "\n"
