"""Metric report emitters: JSON documents and aligned-column text tables.

Tables follow the layout used for published pose/detection results: one row
per dataset or method, AP columns then AR columns, with per-size breakdowns.
Detection tables carry the small/medium/large split; keypoint tables drop
the small column (small people carry no keypoint annotations).
"""

from __future__ import annotations

import json
from pathlib import Path

from .metrics import SENTINEL, MetricReport

DETECTION_COLUMNS = (
    ("AP", None),
    ("AP_S", "small"),
    ("AP_M", "medium"),
    ("AP_L", "large"),
    ("AR", None),
    ("AR_S", "small"),
    ("AR_M", "medium"),
    ("AR_L", "large"),
)
KEYPOINT_COLUMNS = (
    ("AP", None),
    ("AP_M", "medium"),
    ("AP_L", "large"),
    ("AR", None),
    ("AR_M", "medium"),
    ("AR_L", "large"),
)


def _cell(report: MetricReport, header: str, range_label) -> float:
    metric = "ap" if header.startswith("AP") else "ar"
    if range_label is None:
        return getattr(report, metric)
    return report.per_range[range_label][metric]


def format_value(value: float, digits: int = 3) -> str:
    """Fixed-point metric cell; the empty-cell sentinel prints as a dash."""
    if value == SENTINEL:
        return "-"
    return f"{value:.{digits}f}"


def format_metric_table(rows, digits: int = 3) -> str:
    """Aligned text table from (label, MetricReport) pairs.

    All rows must share a mode; the mode picks the column set.
    """
    rows = list(rows)
    if not rows:
        raise ValueError("no rows to format")
    modes = {report.mode for _, report in rows}
    if len(modes) != 1:
        raise ValueError(f"rows mix modes: {sorted(modes)}")
    columns = DETECTION_COLUMNS if modes.pop() == "detection" else KEYPOINT_COLUMNS

    header = ["Dataset"] + [name for name, _ in columns]
    body = []
    for label, report in rows:
        body.append(
            [str(label)]
            + [
                format_value(_cell(report, name, range_label), digits)
                for name, range_label in columns
            ]
        )
    widths = [
        max(len(line[i]) for line in [header] + body)
        for i in range(len(header))
    ]

    def render(line, pad):
        cells = []
        for i, text in enumerate(line):
            cells.append(text.ljust(widths[i]) if i == 0 else text.rjust(widths[i]))
        return pad.join(cells).rstrip()

    rule = "-" * (sum(widths) + 2 * (len(widths) - 1))
    lines = [render(header, "  "), rule]
    lines.extend(render(line, "  ") for line in body)
    return "\n".join(lines) + "\n"


def write_metric_table(rows, path, digits: int = 3) -> None:
    Path(path).write_text(format_metric_table(rows, digits), encoding="utf-8")


def write_report_json(reports, path) -> None:
    """Serialize one report or a {label: report} family to a JSON document."""
    if isinstance(reports, MetricReport):
        payload = reports.to_dict()
    else:
        payload = {str(label): rep.to_dict() for label, rep in reports.items()}
    Path(path).write_text(json.dumps(payload, indent=2) + "\n", encoding="utf-8")


def read_report_json(path):
    """Inverse of write_report_json; returns a report or a {label: report} dict."""
    raw = json.loads(Path(path).read_text(encoding="utf-8"))
    if "mode" in raw and isinstance(raw.get("ap"), (int, float)):
        return MetricReport.from_dict(raw)
    return {label: MetricReport.from_dict(entry) for label, entry in raw.items()}
