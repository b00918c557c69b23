"""Run reports: the JSON record every experiment writes, plus flat-CSV and
aligned-text renderings of metric tables.

A report is reproducible metadata: it embeds the config hash, the seed list,
per-seed confusion matrices, and the metric table, so ``xmf report`` can
re-render results without touching models or datasets.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

from .errors import ParseError


@dataclass
class RunReport:
    kind: str
    config_hash: str
    seeds: list[int]
    rows: list[dict] = field(default_factory=list)  # one dict per table row
    confusions: dict[str, list] = field(default_factory=dict)  # row label -> per-seed 3x3 lists
    wall_time_s: float = 0.0
    tool_version: str = ""
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "RunReport":
        known = {"kind", "config_hash", "seeds", "rows", "confusions", "wall_time_s", "tool_version", "extra"}
        unknown = set(data) - known
        if unknown:
            raise ParseError(f"unknown RunReport fields {sorted(unknown)}")
        return cls(**data)


def save_report(report: RunReport, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(report.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_report(path) -> RunReport:
    try:
        with open(path, encoding="utf-8") as fh:
            return RunReport.from_dict(json.load(fh))
    except (OSError, json.JSONDecodeError) as exc:
        raise ParseError(f"cannot read run report {path}: {exc}") from None


def _cell_text(value) -> str:
    if isinstance(value, float):
        return f"{value:.4f}"
    return str(value)


def format_table(rows: list[dict], columns: list[str] | None = None) -> str:
    """Align a list of row dicts into a monospaced text table."""
    if not rows:
        return "(empty table)\n"
    columns = columns or list(rows[0].keys())
    cells = [[_cell_text(r.get(c, "")) for c in columns] for r in rows]
    widths = [max(len(c), *(len(row[i]) for row in cells)) for i, c in enumerate(columns)]
    lines = ["  ".join(c.ljust(w) for c, w in zip(columns, widths)).rstrip()]
    lines.append("  ".join("-" * w for w in widths))
    for row in cells:
        lines.append("  ".join(c.ljust(w) for c, w in zip(row, widths)).rstrip())
    return "\n".join(lines) + "\n"


def write_csv(rows: list[dict], path, columns: list[str] | None = None) -> None:
    if rows:
        columns = columns or list(rows[0].keys())
    else:
        columns = columns or []
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(columns) + "\n")
        for r in rows:
            fh.write(",".join(str(r.get(c, "")) for c in columns) + "\n")
