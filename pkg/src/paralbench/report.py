"""Leaderboard tables: rows are extractors, column groups are tasks.

Plain-text output uses three-decimal values with the leading zero dropped
and marks the best three entries of every column as ``[1]``, ``[2]``,
``[3]``. MAE columns rank lower values first. CSV output keeps full
precision so it can be checked against the results store.
"""

from __future__ import annotations

import csv
import io
import re
from dataclasses import dataclass, field
from typing import Iterable, Sequence

from .errors import DataError
from .metrics import table_format
from .store import ResultRecord

LOWER_IS_BETTER = frozenset({"MAE"})
METRIC_ORDER = ("WA", "UA", "WF1", "MAE")
MISSING = "--"


class EmptyReport(DataError):
    pass


@dataclass
class LeaderboardTable:
    rows: list[str]
    groups: list[tuple[str, tuple[str, ...]]]          # (group label, metric names)
    values: dict[tuple[str, str, str], float] = field(default_factory=dict)
    sources: dict[tuple[str, str, str], str] = field(default_factory=dict)
    title: str = ""

    def columns(self) -> list[tuple[str, str]]:
        return [(g, m) for g, metrics in self.groups for m in metrics]

    def ranks(self) -> dict[tuple[str, str, str], int]:
        """Competition ranks per column (ties share a rank)."""
        out = {}
        for g, m in self.columns():
            present = [(r, self.values[(r, g, m)]) for r in self.rows if (r, g, m) in self.values]
            sign = 1.0 if m in LOWER_IS_BETTER else -1.0
            for r, v in present:
                out[(r, g, m)] = 1 + sum(1 for _, w in present if sign * w < sign * v)
        return out


def _metric_sort(metrics: Iterable[str]) -> tuple[str, ...]:
    ms = set(metrics)
    return tuple([m for m in METRIC_ORDER if m in ms] + sorted(ms - set(METRIC_ORDER)))


def _row_label(rec: ResultRecord, multi_layer: bool) -> str:
    label = f"{rec.extractor_id} [{rec.layer}]" if multi_layer else rec.extractor_id
    variant = rec.spec.get("variant") or ""
    return f"{label} ({variant})" if variant else label


def _natural_key(label: str):
    # "index(11)" sorts after "index(3)"
    return [(0, int(t), "") if t.isdigit() else (1, 0, t) for t in re.split(r"(\d+)", label)]


def _latest(records: Iterable[ResultRecord]) -> list[ResultRecord]:
    # the last record (by store order) wins for each spec
    by_hash = {}
    for r in sorted(records, key=lambda r: r.record_id):
        by_hash[r.spec_hash] = r
    return sorted(by_hash.values(), key=lambda r: r.record_id)


def build_leaderboard(records: Sequence[ResultRecord], task_order: Sequence[str] | None = None,
                      row_order: Sequence[str] | None = None, title: str = "") -> LeaderboardTable:
    ok = _latest([r for r in records if r.ok])
    if not ok:
        raise EmptyReport("no successful result records match the filter")
    layers_per_extractor = {}
    for r in ok:
        layers_per_extractor.setdefault(r.extractor_id, set()).add(r.layer)
    multi = any(len(v) > 1 for v in layers_per_extractor.values())
    group_key = [(r.task_id if r.protocol != "cross_corpus" else f"{r.task_id}->{r.spec.get('test_task_id')}")
                 for r in ok]
    metrics_by_group: dict[str, set] = {}
    collected: dict[tuple[str, str, str], list[tuple[str, float]]] = {}
    for r, g in zip(ok, group_key):
        row = _row_label(r, multi)
        metrics_by_group.setdefault(g, set()).update(r.metrics)
        for m, v in r.metrics.items():
            collected.setdefault((row, g, m), []).append((r.record_id, float(v)))
    # several seeds of one configuration share a cell: report their mean
    values, sources = {}, {}
    for key, items in collected.items():
        items.sort()
        values[key] = sum(v for _, v in items) / len(items)
        sources[key] = ";".join(rid for rid, _ in items)
    groups = list(task_order) if task_order else sorted(metrics_by_group)
    groups = [g for g in groups if g in metrics_by_group]
    rows = sorted({_row_label(r, multi) for r in ok}, key=_natural_key)
    if row_order:
        rows = [r for r in row_order if r in rows] + [r for r in rows if r not in row_order]
    return LeaderboardTable(rows, [(g, _metric_sort(metrics_by_group[g])) for g in groups], values, sources, title)


def _cell(table: LeaderboardTable, ranks, row, g, m) -> str:
    key = (row, g, m)
    if key not in table.values:
        return MISSING
    text = table_format(table.values[key])
    rank = ranks.get(key)
    return f"{text}[{rank}]" if rank is not None and rank <= 3 else text


def _grid(header_groups: list[tuple[str, int]], sub_header: list[str], body: list[list[str]],
          first_col: str) -> str:
    widths = [max(len(first_col), *(len(r[0]) for r in body))]
    ncols = len(sub_header)
    for j in range(ncols):
        widths.append(max(len(sub_header[j]), *(len(r[j + 1]) for r in body)))
    # widen column blocks so each group label fits over its columns
    col = 1
    for label, span in header_groups:
        block = sum(widths[col:col + span]) + 3 * (span - 1)
        if len(label) > block:
            widths[col + span - 1] += len(label) - block
        col += span
    lines = []
    parts, col = [" " * widths[0]], 1
    for label, span in header_groups:
        block = sum(widths[col:col + span]) + 3 * (span - 1)
        parts.append(label.center(block))
        col += span
    lines.append(" | ".join(parts).rstrip())
    lines.append(" | ".join([first_col.ljust(widths[0])] + [h.rjust(widths[j + 1]) for j, h in enumerate(sub_header)]))
    lines.append("-+-".join("-" * w for w in widths))
    for r in body:
        lines.append(" | ".join([r[0].ljust(widths[0])] + [c.rjust(widths[j + 1]) for j, c in enumerate(r[1:])]))
    return "\n".join(lines) + "\n"


def render_text(table: LeaderboardTable) -> str:
    ranks = table.ranks()
    header_groups = [(g, len(ms)) for g, ms in table.groups]
    sub = [m for _, ms in table.groups for m in ms]
    body = [[row] + [_cell(table, ranks, row, g, m) for g, m in table.columns()] for row in table.rows]
    text = _grid(header_groups, sub, body, "Model")
    legend = "[n]: rank within column (top 3 marked); MAE ranks lower first; -- = no result\n"
    return (table.title + "\n" if table.title else "") + text + legend


CSV_FIELDS = ("row", "group", "metric", "value", "rank", "record_id")


def render_csv(table: LeaderboardTable) -> str:
    ranks = table.ranks()
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_FIELDS)
    for row in table.rows:
        for g, m in table.columns():
            key = (row, g, m)
            if key in table.values:
                w.writerow([row, g, m, repr(table.values[key]), ranks[key], table.sources[key]])
    return buf.getvalue()


def parse_csv(text: str) -> dict[tuple[str, str, str], float]:
    reader = csv.DictReader(io.StringIO(text))
    return {(r["row"], r["group"], r["metric"]): float(r["value"]) for r in reader}


def build_fusion_table(records: Sequence[ResultRecord]) -> LeaderboardTable:
    """Last-hidden vs fusion pairs side by side, per task."""
    recs = [r for r in records if r.ok and r.protocol == "fusion_compare"]
    if not recs:
        raise EmptyReport("no fusion_compare records match the filter")
    relabelled = []
    for r in _latest(recs):
        variant = "Fusion State" if r.extra.get("variant") == "fusion" else "Last Hidden State"
        clone = ResultRecord.from_dict(r.to_dict())
        clone.task_id = f"{r.task_id}: {variant}"
        clone.layer = "last_hidden"
        relabelled.append(clone)
    tasks = sorted({r.task_id for r in recs})
    order = [f"{t}: {v}" for t in tasks for v in ("Last Hidden State", "Fusion State")]
    return build_leaderboard(relabelled, task_order=order, title="Last Hidden State vs. Fusion State")
