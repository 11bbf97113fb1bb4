"""Result tables in CSV (canonical) and markdown (presentation)."""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from typing import Sequence


class TableShapeError(ValueError):
    pass


@dataclass(frozen=True)
class ReportTable:
    caption: str
    headers: tuple[str, ...]  # first header labels the row-label column
    rows: tuple[tuple[str, tuple[float, ...]], ...] = ()
    decimals: tuple[int, ...] = field(default=())  # per value column; empty -> 3 everywhere

    def __post_init__(self) -> None:
        object.__setattr__(self, "headers", tuple(self.headers))
        object.__setattr__(self, "rows", tuple((str(lab), tuple(float(v) for v in vals))
                                               for lab, vals in self.rows))
        width = len(self.headers) - 1
        if width < 1:
            raise TableShapeError("need a label header and at least one value column")
        decimals = tuple(self.decimals) or (3,) * width
        if len(decimals) != width:
            raise TableShapeError(f"expected {width} decimal specs, got {len(decimals)}")
        object.__setattr__(self, "decimals", decimals)
        for lab, vals in self.rows:
            if len(vals) != width:
                raise TableShapeError(f"row {lab!r} has {len(vals)} values, expected {width}")

    def cells(self) -> list[list[str]]:
        return [[lab] + [f"{v:.{d}f}" for v, d in zip(vals, self.decimals)] for lab, vals in self.rows]


def render_table(table: ReportTable, fmt: str = "markdown") -> str:
    if fmt == "csv":
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(table.headers)
        w.writerows(table.cells())
        return buf.getvalue()
    if fmt == "markdown":
        lines = []
        if table.caption:
            lines += [f"**{table.caption}**", ""]
        lines.append("| " + " | ".join(table.headers) + " |")
        lines.append("|" + "|".join(["---"] + ["---:"] * (len(table.headers) - 1)) + "|")
        lines += ["| " + " | ".join(row) + " |" for row in table.cells()]
        return "\n".join(lines) + "\n"
    raise ValueError(f"unknown format {fmt!r}")


def _decimals_of(cell: str) -> int:
    return len(cell.split(".", 1)[1]) if "." in cell else 0


def parse_table(text: str, fmt: str = "csv", caption: str = "") -> ReportTable:
    """Inverse of ``render_table``; decimals are read back from the cells."""
    if fmt == "csv":
        grid = list(csv.reader(io.StringIO(text)))
    elif fmt == "markdown":
        body = [ln for ln in text.splitlines() if ln.startswith("|")]
        caps = [ln for ln in text.splitlines() if ln.startswith("**") and ln.endswith("**")]
        if caps:
            caption = caps[0][2:-2]
        grid = [[c.strip() for c in ln.strip().strip("|").split("|")] for ln in body]
        grid = [grid[0]] + grid[2:] if grid else grid
    else:
        raise ValueError(f"unknown format {fmt!r}")
    if not grid:
        raise TableShapeError("empty table text")
    headers, data = grid[0], grid[1:]
    decimals: Sequence[int] = tuple(_decimals_of(c) for c in data[0][1:]) if data else ()
    rows = tuple((r[0], tuple(float(c) for c in r[1:])) for r in data)
    return ReportTable(caption, tuple(headers), rows, tuple(decimals))
