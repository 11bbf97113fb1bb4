"""TSPLIB EUC_2D reader/writer and original-unit cost reporting."""
from __future__ import annotations

import csv
import math
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .core import Instance, Kind, check_permutation

_KEY = re.compile(r"^\s*([A-Z_]+)\s*:?\s*(.*?)\s*$")


class TsplibParseError(ValueError):
    def __init__(self, line: int, msg: str):
        super().__init__(f"line {line}: {msg}")
        self.line = line


@dataclass(frozen=True)
class TsplibFile:
    name: str
    dimension: int
    edge_weight_type: str
    coords: np.ndarray  # original units, node order 1..dimension
    comment: str = ""
    best_known: float | None = None

    @property
    def offset(self) -> np.ndarray:
        return self.coords.min(axis=0)

    @property
    def scale(self) -> float:
        """Original length per normalized unit (one factor for both axes)."""
        span = float((self.coords.max(axis=0) - self.coords.min(axis=0)).max())
        return span if span > 0 else 1.0

    def to_instance(self) -> Instance:
        coords = (self.coords - self.offset) / self.scale
        return Instance(self.name, Kind.TSP, np.clip(coords, 0.0, 1.0))

    def original_cost(self, order: Sequence[int], rounding: str = "nint") -> float:
        return tour_cost_original(self.coords, order, rounding)

    def gap(self, cost: float) -> float | None:
        if self.best_known is None:
            return None
        return cost / self.best_known - 1.0


def nint(x: float) -> int:
    return int(x + 0.5)


def tour_cost_original(coords: np.ndarray, order: Sequence[int], rounding: str = "nint") -> float:
    """Closed tour length in file units; ``nint`` rounds each edge as TSPLIB does."""
    idx = check_permutation(order, len(coords))
    a = coords[idx]
    b = coords[np.roll(idx, -1)]
    lengths = np.sqrt(((a - b) ** 2).sum(axis=1))
    if rounding == "nint":
        return float(sum(nint(x) for x in lengths))
    if rounding == "real":
        return math.fsum(lengths)
    raise ValueError("rounding must be 'nint' or 'real'")


def read_tsplib(path: str | Path, best_known: float | None = None) -> TsplibFile:
    lines = Path(path).read_text().splitlines()
    header: dict[str, str] = {}
    coords: dict[int, tuple[float, float]] = {}
    i = 0
    section_line = None
    while i < len(lines):
        raw = lines[i]
        i += 1
        text = raw.strip()
        if not text:
            continue
        if text == "EOF":
            break
        if text.startswith("NODE_COORD_SECTION"):
            section_line = i
            while i < len(lines):
                row = lines[i].strip()
                if not row or row == "EOF" or not row[0].isdigit():
                    break
                i += 1
                parts = row.split()
                if len(parts) != 3:
                    raise TsplibParseError(i, f"expected 'id x y', got {row!r}")
                try:
                    node = int(parts[0])
                    x, y = float(parts[1]), float(parts[2])
                except ValueError as exc:
                    raise TsplibParseError(i, f"malformed coordinate row {row!r}") from exc
                if node in coords:
                    raise TsplibParseError(i, f"duplicate node id {node}")
                coords[node] = (x, y)
            continue
        if text.endswith("_SECTION"):
            raise TsplibParseError(i, f"unsupported section {text}")
        m = _KEY.match(text)
        if m is None or ":" not in text:
            raise TsplibParseError(i, f"cannot parse header line {text!r}")
        key, value = text.split(":", 1)
        header[key.strip()] = value.strip()
        if key.strip() == "EDGE_WEIGHT_TYPE" and value.strip() != "EUC_2D":
            raise TsplibParseError(i, f"unsupported EDGE_WEIGHT_TYPE {value.strip()} (only EUC_2D)")
        if key.strip() == "TYPE" and value.strip() not in ("TSP",):
            raise TsplibParseError(i, f"unsupported TYPE {value.strip()}")

    if "DIMENSION" not in header:
        raise TsplibParseError(len(lines), "missing DIMENSION")
    if header.get("EDGE_WEIGHT_TYPE") != "EUC_2D":
        raise TsplibParseError(len(lines), "missing EDGE_WEIGHT_TYPE: EUC_2D")
    if section_line is None:
        raise TsplibParseError(len(lines), "missing NODE_COORD_SECTION")
    dim = int(header["DIMENSION"])
    if sorted(coords) != list(range(1, dim + 1)):
        raise TsplibParseError(section_line, f"expected node ids 1..{dim}, found {len(coords)} rows")
    arr = np.array([coords[k] for k in range(1, dim + 1)], dtype=np.float64)
    name = header.get("NAME", Path(path).stem)
    return TsplibFile(name, dim, "EUC_2D", arr, header.get("COMMENT", ""), best_known)


def parse_tsplib(path: str | Path) -> Instance:
    """Normalized instance; use ``read_tsplib`` to keep the original scale."""
    return read_tsplib(path).to_instance()


def _fmt(x: float) -> str:
    return str(int(x)) if float(x).is_integer() else repr(float(x))


def write_tsplib(tsp: TsplibFile, path: str | Path) -> None:
    out = [f"NAME : {tsp.name}"]
    if tsp.comment:
        out.append(f"COMMENT : {tsp.comment}")
    out += ["TYPE : TSP", f"DIMENSION : {tsp.dimension}", "EDGE_WEIGHT_TYPE : EUC_2D", "NODE_COORD_SECTION"]
    out += [f"{k + 1} {_fmt(x)} {_fmt(y)}" for k, (x, y) in enumerate(tsp.coords)]
    out.append("EOF")
    Path(path).write_text("\n".join(out) + "\n")


def read_tour(path: str | Path) -> list[int]:
    """0-based node order from a TSPLIB .tour file."""
    order: list[int] = []
    in_section = False
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
        text = raw.strip()
        if text.startswith("TOUR_SECTION"):
            in_section = True
            continue
        if not in_section or not text:
            continue
        for tok in text.split():
            try:
                v = int(tok)
            except ValueError as exc:
                raise TsplibParseError(lineno, f"bad tour entry {tok!r}") from exc
            if v == -1:
                return order
            order.append(v - 1)
    if not in_section:
        raise TsplibParseError(0, "missing TOUR_SECTION")
    return order


def load_best_known(path: str | Path) -> dict[str, float]:
    """Sidecar CSV with columns ``name,best_known``."""
    with open(path, newline="") as fh:
        return {row["name"]: float(row["best_known"]) for row in csv.DictReader(fh)}
