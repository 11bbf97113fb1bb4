"""Domain types and Euclidean cost primitives shared by the whole package."""
from __future__ import annotations

import enum
import hashlib
import json
import math
from dataclasses import dataclass
from typing import Any, Sequence

import numpy as np


class InstanceError(ValueError):
    """Raised when an instance violates its structural invariants."""


class InvalidSolutionError(ValueError):
    """Raised when a candidate tour or route is not a valid solution."""


class Kind(str, enum.Enum):
    TSP = "tsp"
    OP = "op"


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=np.float64, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Instance:
    """A planar node set; OP instances also carry prizes and a length budget.

    Node 0 is the depot for OP. Coordinates are not clamped here; generators
    and parsers are responsible for putting them into the unit box.
    """

    id: str
    kind: Kind
    coords: np.ndarray
    prizes: np.ndarray | None = None
    max_len: float | None = None

    def __post_init__(self) -> None:
        kind = Kind(self.kind)
        object.__setattr__(self, "kind", kind)
        coords = _frozen(self.coords)
        if coords.ndim != 2 or coords.shape[1] != 2:
            raise InstanceError(f"coords must have shape (n, 2), got {coords.shape}")
        if not np.all(np.isfinite(coords)):
            raise InstanceError("coords must be finite")
        n = coords.shape[0]
        object.__setattr__(self, "coords", coords)
        if kind is Kind.TSP:
            if n < 2:
                raise InstanceError("a TSP instance needs at least 2 nodes")
            if self.prizes is not None or self.max_len is not None:
                raise InstanceError("TSP instances carry no prizes or max_len")
        else:
            if n < 3:
                raise InstanceError("an OP instance needs at least 3 nodes")
            if self.prizes is None or self.max_len is None:
                raise InstanceError("OP instances need prizes and max_len")
            prizes = _frozen(self.prizes)
            if prizes.shape != (n,):
                raise InstanceError(f"prizes must have length {n}")
            if np.any(prizes < 0) or not np.all(np.isfinite(prizes)):
                raise InstanceError("prizes must be finite and nonnegative")
            if prizes[0] != 0:
                raise InstanceError("the depot prize (prizes[0]) must be 0")
            max_len = float(self.max_len)
            if not (max_len > 0 and math.isfinite(max_len)):
                raise InstanceError("max_len must be a positive real")
            object.__setattr__(self, "prizes", prizes)
            object.__setattr__(self, "max_len", max_len)

    @property
    def n(self) -> int:
        return self.coords.shape[0]

    @property
    def depot(self) -> int:
        return 0

    @property
    def dist(self) -> np.ndarray:
        """Cached read-only distance matrix."""
        d = self.__dict__.get("_dist")
        if d is None:
            d = distance_matrix(self)
            object.__setattr__(self, "_dist", d)
        return d

    def content_hash(self) -> str:
        h = hashlib.sha1(self.kind.value.encode())
        h.update(self.coords.tobytes())
        if self.prizes is not None:
            h.update(self.prizes.tobytes())
            h.update(repr(self.max_len).encode())
        return h.hexdigest()[:16]

    def with_coords(self, coords: np.ndarray, id: str | None = None) -> "Instance":
        return Instance(id or self.id, self.kind, coords, self.prizes, self.max_len)

    def to_dict(self) -> dict[str, Any]:
        d: dict[str, Any] = {
            "id": self.id,
            "kind": self.kind.value,
            "coords": self.coords.tolist(),
        }
        if self.kind is Kind.OP:
            d["prizes"] = self.prizes.tolist()
            d["max_len"] = self.max_len
        return d

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "Instance":
        allowed = {"id", "kind", "coords", "prizes", "max_len"}
        unknown = set(d) - allowed
        if unknown:
            raise InstanceError(f"unknown instance fields: {sorted(unknown)}")
        for key in ("id", "kind", "coords"):
            if key not in d:
                raise InstanceError(f"missing instance field {key!r}")
        if d["kind"] not in ("tsp", "op"):
            raise InstanceError(f"kind must be 'tsp' or 'op', got {d['kind']!r}")
        return cls(
            id=str(d["id"]),
            kind=Kind(d["kind"]),
            coords=np.asarray(d["coords"], dtype=np.float64).reshape(-1, 2),
            prizes=None if d.get("prizes") is None else np.asarray(d["prizes"], dtype=np.float64),
            max_len=d.get("max_len"),
        )

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "Instance":
        return cls.from_dict(json.loads(text))


@dataclass(frozen=True)
class Tour:
    order: tuple[int, ...]
    length: float

    def to_dict(self) -> dict[str, Any]:
        return {"order": list(self.order), "length": self.length}


@dataclass(frozen=True)
class OpRoute:
    """Depot-first visiting sequence; the closing edge back to node 0 is implicit."""

    order: tuple[int, ...]
    length: float
    collected_prize: float

    def to_dict(self) -> dict[str, Any]:
        return {
            "order": list(self.order),
            "length": self.length,
            "collected_prize": self.collected_prize,
        }


def distance_matrix(instance: Instance) -> np.ndarray:
    c = instance.coords
    diff = c[:, None, :] - c[None, :, :]
    d = np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))
    d.setflags(write=False)
    return d


def check_permutation(order: Sequence[int], n: int) -> np.ndarray:
    arr = np.asarray(order)
    if arr.ndim != 1 or arr.shape[0] != n or not np.issubdtype(arr.dtype, np.integer):
        raise InvalidSolutionError(f"expected a permutation of 0..{n - 1}")
    seen = np.zeros(n, dtype=bool)
    if arr.min() < 0 or arr.max() >= n:
        raise InvalidSolutionError(f"node index out of range 0..{n - 1}")
    seen[arr] = True
    if not seen.all():
        raise InvalidSolutionError("order repeats a node")
    return arr.astype(np.int64)


def tour_cost(instance: Instance, order: Sequence[int]) -> float:
    """Closed-tour length.

    Uses an exactly rounded sum so the value does not depend on where the
    tour starts or which direction it runs.
    """
    if instance.kind is not Kind.TSP:
        raise InvalidSolutionError("tour_cost expects a TSP instance")
    arr = check_permutation(order, instance.n)
    d = instance.dist
    return math.fsum(d[arr, np.roll(arr, -1)].tolist())


def route_length(instance: Instance, order: Sequence[int]) -> float:
    """Length of a depot-first route closed back to the depot."""
    arr = np.asarray(order, dtype=np.int64)
    if arr.size <= 1:
        return 0.0
    d = instance.dist
    return math.fsum(d[arr, np.roll(arr, -1)].tolist())


def make_op_route(instance: Instance, order: Sequence[int]) -> OpRoute:
    arr = [int(i) for i in order]
    if not arr or arr[0] != 0:
        raise InvalidSolutionError("an OP route starts at the depot (node 0)")
    if len(set(arr)) != len(arr):
        raise InvalidSolutionError("an OP route visits a node twice")
    if any(i < 0 or i >= instance.n for i in arr):
        raise InvalidSolutionError("node index out of range")
    length = route_length(instance, arr)
    prize = math.fsum(instance.prizes[arr].tolist())
    return OpRoute(tuple(arr), length, prize)


def make_tour(instance: Instance, order: Sequence[int]) -> Tour:
    arr = check_permutation(order, instance.n)
    return Tour(tuple(int(i) for i in arr), tour_cost(instance, arr))
