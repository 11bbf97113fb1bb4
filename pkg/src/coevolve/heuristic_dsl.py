"""Heuristic programs: matrix expressions interpreted into solver guidance.

The interpreter sees only the instance (distances, prizes). Output shape
depends on the target scaffold:

* ``gls_guide``: per-edge badness used to pick which edge GLS penalizes.
* ``aco_eta_tsp`` / ``aco_eta_op``: the visibility matrix of ant colony search,
  forced strictly positive.
"""
from __future__ import annotations

import enum
import hashlib
import json
import math
from dataclasses import dataclass, replace
from typing import Any, Iterator, Mapping, Union

import numpy as np

from .core import Instance, Kind
from .instance_dsl import MAX_ATTEMPTS, MutationWeights
from .seeding import rng_from

MAX_DEPTH = 10
MAX_NODES = 96
EPS = 1e-9
# post-scrub magnitude cap; keeps the positivity shift from overflowing
VALUE_CAP = 1e100
CONST_RANGE = (-1000.0, 1000.0)
PERTURB_FRACTION = 0.3

EDIT_CLASSES = ("constant", "operator", "regenerate")
DEFAULT_WEIGHTS: dict[str, float] = {k: 1.0 for k in EDIT_CLASSES}


class Target(str, enum.Enum):
    GLS_GUIDE = "gls_guide"
    ACO_ETA_TSP = "aco_eta_tsp"
    ACO_ETA_OP = "aco_eta_op"

    @property
    def kind(self) -> Kind:
        return Kind.OP if self is Target.ACO_ETA_OP else Kind.TSP


class HeuristicValidationError(ValueError):
    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}")
        self.path = path


class IncompatibleTargetError(TypeError):
    pass


UNARY_OPS = (
    "neg", "abs", "sqrt", "exp", "log",
    "row_mean", "row_min", "row_max", "rank_row",
    "normalize01", "symmetrize",
)
BINARY_OPS = ("add", "sub", "mul", "div", "min", "max")
LEAF_TAGS = ("dist", "prize_outer", "const")


@dataclass(frozen=True)
class Dist:
    pass


@dataclass(frozen=True)
class PrizeOuter:
    pass


@dataclass(frozen=True)
class Const:
    value: float


@dataclass(frozen=True)
class Unary:
    op: str
    arg: "Expr"


@dataclass(frozen=True)
class Binary:
    op: str
    left: "Expr"
    right: "Expr"


Expr = Union[Dist, PrizeOuter, Const, Unary, Binary]


def SafeDiv(a: Expr, b: Expr) -> Binary:
    return Binary("div", a, b)


@dataclass(frozen=True)
class HeuristicProgram:
    root: Expr
    target: Target

    def __post_init__(self) -> None:
        object.__setattr__(self, "target", Target(self.target))

    def to_dict(self) -> dict[str, Any]:
        return {"target": self.target.value, "root": expr_to_dict(self.root)}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    @property
    def id(self) -> str:
        return hashlib.sha1(self.to_json().encode()).hexdigest()[:12]

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "HeuristicProgram":
        return program_from_dict(d)

    @classmethod
    def from_json(cls, text: str) -> "HeuristicProgram":
        return program_from_dict(json.loads(text))


# --------------------------------------------------------------------------- serialization


def expr_to_dict(e: Expr) -> dict[str, Any]:
    if isinstance(e, Dist):
        return {"op": "dist"}
    if isinstance(e, PrizeOuter):
        return {"op": "prize_outer"}
    if isinstance(e, Const):
        return {"op": "const", "value": e.value}
    if isinstance(e, Unary):
        return {"op": e.op, "arg": expr_to_dict(e.arg)}
    return {"op": e.op, "left": expr_to_dict(e.left), "right": expr_to_dict(e.right)}


def expr_from_dict(d: Any, path: str = "root") -> Expr:
    if not isinstance(d, Mapping) or "op" not in d:
        raise HeuristicValidationError(path, "expected an object with an 'op' tag")
    op = d["op"]
    if op in ("dist", "prize_outer"):
        expected = {"op"}
    elif op == "const":
        expected = {"op", "value"}
    elif op in UNARY_OPS:
        expected = {"op", "arg"}
    elif op in BINARY_OPS:
        expected = {"op", "left", "right"}
    else:
        raise HeuristicValidationError(path, f"unknown operator {op!r}")
    if set(d) != expected:
        raise HeuristicValidationError(path, f"{op!r} takes fields {sorted(expected)}")
    if op == "dist":
        return Dist()
    if op == "prize_outer":
        return PrizeOuter()
    if op == "const":
        v = d["value"]
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            raise HeuristicValidationError(f"{path}.value", "expected a number")
        return Const(float(v))
    if op in UNARY_OPS:
        return Unary(op, expr_from_dict(d["arg"], f"{path}.arg"))
    return Binary(op, expr_from_dict(d["left"], f"{path}.left"),
                  expr_from_dict(d["right"], f"{path}.right"))


def program_from_dict(d: Mapping[str, Any]) -> HeuristicProgram:
    if not isinstance(d, Mapping) or set(d) != {"target", "root"}:
        raise HeuristicValidationError("program", "expected fields {'target', 'root'}")
    try:
        target = Target(d["target"])
    except ValueError:
        raise HeuristicValidationError("program.target", f"unknown target {d['target']!r}") from None
    program = HeuristicProgram(expr_from_dict(d["root"]), target)
    validate(program)
    return program


# --------------------------------------------------------------------------- structure


def iter_exprs(e: Expr, path: str = "root") -> Iterator[tuple[str, Expr]]:
    yield path, e
    if isinstance(e, Unary):
        yield from iter_exprs(e.arg, f"{path}.arg")
    elif isinstance(e, Binary):
        yield from iter_exprs(e.left, f"{path}.left")
        yield from iter_exprs(e.right, f"{path}.right")


def depth(e: Expr) -> int:
    if isinstance(e, Unary):
        return 1 + depth(e.arg)
    if isinstance(e, Binary):
        return 1 + max(depth(e.left), depth(e.right))
    return 1


def node_count(e: Expr) -> int:
    return sum(1 for _ in iter_exprs(e))


def validate(program: HeuristicProgram) -> None:
    root = program.root
    if depth(root) > MAX_DEPTH:
        raise HeuristicValidationError("root", f"depth exceeds {MAX_DEPTH}")
    if node_count(root) > MAX_NODES:
        raise HeuristicValidationError("root", f"node count exceeds {MAX_NODES}")
    for path, e in iter_exprs(root):
        if isinstance(e, PrizeOuter) and program.target is not Target.ACO_ETA_OP:
            raise HeuristicValidationError(path, "prize_outer is only allowed for aco_eta_op")
        if isinstance(e, Const) and not (CONST_RANGE[0] <= e.value <= CONST_RANGE[1]):
            raise HeuristicValidationError(path, f"constant {e.value!r} out of range")
        if isinstance(e, Unary) and e.op not in UNARY_OPS:
            raise HeuristicValidationError(path, f"unknown unary {e.op!r}")
        if isinstance(e, Binary) and e.op not in BINARY_OPS:
            raise HeuristicValidationError(path, f"unknown binary {e.op!r}")
        if not isinstance(e, (Dist, PrizeOuter, Const, Unary, Binary)):
            raise HeuristicValidationError(path, f"unknown node {e!r}")


def is_valid(program: HeuristicProgram) -> bool:
    try:
        validate(program)
    except HeuristicValidationError:
        return False
    return True


# --------------------------------------------------------------------------- interpretation


def _offdiag(n: int) -> np.ndarray:
    return ~np.eye(n, dtype=bool)


def _row_reduce(m: np.ndarray, fn) -> np.ndarray:
    n = m.shape[0]
    off = m[_offdiag(n)].reshape(n, n - 1)
    return np.repeat(fn(off, axis=1)[:, None], n, axis=1)


def _rank_row(m: np.ndarray) -> np.ndarray:
    n = m.shape[0]
    order = np.argsort(m, axis=1, kind="stable")
    ranks = np.empty_like(order)
    rows = np.arange(n)[:, None]
    ranks[rows, order] = np.arange(n)[None, :]
    return ranks.astype(np.float64)


def _normalize01(m: np.ndarray) -> np.ndarray:
    off = m[_offdiag(m.shape[0])]
    lo, hi = off.min(), off.max()
    span = hi - lo
    if not np.isfinite(span) or span <= 0:
        return np.zeros_like(m)
    return (m - lo) / span


def _eval(e: Expr, dist: np.ndarray, prizes: np.ndarray | None) -> np.ndarray:
    n = dist.shape[0]
    if isinstance(e, Dist):
        return dist.copy()
    if isinstance(e, PrizeOuter):
        return np.repeat(prizes[None, :], n, axis=0)
    if isinstance(e, Const):
        return np.full((n, n), e.value)
    if isinstance(e, Unary):
        a = _eval(e.arg, dist, prizes)
        op = e.op
        if op == "neg":
            return -a
        if op == "abs":
            return np.abs(a)
        if op == "sqrt":
            return np.sqrt(a)
        if op == "exp":
            return np.exp(np.clip(a, -30.0, 30.0))
        if op == "log":
            return np.log(EPS + np.abs(a))
        if op == "row_mean":
            return _row_reduce(a, np.mean)
        if op == "row_min":
            return _row_reduce(a, np.min)
        if op == "row_max":
            return _row_reduce(a, np.max)
        if op == "rank_row":
            return _rank_row(a)
        if op == "normalize01":
            return _normalize01(a)
        if op == "symmetrize":
            return (a + a.T) / 2
        raise HeuristicValidationError("root", f"unknown unary {op!r}")
    a = _eval(e.left, dist, prizes)
    b = _eval(e.right, dist, prizes)
    op = e.op
    if op == "add":
        return a + b
    if op == "sub":
        return a - b
    if op == "mul":
        return a * b
    if op == "div":
        # floor the denominator's magnitude, keep its sign
        den = np.where(np.abs(b) < EPS, np.where(b < 0, -EPS, EPS), b)
        return a / den
    if op == "min":
        return np.minimum(a, b)
    if op == "max":
        return np.maximum(a, b)
    raise HeuristicValidationError("root", f"unknown binary {op!r}")


def check_compatible(program: HeuristicProgram, instance: Instance) -> None:
    if program.target.kind is not instance.kind:
        raise IncompatibleTargetError(
            f"target {program.target.value} cannot run on a {instance.kind.value} instance"
        )


def interpret(program: HeuristicProgram, instance: Instance) -> np.ndarray:
    """Evaluate a heuristic program on an instance into an n-by-n matrix."""
    check_compatible(program, instance)
    validate(program)
    with np.errstate(all="ignore"):
        m = _eval(program.root, instance.dist, instance.prizes)
        m = np.where(np.isfinite(m), m, 0.0)
        m = np.clip(m, -VALUE_CAP, VALUE_CAP)
        if program.target is Target.GLS_GUIDE:
            return (m + m.T) / 2
        off = _offdiag(instance.n)
        lo = m[off].min()
        if lo < EPS:
            m = m + (EPS - lo)
            m[off] = np.maximum(m[off], EPS)
        np.fill_diagonal(m, EPS)
    return m


# --------------------------------------------------------------------------- baselines


def baseline_heuristic(target: Target | str) -> HeuristicProgram:
    target = Target(target)
    if target is Target.GLS_GUIDE:
        return HeuristicProgram(Dist(), target)
    if target is Target.ACO_ETA_TSP:
        return HeuristicProgram(SafeDiv(Const(1.0), Dist()), target)
    return HeuristicProgram(SafeDiv(PrizeOuter(), Dist()), target)


# --------------------------------------------------------------------------- mutation


def random_expr(rng: np.random.Generator, target: Target, max_depth: int = 4) -> Expr:
    """Grow a random expression from the grammar."""
    leaf_p = 0.3 if max_depth > 1 else 1.0
    if rng.random() < leaf_p:
        r = rng.random()
        if target is Target.ACO_ETA_OP and r < 0.3:
            return PrizeOuter()
        if r < 0.7:
            return Dist()
        return Const(float(np.round(rng.uniform(-2.0, 2.0), 3)))
    if rng.random() < 0.4:
        op = UNARY_OPS[int(rng.integers(len(UNARY_OPS)))]
        return Unary(op, random_expr(rng, target, max_depth - 1))
    op = BINARY_OPS[int(rng.integers(len(BINARY_OPS)))]
    return Binary(op, random_expr(rng, target, max_depth - 1), random_expr(rng, target, max_depth - 1))


def random_heuristic(rng: np.random.Generator, target: Target | str, max_depth: int = 4) -> HeuristicProgram:
    target = Target(target)
    return HeuristicProgram(random_expr(rng, target, max_depth), target)


def _replace_at(e: Expr, target: str, new: Expr, path: str = "root") -> Expr:
    if path == target:
        return new
    if isinstance(e, Unary):
        return replace(e, arg=_replace_at(e.arg, target, new, f"{path}.arg"))
    if isinstance(e, Binary):
        return replace(
            e,
            left=_replace_at(e.left, target, new, f"{path}.left"),
            right=_replace_at(e.right, target, new, f"{path}.right"),
        )
    return e


def _perturb_const(c: float, rng: np.random.Generator) -> float:
    while True:
        u = rng.uniform(-PERTURB_FRACTION, PERTURB_FRACTION)
        if u == 0.0:
            continue
        v = c * (1.0 + u) if abs(c) >= 1e-3 else c + 0.1 * u
        v = float(min(max(v, CONST_RANGE[0]), CONST_RANGE[1]))
        if v != c:
            return v


def _edit_constant(program: HeuristicProgram, rng: np.random.Generator) -> HeuristicProgram | None:
    consts = [(p, e) for p, e in iter_exprs(program.root) if isinstance(e, Const)]
    if not consts:
        return None
    path, e = consts[int(rng.integers(len(consts)))]
    new = Const(_perturb_const(e.value, rng))
    return replace(program, root=_replace_at(program.root, path, new))


def _edit_operator(program: HeuristicProgram, rng: np.random.Generator) -> HeuristicProgram | None:
    nodes = list(iter_exprs(program.root))
    ops_only = [(p, e) for p, e in nodes if isinstance(e, (Unary, Binary))]
    # switch an operator when there is one; a bare leaf swaps with another leaf
    path, e = (ops_only or nodes)[int(rng.integers(len(ops_only or nodes)))]
    if isinstance(e, Unary):
        ops = [o for o in UNARY_OPS if o != e.op]
        new: Expr = replace(e, op=ops[int(rng.integers(len(ops)))])
    elif isinstance(e, Binary):
        ops = [o for o in BINARY_OPS if o != e.op]
        new = replace(e, op=ops[int(rng.integers(len(ops)))])
    else:
        leaves: list[Expr] = [Dist(), Const(1.0)]
        if program.target is Target.ACO_ETA_OP:
            leaves.append(PrizeOuter())
        leaves = [x for x in leaves if type(x) is not type(e)]
        new = leaves[int(rng.integers(len(leaves)))]
    return replace(program, root=_replace_at(program.root, path, new))


def _edit_regenerate(program: HeuristicProgram, rng: np.random.Generator) -> HeuristicProgram:
    nodes = list(iter_exprs(program.root))
    path, _ = nodes[int(rng.integers(len(nodes)))]
    level = path.count(".")
    budget = max(1, min(4, MAX_DEPTH - level))
    new = random_expr(rng, program.target, budget)
    return replace(program, root=_replace_at(program.root, path, new))


_EDITS = {
    "constant": _edit_constant,
    "operator": _edit_operator,
    "regenerate": _edit_regenerate,
}


def _pick_edit(weights: MutationWeights, rng: np.random.Generator) -> str:
    w = np.array([max(float(weights.get(k, 0.0)), 0.0) for k in EDIT_CLASSES])
    if w.sum() <= 0:
        w = np.ones(len(EDIT_CLASSES))
    return EDIT_CLASSES[int(rng.choice(len(EDIT_CLASSES), p=w / w.sum()))]


def mutate_heuristic_with_class(
    program: HeuristicProgram, rng_seed: int, weights: MutationWeights | None = None
) -> tuple[HeuristicProgram, str]:
    validate(program)
    rng = rng_from(rng_seed)
    weights = DEFAULT_WEIGHTS if weights is None else weights
    for _ in range(MAX_ATTEMPTS):
        edit = _pick_edit(weights, rng)
        child = _EDITS[edit](program, rng)
        if child is not None and child != program and is_valid(child):
            return child, edit
    child = _edit_constant(program, rng)
    if child is not None and is_valid(child):
        return child, "constant"
    # no constants to perturb: splice a scaled copy so the program still moves
    root = Binary("mul", program.root, Const(float(1.0 + rng.uniform(0.01, PERTURB_FRACTION))))
    child = replace(program, root=root)
    if not is_valid(child):
        child = replace(program, root=Binary("mul", Dist(), Const(1.0)))
    return child, "constant"


def mutate_heuristic(
    program: HeuristicProgram, rng_seed: int, weights: MutationWeights | None = None
) -> HeuristicProgram:
    return mutate_heuristic_with_class(program, rng_seed, weights)[0]


def family(program: HeuristicProgram) -> str:
    ops = {e.op for _, e in iter_exprs(program.root) if isinstance(e, (Unary, Binary))}
    if not ops:
        return "leaf"
    return "+".join(sorted(ops))
