"""Instance generators as a closed AST over spatial sampling primitives.

A ``GeneratorProgram`` is executed with ``generate(program, n, seed, kind)``;
``mutate_generator`` applies exactly one AST edit. Programs serialize to a
tagged-union JSON form, e.g. ``{"node": "mix", "weights": [1, 2], "children": [...]}``.
"""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import MISSING, dataclass, fields, replace
from typing import Any, Iterator, Mapping, Union

import numpy as np

from .core import Instance, Kind
from .seeding import rng_from

FORMAT_VERSION = 1
MAX_DEPTH = 8
MAX_NODES = 64
PERTURB_FRACTION = 0.3
MAX_ATTEMPTS = 16

EDIT_CLASSES = ("parameter", "replace", "insert", "delete")
DEFAULT_WEIGHTS: dict[str, float] = {k: 1.0 for k in EDIT_CLASSES}

MutationWeights = Mapping[str, float]


class ProgramValidationError(ValueError):
    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}")
        self.path = path


# --------------------------------------------------------------------------- nodes


@dataclass(frozen=True)
class UniformSquare:
    pass


@dataclass(frozen=True)
class GaussianClusters:
    k: int = 4
    spread: float = 0.05


@dataclass(frozen=True)
class Ring:
    radius: float = 0.4
    jitter: float = 0.0


@dataclass(frozen=True)
class Spiral:
    turns: float = 2.0
    jitter: float = 0.01


@dataclass(frozen=True)
class Grid:
    jitter: float = 0.0


@dataclass(frozen=True)
class Mix:
    weights: tuple[float, ...]
    children: tuple["Node", ...]


@dataclass(frozen=True)
class Transform:
    a: float
    b: float
    c: float
    d: float
    tx: float
    ty: float
    child: "Node"


@dataclass(frozen=True)
class Perturb:
    sigma: float
    child: "Node"


Node = Union[UniformSquare, GaussianClusters, Ring, Spiral, Grid, Mix, Transform, Perturb]
LEAVES = (UniformSquare, GaussianClusters, Ring, Spiral, Grid)
COMPOSITES = (Mix, Transform, Perturb)

PRIZE_RULES = ("uniform", "distance", "cluster")


@dataclass(frozen=True)
class PrizeRule:
    rule: str = "uniform"
    scale: float = 1.0


@dataclass(frozen=True)
class BudgetRule:
    factor: float = 0.5


@dataclass(frozen=True)
class GeneratorProgram:
    root: Node
    prize: PrizeRule | None = None
    budget: BudgetRule | None = None
    version: int = FORMAT_VERSION

    def to_dict(self) -> dict[str, Any]:
        d: dict[str, Any] = {"version": self.version, "root": node_to_dict(self.root)}
        if self.prize is not None:
            d["prize"] = {"rule": self.prize.rule, "scale": self.prize.scale}
        if self.budget is not None:
            d["budget"] = {"factor": self.budget.factor}
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    @property
    def id(self) -> str:
        return hashlib.sha1(self.to_json().encode()).hexdigest()[:12]

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "GeneratorProgram":
        return program_from_dict(d)

    @classmethod
    def from_json(cls, text: str) -> "GeneratorProgram":
        return program_from_dict(json.loads(text))


# Declared parameter ranges: (lo, hi, lo_exclusive)
RANGES: dict[tuple[type, str], tuple[float, float, bool]] = {
    (GaussianClusters, "k"): (1, 16, False),
    (GaussianClusters, "spread"): (0.0, 0.5, True),
    (Ring, "radius"): (0.0, 0.5, True),
    (Ring, "jitter"): (0.0, 0.2, False),
    (Spiral, "turns"): (0.5, 6.0, False),
    (Spiral, "jitter"): (0.0, 0.2, False),
    (Grid, "jitter"): (0.0, 0.2, False),
    (Transform, "a"): (-2.0, 2.0, False),
    (Transform, "b"): (-2.0, 2.0, False),
    (Transform, "c"): (-2.0, 2.0, False),
    (Transform, "d"): (-2.0, 2.0, False),
    (Transform, "tx"): (-0.5, 0.5, False),
    (Transform, "ty"): (-0.5, 0.5, False),
    (Perturb, "sigma"): (0.0, 0.2, False),
    (PrizeRule, "scale"): (0.1, 10.0, False),
    (BudgetRule, "factor"): (0.5, 4.0, False),
}
WEIGHT_RANGE = (0.05, 20.0)
MIN_ABS_DET = 0.05
# smallest value kept for lower-exclusive ranges after clamping
OPEN_FLOOR = 1e-3

NODE_TAGS: dict[type, str] = {
    UniformSquare: "uniform",
    GaussianClusters: "clusters",
    Ring: "ring",
    Spiral: "spiral",
    Grid: "grid",
    Mix: "mix",
    Transform: "transform",
    Perturb: "perturb",
}
TAG_TYPES = {v: k for k, v in NODE_TAGS.items()}


def scalar_params(node: Any) -> list[str]:
    return [f.name for f in fields(node) if (type(node), f.name) in RANGES]


# --------------------------------------------------------------------------- serialization


def node_to_dict(node: Node) -> dict[str, Any]:
    d: dict[str, Any] = {"node": NODE_TAGS[type(node)]}
    for f in fields(node):
        v = getattr(node, f.name)
        if f.name == "children":
            d["children"] = [node_to_dict(c) for c in v]
        elif f.name == "child":
            d["child"] = node_to_dict(v)
        elif f.name == "weights":
            d["weights"] = list(v)
        else:
            d[f.name] = v
    return d


def _num(value: Any, path: str, integer: bool = False) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ProgramValidationError(path, f"expected a number, got {value!r}")
    if integer:
        if float(value) != int(value):
            raise ProgramValidationError(path, f"expected an integer, got {value!r}")
        return int(value)
    return float(value)


def node_from_dict(d: Any, path: str = "root") -> Node:
    if not isinstance(d, Mapping) or "node" not in d:
        raise ProgramValidationError(path, "expected an object with a 'node' tag")
    tag = d["node"]
    if tag not in TAG_TYPES:
        raise ProgramValidationError(path, f"unknown node type {tag!r}")
    cls = TAG_TYPES[tag]
    names = {f.name for f in fields(cls)}
    unknown = set(d) - names - {"node"}
    if unknown:
        raise ProgramValidationError(path, f"unknown fields {sorted(unknown)} for {tag!r}")
    kwargs: dict[str, Any] = {}
    for f in fields(cls):
        if f.name not in d:
            if f.default is not MISSING:
                continue
            raise ProgramValidationError(path, f"missing field {f.name!r}")
        v = d[f.name]
        if f.name == "children":
            if not isinstance(v, list):
                raise ProgramValidationError(path, "children must be a list")
            kwargs["children"] = tuple(
                node_from_dict(c, f"{path}.children[{i}]") for i, c in enumerate(v)
            )
        elif f.name == "child":
            kwargs["child"] = node_from_dict(v, f"{path}.child")
        elif f.name == "weights":
            if not isinstance(v, list):
                raise ProgramValidationError(path, "weights must be a list")
            kwargs["weights"] = tuple(_num(w, f"{path}.weights[{i}]") for i, w in enumerate(v))
        else:
            kwargs[f.name] = _num(v, f"{path}.{f.name}", integer=(f.name == "k"))
    return cls(**kwargs)


def program_from_dict(d: Mapping[str, Any]) -> GeneratorProgram:
    if not isinstance(d, Mapping):
        raise ProgramValidationError("program", "expected an object")
    unknown = set(d) - {"version", "root", "prize", "budget"}
    if unknown:
        raise ProgramValidationError("program", f"unknown fields {sorted(unknown)}")
    if "root" not in d:
        raise ProgramValidationError("program", "missing field 'root'")
    version = d.get("version", FORMAT_VERSION)
    if version != FORMAT_VERSION:
        raise ProgramValidationError("program.version", f"unsupported version {version!r}")
    prize = budget = None
    if d.get("prize") is not None:
        p = d["prize"]
        if not isinstance(p, Mapping) or set(p) - {"rule", "scale"}:
            raise ProgramValidationError("prize", "expected {'rule', 'scale'}")
        prize = PrizeRule(str(p.get("rule", "uniform")), _num(p.get("scale", 1.0), "prize.scale"))
    if d.get("budget") is not None:
        b = d["budget"]
        if not isinstance(b, Mapping) or set(b) - {"factor"}:
            raise ProgramValidationError("budget", "expected {'factor'}")
        budget = BudgetRule(_num(b.get("factor", 0.5), "budget.factor"))
    program = GeneratorProgram(node_from_dict(d["root"]), prize, budget, FORMAT_VERSION)
    validate(program)
    return program


# --------------------------------------------------------------------------- validation


def iter_nodes(node: Node, path: str = "root") -> Iterator[tuple[str, Node]]:
    yield path, node
    if isinstance(node, Mix):
        for i, c in enumerate(node.children):
            yield from iter_nodes(c, f"{path}.children[{i}]")
    elif isinstance(node, (Transform, Perturb)):
        yield from iter_nodes(node.child, f"{path}.child")


def depth(node: Node) -> int:
    if isinstance(node, Mix):
        return 1 + max(depth(c) for c in node.children)
    if isinstance(node, (Transform, Perturb)):
        return 1 + depth(node.child)
    return 1


def node_count(node: Node) -> int:
    return sum(1 for _ in iter_nodes(node))


def _in_range(cls: type, name: str, value: float) -> bool:
    lo, hi, lo_open = RANGES[(cls, name)]
    if not math.isfinite(value):
        return False
    return (value > lo if lo_open else value >= lo) and value <= hi


def validate(program: GeneratorProgram) -> None:
    """Raise ``ProgramValidationError`` naming the first offending node."""
    if not isinstance(program, GeneratorProgram):
        raise ProgramValidationError("program", "not a GeneratorProgram")
    root = program.root
    if depth(root) > MAX_DEPTH:
        raise ProgramValidationError("root", f"depth {depth(root)} exceeds {MAX_DEPTH}")
    if node_count(root) > MAX_NODES:
        raise ProgramValidationError("root", f"node count exceeds {MAX_NODES}")
    for path, node in iter_nodes(root):
        if type(node) not in NODE_TAGS:
            raise ProgramValidationError(path, f"unknown node {node!r}")
        for name in scalar_params(node):
            v = getattr(node, name)
            if not _in_range(type(node), name, v):
                raise ProgramValidationError(f"{path}.{name}", f"value {v!r} out of range")
        if isinstance(node, GaussianClusters) and int(node.k) != node.k:
            raise ProgramValidationError(f"{path}.k", "k must be an integer")
        if isinstance(node, Mix):
            if not 2 <= len(node.children) <= 5:
                raise ProgramValidationError(path, "mix needs 2 to 5 children")
            if len(node.weights) != len(node.children):
                raise ProgramValidationError(path, "one weight per child required")
            if not all(math.isfinite(w) and w > 0 for w in node.weights):
                raise ProgramValidationError(f"{path}.weights", "weights must be positive")
        if isinstance(node, Transform) and abs(node.a * node.d - node.b * node.c) < MIN_ABS_DET:
            raise ProgramValidationError(path, f"|det| below {MIN_ABS_DET}")
    if program.prize is not None:
        if program.prize.rule not in PRIZE_RULES:
            raise ProgramValidationError("prize.rule", f"unknown prize rule {program.prize.rule!r}")
        if not _in_range(PrizeRule, "scale", program.prize.scale):
            raise ProgramValidationError("prize.scale", "out of range")
    if program.budget is not None and not _in_range(BudgetRule, "factor", program.budget.factor):
        raise ProgramValidationError("budget.factor", "out of range")


def is_valid(program: GeneratorProgram) -> bool:
    try:
        validate(program)
    except ProgramValidationError:
        return False
    return True


# --------------------------------------------------------------------------- sampling


def _sample(node: Node, m: int, rng: np.random.Generator) -> np.ndarray:
    if isinstance(node, UniformSquare):
        return rng.random((m, 2))
    if isinstance(node, GaussianClusters):
        centers = 0.1 + 0.8 * rng.random((int(node.k), 2))
        labels = rng.integers(0, int(node.k), size=m)
        return centers[labels] + node.spread * rng.standard_normal((m, 2))
    if isinstance(node, Ring):
        theta = 2 * np.pi * rng.random(m)
        r = node.radius + node.jitter * rng.standard_normal(m)
        return 0.5 + r[:, None] * np.column_stack([np.cos(theta), np.sin(theta)])
    if isinstance(node, Spiral):
        t = rng.random(m)
        theta = 2 * np.pi * node.turns * t
        r = 0.45 * t
        pts = 0.5 + r[:, None] * np.column_stack([np.cos(theta), np.sin(theta)])
        return pts + node.jitter * rng.standard_normal((m, 2))
    if isinstance(node, Grid):
        side = max(1, math.ceil(math.sqrt(m)))
        cells = rng.permutation(side * side)[:m]
        pts = (np.column_stack([cells % side, cells // side]) + 0.5) / side
        return pts + node.jitter * rng.standard_normal((m, 2))
    if isinstance(node, Mix):
        w = np.asarray(node.weights, dtype=np.float64)
        labels = rng.choice(len(node.children), size=m, p=w / w.sum())
        out = np.empty((m, 2))
        for c, child in enumerate(node.children):
            idx = np.flatnonzero(labels == c)
            if idx.size:
                out[idx] = _sample(child, idx.size, rng)
        return out
    if isinstance(node, Transform):
        pts = _sample(node.child, m, rng) - 0.5
        A = np.array([[node.a, node.b], [node.c, node.d]])
        return pts @ A.T + 0.5 + np.array([node.tx, node.ty])
    if isinstance(node, Perturb):
        pts = _sample(node.child, m, rng)
        return pts + node.sigma * rng.standard_normal((m, 2))
    raise ProgramValidationError("root", f"unknown node {node!r}")


def sample_points(program: GeneratorProgram, n: int, seed: int) -> np.ndarray:
    """Raw coordinates before clamping and normalization."""
    validate(program)
    return _sample(program.root, n, rng_from(seed))


def normalize_coords(pts: np.ndarray) -> np.ndarray:
    """Clamp to the unit box, then min-max normalize each axis (flat axis -> 0.5)."""
    pts = np.clip(pts, 0.0, 1.0)
    out = np.empty_like(pts)
    for ax in range(2):
        col = pts[:, ax]
        lo, hi = col.min(), col.max()
        out[:, ax] = 0.5 if hi - lo <= 0 else (col - lo) / (hi - lo)
    return out


def _prizes(rule: PrizeRule, coords: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    n = coords.shape[0]
    if rule.rule == "uniform":
        p = rng.random(n)
    elif rule.rule == "distance":
        d0 = np.hypot(*(coords - coords[0]).T)
        p = 0.01 + 0.99 * d0 / max(d0.max(), 1e-12)
    else:
        diff = coords[:, None, :] - coords[None, :, :]
        close = (np.einsum("ijk,ijk->ij", diff, diff) <= 0.1**2).sum(axis=1) - 1
        p = 0.5 * (1.0 + close / max(close.max(), 1))
    p = rule.scale * p
    p[0] = 0.0
    return p


def generate(
    program: GeneratorProgram,
    n: int,
    seed: int,
    kind: Kind | str = Kind.TSP,
    normalize: bool = True,
) -> Instance:
    """Execute a generator program. Pure in (program, n, seed, kind)."""
    kind = Kind(kind)
    if not 4 <= n <= 10000:
        raise ValueError(f"n must be within [4, 10000], got {n}")
    validate(program)
    rng = rng_from(seed)
    pts = _sample(program.root, n, rng)
    coords = normalize_coords(pts) if normalize else pts
    iid = f"{program.id}-{kind.value}-n{n}-s{seed}"
    if kind is Kind.TSP:
        return Instance(iid, kind, coords)
    prize = program.prize or PrizeRule()
    budget = program.budget or BudgetRule()
    prizes = _prizes(prize, coords, rng)
    return Instance(iid, kind, coords, prizes, budget.factor * math.sqrt(n))


def canonical_uniform() -> GeneratorProgram:
    """The plain uniform-square control generator."""
    return GeneratorProgram(UniformSquare())


# --------------------------------------------------------------------------- mutation


def _clamp_param(cls: type, name: str, value: float) -> float:
    lo, hi, lo_open = RANGES[(cls, name)]
    if name == "k":
        return int(min(max(round(value), lo), hi))
    if lo_open:
        lo = lo + OPEN_FLOOR
    return float(min(max(value, lo), hi))


def random_leaf(rng: np.random.Generator, exclude: type | None = None) -> Node:
    choices = [c for c in LEAVES if c is not exclude]
    cls = choices[int(rng.integers(len(choices)))]
    if cls is UniformSquare:
        return UniformSquare()
    if cls is GaussianClusters:
        return GaussianClusters(int(rng.integers(1, 9)), float(rng.uniform(0.01, 0.1)))
    if cls is Ring:
        return Ring(float(rng.uniform(0.1, 0.5)), float(rng.uniform(0.0, 0.03)))
    if cls is Spiral:
        return Spiral(float(rng.uniform(0.5, 6.0)), float(rng.uniform(0.0, 0.03)))
    return Grid(float(rng.uniform(0.0, 0.02)))


def random_wrapper(child: Node, rng: np.random.Generator) -> Node:
    which = int(rng.integers(3))
    if which == 0:
        while True:
            a, b, c, d = rng.uniform(-1.5, 1.5, size=4)
            if abs(a * d - b * c) >= 0.2:
                break
        tx, ty = rng.uniform(-0.2, 0.2, size=2)
        return Transform(float(a), float(b), float(c), float(d), float(tx), float(ty), child)
    if which == 1:
        return Perturb(float(rng.uniform(0.0, 0.05)), child)
    return Mix((1.0, float(rng.uniform(0.2, 2.0))), (child, random_leaf(rng)))


def _replace_at(node: Node, target: str, new: Node, path: str = "root") -> Node:
    if path == target:
        return new
    if isinstance(node, Mix):
        return replace(
            node,
            children=tuple(
                _replace_at(c, target, new, f"{path}.children[{i}]")
                for i, c in enumerate(node.children)
            ),
        )
    if isinstance(node, (Transform, Perturb)):
        return replace(node, child=_replace_at(node.child, target, new, f"{path}.child"))
    return node


def _perturb_value(value: float, cls: type, name: str, rng: np.random.Generator) -> float:
    if name == "k":
        step = 1 if rng.random() < 0.5 else -1
        return _clamp_param(cls, name, value + step)
    lo, hi, _ = RANGES[(cls, name)]
    scale = max(abs(value), 0.05 * (hi - lo))
    while True:
        u = rng.uniform(-PERTURB_FRACTION, PERTURB_FRACTION)
        if u != 0.0:
            return _clamp_param(cls, name, value + u * scale)


def _edit_parameter(program: GeneratorProgram, rng: np.random.Generator) -> GeneratorProgram | None:
    slots: list[tuple[str, str]] = []
    for path, node in iter_nodes(program.root):
        for name in scalar_params(node):
            slots.append((path, name))
        if isinstance(node, Mix):
            slots.extend((path, f"weights[{i}]") for i in range(len(node.weights)))
    if program.prize is not None:
        slots.append(("prize", "scale"))
    if program.budget is not None:
        slots.append(("budget", "factor"))
    if not slots:
        return None
    path, name = slots[int(rng.integers(len(slots)))]
    if path == "prize":
        v = _perturb_value(program.prize.scale, PrizeRule, "scale", rng)
        return replace(program, prize=replace(program.prize, scale=v))
    if path == "budget":
        v = _perturb_value(program.budget.factor, BudgetRule, "factor", rng)
        return replace(program, budget=replace(program.budget, factor=v))
    node = dict(iter_nodes(program.root))[path]
    if name.startswith("weights["):
        i = int(name[8:-1])
        w = list(node.weights)
        u = rng.uniform(-PERTURB_FRACTION, PERTURB_FRACTION)
        w[i] = float(min(max(w[i] * (1 + u), WEIGHT_RANGE[0]), WEIGHT_RANGE[1]))
        new = replace(node, weights=tuple(w))
    else:
        new = replace(node, **{name: _perturb_value(getattr(node, name), type(node), name, rng)})
    return replace(program, root=_replace_at(program.root, path, new))


def _edit_replace(program: GeneratorProgram, rng: np.random.Generator) -> GeneratorProgram:
    nodes = list(iter_nodes(program.root))
    path, node = nodes[int(rng.integers(len(nodes)))]
    new = random_leaf(rng, exclude=type(node))
    return replace(program, root=_replace_at(program.root, path, new))


def _edit_insert(program: GeneratorProgram, rng: np.random.Generator) -> GeneratorProgram:
    nodes = list(iter_nodes(program.root))
    path, node = nodes[int(rng.integers(len(nodes)))]
    return replace(program, root=_replace_at(program.root, path, random_wrapper(node, rng)))


def _edit_delete(program: GeneratorProgram, rng: np.random.Generator) -> GeneratorProgram | None:
    composites = [(p, nd) for p, nd in iter_nodes(program.root) if isinstance(nd, COMPOSITES)]
    if not composites:
        return None
    path, node = composites[int(rng.integers(len(composites)))]
    if isinstance(node, Mix):
        kept = node.children[int(rng.integers(len(node.children)))]
    else:
        kept = node.child
    return replace(program, root=_replace_at(program.root, path, kept))


_EDITS = {
    "parameter": _edit_parameter,
    "replace": _edit_replace,
    "insert": _edit_insert,
    "delete": _edit_delete,
}


def _pick_edit(weights: MutationWeights, rng: np.random.Generator) -> str:
    w = np.array([max(float(weights.get(k, 0.0)), 0.0) for k in EDIT_CLASSES])
    if w.sum() <= 0:
        w = np.ones(len(EDIT_CLASSES))
    return EDIT_CLASSES[int(rng.choice(len(EDIT_CLASSES), p=w / w.sum()))]


def mutate_generator_with_class(
    program: GeneratorProgram, rng_seed: int, weights: MutationWeights | None = None
) -> tuple[GeneratorProgram, str]:
    """Like ``mutate_generator`` but also reports the applied edit class."""
    validate(program)
    rng = rng_from(rng_seed)
    weights = DEFAULT_WEIGHTS if weights is None else weights
    for _ in range(MAX_ATTEMPTS):
        edit = _pick_edit(weights, rng)
        child = _EDITS[edit](program, rng)
        if child is not None and child != program and is_valid(child):
            return child, edit
    child = _edit_parameter(program, rng)
    if child is not None and child != program and is_valid(child):
        return child, "parameter"
    # a parameterless program still has to move; fall back to a leaf swap
    while True:
        child = _edit_replace(program, rng)
        if is_valid(child):
            return child, "replace"


def mutate_generator(
    program: GeneratorProgram, rng_seed: int, weights: MutationWeights | None = None
) -> GeneratorProgram:
    return mutate_generator_with_class(program, rng_seed, weights)[0]


def random_generator(rng: np.random.Generator, kind: Kind | str = Kind.TSP) -> GeneratorProgram:
    """A small random program used to seed the generator population."""
    root = random_leaf(rng)
    if rng.random() < 0.5:
        root = random_wrapper(root, rng)
    prize = budget = None
    if Kind(kind) is Kind.OP:
        prize = PrizeRule(PRIZE_RULES[int(rng.integers(3))], 1.0)
        budget = BudgetRule(0.5)
    program = GeneratorProgram(root, prize, budget)
    validate(program)
    return program


def family(program: GeneratorProgram) -> str:
    """Coarse label of the dominant primitive, used in reflection summaries."""
    leaves = [NODE_TAGS[type(nd)] for _, nd in iter_nodes(program.root) if isinstance(nd, LEAVES)]
    if len(set(leaves)) == 1:
        return leaves[0]
    return "mixed"
