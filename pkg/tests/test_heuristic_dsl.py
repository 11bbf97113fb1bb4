import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from coevolve.core import Instance, Kind
from coevolve.heuristic_dsl import (
    EDIT_CLASSES,
    EPS,
    BINARY_OPS,
    Binary,
    Const,
    Dist,
    HeuristicProgram,
    HeuristicValidationError,
    IncompatibleTargetError,
    PrizeOuter,
    SafeDiv,
    Target,
    Unary,
    _eval,
    baseline_heuristic,
    expr_to_dict,
    interpret,
    is_valid,
    mutate_heuristic,
    mutate_heuristic_with_class,
    random_heuristic,
)
from coevolve.seeding import rng_from
from conftest import random_op, random_tsp

ONLY = {c: {k: (1.0 if k == c else 0.0) for k in EDIT_CLASSES} for c in EDIT_CLASSES}
TWO = Instance("two", Kind.TSP, np.array([[0.0, 0.0], [1.0, 0.0]]))


def instance_for(target, n, seed):
    return random_op(n, seed) if target is Target.ACO_ETA_OP else random_tsp(n, seed)


def test_identity_program_under_both_targets():
    aco = interpret(HeuristicProgram(Dist(), Target.ACO_ETA_TSP), TWO)
    gls = interpret(HeuristicProgram(Dist(), Target.GLS_GUIDE), TWO)
    assert aco.tolist() == [[EPS, 1.0], [1.0, EPS]]
    assert gls.tolist() == [[0.0, 1.0], [1.0, 0.0]]


def test_inverse_distance_by_hand():
    inst = Instance("tri", Kind.TSP, np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]]))
    m = interpret(HeuristicProgram(SafeDiv(Const(1.0), Dist()), Target.ACO_ETA_TSP), inst)
    assert m[0, 1] == 1.0 and m[0, 2] == 1.0
    assert m[1, 2] == pytest.approx(1 / math.sqrt(2), abs=1e-15)
    assert np.all(np.diag(m) == EPS)


def test_singular_denominator_hits_floor():
    prog = HeuristicProgram(SafeDiv(Const(1.0), Binary("sub", Dist(), Dist())), Target.ACO_ETA_TSP)
    m = interpret(prog, random_tsp(6, 0))
    off = m[~np.eye(6, dtype=bool)]
    assert np.all(np.isfinite(m))
    assert np.all(off == 1.0 / EPS)


def test_baselines():
    assert len(list(_walk(baseline_heuristic(Target.ACO_ETA_TSP).root))) == 3
    inst = random_tsp(7, 1)
    g = interpret(baseline_heuristic(Target.GLS_GUIDE), inst)
    off = ~np.eye(7, dtype=bool)
    assert np.array_equal(g[off], inst.dist[off])
    op = Instance("op3", Kind.OP, np.array([[0.0, 0.0], [1.0, 0.0], [0.5, math.sqrt(3) / 2]]),
                  np.array([0.0, 2.0, 4.0]), 5.0)
    m = interpret(baseline_heuristic(Target.ACO_ETA_OP), op)
    # the depot column is 0, so the positivity shift adds EPS everywhere
    for i in range(3):
        for j in range(3):
            if i != j:
                assert m[i, j] == pytest.approx([0.0, 2.0, 4.0][j] + EPS, abs=1e-12)


def _walk(e):
    yield e
    for name in ("arg", "left", "right"):
        if hasattr(e, name):
            yield from _walk(getattr(e, name))


def test_incompatible_target():
    with pytest.raises(IncompatibleTargetError):
        interpret(baseline_heuristic(Target.ACO_ETA_OP), random_tsp(5, 0))
    with pytest.raises(TypeError):
        interpret(baseline_heuristic(Target.GLS_GUIDE), random_op(5, 0))


def test_prize_outer_only_for_op():
    with pytest.raises(HeuristicValidationError):
        HeuristicProgram.from_dict({"target": "gls_guide", "root": {"op": "prize_outer"}})


def test_rank_row_ties_by_index():
    inst = Instance("sq", Kind.TSP, np.array([[0, 0], [1, 0], [1, 1], [0, 1]], dtype=float))
    m = _eval(Unary("rank_row", Dist()), inst.dist, None)
    # row 0 distances: 0, 1, sqrt2, 1 -> ranks 0, 1, 3, 2
    assert m[0].tolist() == [0.0, 1.0, 3.0, 2.0]


def test_forced_constant_perturbation_range():
    prog = HeuristicProgram(Binary("mul", Dist(), Const(2.0)), Target.GLS_GUIDE)
    for seed in range(1000):
        child, edit = mutate_heuristic_with_class(prog, seed, ONLY["constant"])
        assert edit == "constant"
        c = child.root.right.value
        assert 1.4 <= c <= 2.6 and c != 2.0


def test_forced_operator_replacement():
    prog = HeuristicProgram(Binary("add", Dist(), Dist()), Target.GLS_GUIDE)
    seen = set()
    for seed in range(200):
        child, edit = mutate_heuristic_with_class(prog, seed, ONLY["operator"])
        assert edit == "operator"
        if isinstance(child.root, Binary):
            assert child.root.op in set(BINARY_OPS) - {"add"}
            assert child.root.left == Dist() and child.root.right == Dist()
            seen.add(child.root.op)
    assert seen == set(BINARY_OPS) - {"add"}


def test_mutation_deterministic():
    prog = random_heuristic(rng_from(5), Target.ACO_ETA_OP)
    for seed in range(30):
        assert mutate_heuristic(prog, seed) == mutate_heuristic(prog, seed)


def test_json_round_trip():
    prog = random_heuristic(rng_from(9), Target.ACO_ETA_OP, max_depth=6)
    assert HeuristicProgram.from_json(prog.to_json()) == prog


@settings(max_examples=400, deadline=None)
@given(st.integers(0, 2**63), st.sampled_from(list(Target)), st.integers(2, 12))
def test_interpret_finite_and_positive(seed, target, n):
    prog = random_heuristic(rng_from(seed), target, max_depth=6)
    inst = instance_for(target, max(n, 3), seed)
    m = interpret(prog, inst)
    assert np.all(np.isfinite(m))
    if target is Target.GLS_GUIDE:
        assert np.array_equal(m, m.T)
    else:
        assert m[~np.eye(inst.n, dtype=bool)].min() >= EPS


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 2**63), st.integers(3, 10))
def test_symmetrize_exact(seed, n):
    prog = random_heuristic(rng_from(seed), Target.ACO_ETA_TSP)
    inst = random_tsp(n, seed)
    with np.errstate(all="ignore"):
        m = _eval(Unary("symmetrize", prog.root), inst.dist, None)
        finite = np.where(np.isfinite(m), m, 0.0)
    assert np.array_equal(finite, finite.T)


@settings(max_examples=300, deadline=None)
@given(st.integers(0, 2**63), st.sampled_from(list(Target)), st.integers(3, 9))
def test_argmax_invariant_under_normalize01(seed, target, n):
    prog = random_heuristic(rng_from(seed), target)
    inst = instance_for(target, n, seed)
    with np.errstate(all="ignore"):
        raw = _eval(prog.root, inst.dist, inst.prizes)
    off = ~np.eye(n, dtype=bool)
    vals = raw[off]
    if not np.all(np.isfinite(vals)) or np.abs(vals).max() > 1e12 or vals.max() == vals.min():
        return
    base = interpret(prog, inst)
    norm = interpret(HeuristicProgram(Unary("normalize01", prog.root), target), inst)
    a = np.where(off, base, -np.inf)
    b = np.where(off, norm, -np.inf)
    i = np.unravel_index(np.argmax(b), b.shape)
    # the cell picked after normalization is a maximal cell before it (up to rounding)
    assert a[i] >= a.max() - 1e-9 * max(1.0, abs(a.max()))


@settings(max_examples=300, deadline=None)
@given(st.integers(0, 2**63), st.sampled_from(list(Target)), st.integers(1, 8))
def test_mutation_chain_valid(seed, target, steps):
    prog = random_heuristic(rng_from(seed), target)
    for k in range(steps):
        prog = mutate_heuristic(prog, seed + k)
        assert is_valid(prog) and prog.target is target
