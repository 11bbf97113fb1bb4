import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.cluster.vq import kmeans2
from scipy.stats import kstest

from coevolve.core import Kind
from coevolve.instance_dsl import (
    EDIT_CLASSES,
    BudgetRule,
    GaussianClusters,
    GeneratorProgram,
    Grid,
    Mix,
    Perturb,
    PrizeRule,
    ProgramValidationError,
    Ring,
    Spiral,
    Transform,
    UniformSquare,
    canonical_uniform,
    depth,
    generate,
    is_valid,
    mutate_generator,
    mutate_generator_with_class,
    node_count,
    random_generator,
    sample_points,
)
from coevolve.seeding import rng_from

ONLY = {c: {k: (1.0 if k == c else 0.0) for k in EDIT_CLASSES} for c in EDIT_CLASSES}


def test_uniform_is_deterministic_and_in_box():
    a = generate(canonical_uniform(), 100, 1)
    b = generate(canonical_uniform(), 100, 1)
    assert a.n == 100
    assert a.coords.tobytes() == b.coords.tobytes()
    assert a.coords.min() >= 0.0 and a.coords.max() <= 1.0


def test_clusters_are_tight():
    # frozen from one k-means run on this exact output: 0.0343
    x = generate(GeneratorProgram(GaussianClusters(4, 0.02)), 400, 7).coords
    best = math.inf
    for s in range(10):
        centers, labels = kmeans2(x, 4, seed=s, minit="++")
        best = min(best, float(np.mean(np.linalg.norm(x - centers[labels], axis=1))))
    assert best < 0.08
    assert best == pytest.approx(0.0343, abs=0.005)


def test_mix_ring_share():
    prog = GeneratorProgram(Mix((1.0, 1.0), (UniformSquare(), Ring(0.4, 0.0))))
    pts = sample_points(prog, 2000, 3)
    r = np.hypot(pts[:, 0] - 0.5, pts[:, 1] - 0.5)
    frac = float(np.mean(np.abs(r - 0.4) <= 0.02))
    # about half from the ring plus ~10% of the uniform half landing in the band
    assert 0.4 <= frac <= 0.6


def test_uniform_ks():
    ok = sum(kstest(generate(canonical_uniform(), 50, s).coords[:, 0], "uniform").statistic < 0.2
             for s in range(100))
    assert ok >= 95


def test_canonical_uniform_round_trip():
    prog = canonical_uniform()
    assert prog.root == UniformSquare()
    assert GeneratorProgram.from_json(prog.to_json()).to_json() == prog.to_json()


def test_op_generation_fields():
    prog = GeneratorProgram(UniformSquare(), PrizeRule("distance", 2.0), BudgetRule(1.5))
    inst = generate(prog, 25, 4, Kind.OP)
    assert inst.prizes[0] == 0.0
    assert inst.max_len == pytest.approx(1.5 * 5.0)
    assert np.all(inst.prizes >= 0)


def test_flat_axis_normalizes_to_half():
    prog = GeneratorProgram(Transform(1.0, 0.0, 0.0, 0.05, 0.0, 0.0, Grid(0.0)))
    inst = generate(prog, 16, 0)
    assert np.all((inst.coords >= 0) & (inst.coords <= 1))


def test_n_range_enforced():
    with pytest.raises(ValueError):
        generate(canonical_uniform(), 3, 0)
    with pytest.raises(ValueError):
        generate(canonical_uniform(), 10001, 0)


@pytest.mark.parametrize("bad, where", [
    ({"version": 1, "root": {"node": "ring", "radius": 0.7}}, "root.radius"),
    ({"version": 1, "root": {"node": "mix", "weights": [1], "children": [{"node": "uniform"}]}}, "root"),
    ({"version": 1, "root": {"node": "perturb", "sigma": 0.1, "child": {"node": "blob"}}}, "root.child"),
    ({"version": 1, "root": {"node": "transform", "a": 1, "b": 1, "c": 1, "d": 1, "tx": 0, "ty": 0,
                             "child": {"node": "uniform"}}}, "root"),
])
def test_validation_names_offending_node(bad, where):
    with pytest.raises(ProgramValidationError) as exc:
        GeneratorProgram.from_dict(bad)
    assert exc.value.path == where


def test_depth_limit():
    node = UniformSquare()
    for _ in range(8):
        node = Perturb(0.01, node)
    with pytest.raises(ProgramValidationError):
        GeneratorProgram.from_dict(GeneratorProgram(node).to_dict())


def test_forced_replacement_changes_root():
    for seed in range(50):
        child = mutate_generator(canonical_uniform(), seed, ONLY["replace"])
        assert not isinstance(child.root, UniformSquare)


def test_mutation_deterministic():
    prog = GeneratorProgram(Mix((1.0, 2.0), (Spiral(2.0, 0.01), GaussianClusters(3, 0.05))))
    for seed in range(20):
        assert mutate_generator(prog, seed).to_json() == mutate_generator(prog, seed).to_json()


def test_spiral_parameter_perturbation_bound():
    prog = GeneratorProgram(Spiral(2.0, 0.01))
    for seed in range(1000):
        child, edit = mutate_generator_with_class(prog, seed, ONLY["parameter"])
        assert edit == "parameter"
        assert isinstance(child.root, Spiral)
        assert abs(child.root.turns - 2.0) <= 0.6
        assert 0.5 <= child.root.turns <= 6.0 and 0.0 <= child.root.jitter <= 0.2


def test_mutation_is_one_edit():
    prog = GeneratorProgram(Perturb(0.05, Ring(0.3, 0.01)))
    for seed in range(200):
        child, edit = mutate_generator_with_class(prog, seed)
        size_change = node_count(child.root) - node_count(prog.root)
        if edit == "parameter":
            assert size_change == 0 and type(child.root) is Perturb
        elif edit == "delete":
            assert size_change < 0
        elif edit == "insert":
            assert size_change > 0


@settings(max_examples=300, deadline=None)
@given(st.integers(0, 2**63), st.sampled_from(["tsp", "op"]), st.integers(1, 6))
def test_mutation_chain_stays_valid(seed, kind, steps):
    prog = random_generator(rng_from(seed), kind)
    for k in range(steps):
        prog = mutate_generator(prog, seed + k)
        assert is_valid(prog)
        assert depth(prog.root) <= 8 and node_count(prog.root) <= 64


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**63), st.integers(4, 60))
def test_generate_pure_and_bounded(seed, n):
    prog = random_generator(rng_from(seed), "op")
    a = generate(prog, n, seed, "op")
    b = generate(prog, n, seed, "op")
    assert a.to_json() == b.to_json()
    assert a.coords.min() >= 0 and a.coords.max() <= 1
    assert a.prizes[0] == 0 and a.max_len > 0
