import json
import random
from pathlib import Path

import numpy as np
import pytest

from coevolve import evolution as ev
from coevolve.evaluation import GapReport, ReferencePolicy, evaluate_hardness
from coevolve.evolution import (
    ComparisonError,
    EvolutionConfig,
    EvolutionState,
    Evaluator,
    ResumeError,
    bandit_update,
    initial_state,
    reflect,
    run_coevolution,
    step_generation,
)
from coevolve.heuristic_dsl import Target, baseline_heuristic
from coevolve.llm import ConnectorConfig, LLMConnector

SMALL = dict(task="tsp_gls", n=12, batch=3, pop_gen=4, pop_heur=4, elitism=1, solver_budget=30, generations=3)


def report(gap_costs, ref_costs, gid="g", hid="h", seeds=None, task="tsp_gls"):
    seeds = seeds or list(range(len(gap_costs)))
    mh, mr = sum(gap_costs) / len(gap_costs), sum(ref_costs) / len(ref_costs)
    rows = list(zip(seeds, gap_costs, ref_costs))
    return GapReport(gid, hid, task, 10, len(rows), mh, mr, mh / mr - 1, rows)


def test_config_validation():
    with pytest.raises(ValueError):
        EvolutionConfig(pop_gen=1)
    with pytest.raises(ValueError):
        EvolutionConfig(elitism=8)
    with pytest.raises(ValueError):
        EvolutionConfig(task="vrp")
    cfg = EvolutionConfig(**SMALL)
    assert EvolutionConfig.from_dict(cfg.to_dict()).to_dict() == cfg.to_dict()


def test_bandit_rule():
    assert bandit_update(1.0, 0.06) == pytest.approx(1.2)
    assert bandit_update(1.0, -0.01) == pytest.approx(0.8)
    assert bandit_update(1.0, 0.0) == 1.0
    assert bandit_update(3.9, 1.0) == 4.0
    assert bandit_update(0.26, -1.0) == 0.25


def test_reflect_identical_child():
    r = report([1.1, 1.3], [1.0, 1.2])
    note = reflect(r, r, subject="c", parent="p")
    assert note.fitness_delta == 0.0
    assert note.degraded_families == () and note.improved_families == ()


def test_reflect_generator_side_weight_update():
    parent = report([1.04], [1.0], gid="p")
    child = report([1.10], [1.0], gid="c")
    note = reflect(parent, child, side="generator", edit_class="jitter", weights={"jitter": 1.0},
                   families={"c": "ring"})
    assert note.fitness_delta == child.gap - parent.gap
    assert note.fitness_delta == pytest.approx(0.06, abs=1e-12)
    assert note.weight_update == (1.0, pytest.approx(1.2))
    assert note.improved_families == ("ring",)


def test_reflect_heuristic_side_buckets_by_family():
    # dyadic costs keep the fitness delta exactly zero
    parents = [report([1.5, 1.5], [1.0, 1.0], gid="a", hid="p"), report([1.25, 1.25], [1.0, 1.0], gid="b", hid="p")]
    children = [report([1.25, 1.25], [1.0, 1.0], gid="a", hid="c"), report([1.75, 1.25], [1.0, 1.0], gid="b", hid="c")]
    note = reflect(parents, children, side="heuristic", edit_class="const", weights={"const": 1.0},
                   families={"a": "cluster", "b": "ring"})
    assert note.improved_families == ("cluster",)
    assert note.degraded_families == ("ring",)
    assert note.fitness_delta == 0.0
    assert note.weight_update == (1.0, 1.0)


def test_reflect_mismatch():
    with pytest.raises(ComparisonError):
        reflect(report([1.0], [1.0], seeds=[0]), report([1.0], [1.0], seeds=[1]))
    with pytest.raises(ComparisonError):
        reflect(report([1.0], [1.0]), report([1.0, 1.0], [1.0, 1.0]))


def test_reflect_llm_mode_passes_text_through():
    canned = "Ring jitter hurt the guide; try widening the radius."
    seen = []

    def transport(url, headers, payload, timeout):
        seen.append(payload)
        return {"choices": [{"message": {"content": canned}}]}

    conn = LLMConnector(ConnectorConfig(endpoint="http://stub.invalid"), transport)
    p, c = report([1.04], [1.0], gid="p"), report([1.10], [1.0], gid="c")
    offline = reflect(p, c, "offline")
    note = reflect(p, c, "llm", connector=conn)
    assert note.text == canned
    assert {k: v for k, v in note.to_dict().items() if k != "text"} == \
        {k: v for k, v in offline.to_dict().items() if k != "text"}
    assert len(seen) == 1


@pytest.fixture(scope="module")
def small_run(tmp_path_factory):
    d = tmp_path_factory.mktemp("run")
    cfg = EvolutionConfig(**SMALL)
    return cfg, d, run_coevolution(cfg, d)


def test_run_directory_layout(small_run):
    cfg, d, art = small_run
    for name in ("config.json", "champions.json", "curve.csv", "state.json", "reference_cache.json"):
        assert (d / name).exists()
    for k in range(cfg.generations + 1):
        for name in ("generators.json", "heuristics.json", "fitness.csv", "reflections.jsonl"):
            assert (d / f"gen_{k}" / name).exists()
    rows = (d / "curve.csv").read_text().splitlines()
    assert rows[0] == "generation,champion_hardness,champion_gap"
    assert len(rows) == cfg.generations + 2


def test_step_preserves_sizes_and_notes(small_run):
    cfg, _, art = small_run
    st = art.state
    assert st.generation == cfg.generations
    assert len(st.generators) == cfg.pop_gen and len(st.heuristics) == cfg.pop_heur
    per_gen = cfg.offspring_per_parent * (cfg.pop_gen + cfg.pop_heur)
    assert len(st.reflections) == cfg.generations * per_gen
    assert art.champion_report().gap >= 0.0  # n=12 uses the exact reference


def test_step_is_deterministic_and_append_only(small_run):
    cfg, d, art = small_run
    st = art.state
    a = step_generation(st, cfg, evaluator=Evaluator(cfg))
    b = step_generation(st, cfg, evaluator=Evaluator(cfg))
    assert json.dumps(a.to_dict(), sort_keys=True) == json.dumps(b.to_dict(), sort_keys=True)
    assert a.generation == st.generation + 1
    assert [r.to_dict() for r in a.reflections[: len(st.reflections)]] == [r.to_dict() for r in st.reflections]
    # the input state is untouched
    assert json.loads((d / "state.json").read_text()) == json.loads(json.dumps(st.to_dict()))


def test_rerun_reproduces_champions_and_fitness(small_run, tmp_path):
    cfg, d, _ = small_run
    run_coevolution(cfg, tmp_path)
    for k in range(cfg.generations + 1):
        assert (tmp_path / f"gen_{k}" / "fitness.csv").read_bytes() == (d / f"gen_{k}" / "fitness.csv").read_bytes()
    assert (tmp_path / "champions.json").read_bytes() == (d / "champions.json").read_bytes()


def test_generations_zero():
    cfg = EvolutionConfig(**{**SMALL, "generations": 0})
    art = run_coevolution(cfg)
    st = art.state
    assert st.generation == 0
    best = st.generator(st.champion_generator)
    assert best.edit in ("seed", "random")
    expected = evaluate_hardness(best.program, baseline_heuristic(Target.GLS_GUIDE), cfg.n, cfg.batch,
                                 cfg.eval_seed, cfg.task, cfg.policy, cfg.solver_params(), {})
    assert st.champion_hardness == expected.gap
    assert any(m.edit == "seed" for m in st.heuristics)


def test_monotone_champion_hardness_fuzz():
    cfg = EvolutionConfig(task="tsp_gls", n=10, batch=2, pop_gen=3, pop_heur=2, elitism=1,
                          solver_budget=10, generations=50, master_seed=5)
    art = run_coevolution(cfg)
    hard = [h["champion_hardness"] for h in art.history]
    assert len(hard) == 51
    assert all(b >= a for a, b in zip(hard, hard[1:]))


def test_champion_heuristic_non_increasing_on_frozen_set(small_run):
    cfg, _, art = small_run
    st = art.state
    evaluator = art.evaluator
    nxt = step_generation(st, cfg, evaluator=evaluator)
    frozen = [nxt.generator(g).program for g in nxt.frozen_generators]
    best_before = min(ev.report_fitness([evaluator.report(g, m.program) for g in frozen]) for m in st.heuristics)
    assert nxt.champion_gap <= best_before + 1e-15


def test_resume_matches_uninterrupted(small_run, tmp_path):
    cfg, d, _ = small_run
    short = EvolutionConfig(**{**SMALL, "generations": 1})
    run_coevolution(short, tmp_path)
    run_coevolution(cfg, tmp_path)
    assert (tmp_path / "state.json").read_bytes() == (d / "state.json").read_bytes()
    with pytest.raises(ResumeError):
        run_coevolution(EvolutionConfig(**{**SMALL, "master_seed": 9}), tmp_path)


def test_no_ambient_randomness(monkeypatch, small_run):
    cfg, _, art = small_run

    def banned(*a, **k):
        raise AssertionError("ambient RNG draw")

    for name in ("random", "rand", "randn", "randint", "choice", "uniform", "normal", "permutation", "shuffle", "seed"):
        monkeypatch.setattr(np.random, name, banned)
    for name in ("random", "randint", "choice", "uniform", "shuffle", "gauss"):
        monkeypatch.setattr(random, name, banned)
    real = np.random.default_rng

    def seeded_only(seed=None):
        if seed is None:
            raise AssertionError("unseeded default_rng")
        return real(seed)

    monkeypatch.setattr(np.random, "default_rng", seeded_only)
    st = art.state
    nxt = step_generation(st, cfg, evaluator=Evaluator(cfg))
    new = nxt.lineage[len(st.lineage):]
    assert new and all(p.startswith(f"gen/{nxt.generation}/") for p, _ in new)
    assert len({s for _, s in new}) == len(new)


def test_llm_synthesizer_falls_back(tmp_path):
    def broken(url, headers, payload, timeout):
        return {"choices": [{"message": {"content": "no program here"}}]}

    cfg = EvolutionConfig(**{**SMALL, "generations": 1, "synthesizer": "llm",
                             "connector": ConnectorConfig(endpoint="http://stub.invalid", max_retries=0)})
    art = run_coevolution(cfg, tmp_path, transport=broken)
    edits = [r.edit_class for r in art.state.reflections]
    assert edits and all(e.startswith("fallback:") for e in edits)
    assert all(r.text for r in art.state.reflections)
