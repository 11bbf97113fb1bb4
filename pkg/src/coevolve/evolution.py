"""Adversarial co-evolution of instance generators and heuristics.

Each generation alternates two best-response phases:

* MAX: every surviving generator spawns offspring; offspring are scored by
  their hardness (gap) against the champion heuristic, and the next
  population keeps the ``elitism`` best parents plus the best offspring.
* MIN: every surviving heuristic spawns offspring; all heuristics are scored by
  their mean gap over the current top-k generators (a frozen set for the
  generation) and selected the same way.

Generator fitness is fixed at birth, measured against the champion heuristic
of that moment on a run-wide set of evaluation seeds.  Together with elitism
this makes champion hardness non-decreasing.
"""
from __future__ import annotations

import csv
import dataclasses
import io
import json
import logging
import math
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Sequence, Union

from . import heuristic_dsl as hd
from . import instance_dsl as idsl
from .evaluation import (
    TASK_KIND,
    TASK_TARGET,
    TASKS,
    GapReport,
    ReferencePolicy,
    evaluate_hardness,
)
from .heuristic_dsl import HeuristicProgram
from .instance_dsl import GeneratorProgram
from .llm import ConnectorConfig, LLMConnector, SynthesisFallback, generator_template, heuristic_template
from .seeding import derive_seed, rng_from
from .solvers import AcoParams, GlsParams

log = logging.getLogger(__name__)

WEIGHT_BOUNDS = (0.25, 4.0)
BANDIT_STEP = 0.2
# per-run solver budgets: GLS steps for tsp_gls, ACO iterations otherwise
DEFAULT_SOLVER_BUDGET = {"tsp_gls": 500, "tsp_aco": 20, "op_aco": 20}
INITIAL_HEURISTIC_DEPTH = 3


class ComparisonError(ValueError):
    """Two evaluations that cannot be compared (different task, size or seeds)."""


class ResumeError(RuntimeError):
    pass


@dataclass(frozen=True)
class EvolutionConfig:
    task: str = "tsp_gls"
    n: int = 100
    generations: int = 15
    batch: int = 16
    pop_gen: int = 8
    pop_heur: int = 8
    offspring_per_parent: int = 2
    elitism: int = 2
    synthesizer: str = "offline"
    master_seed: int = 0
    reference: ReferencePolicy | None = None  # None -> derived from solver_budget
    solver_budget: int | None = None  # None -> DEFAULT_SOLVER_BUDGET[task]
    top_k: int = 3
    connector: ConnectorConfig | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "task", self.task.lower())
        if self.task not in TASKS:
            raise ValueError(f"unknown task {self.task!r}")
        if self.pop_gen < 2 or self.pop_heur < 2:
            raise ValueError("populations must hold at least 2 programs")
        if not 0 <= self.elitism < min(self.pop_gen, self.pop_heur):
            raise ValueError("elitism must be smaller than both populations")
        if self.offspring_per_parent < 1 or self.batch < 1 or self.generations < 0:
            raise ValueError("offspring_per_parent and batch must be >= 1, generations >= 0")
        if self.synthesizer not in ("offline", "llm"):
            raise ValueError("synthesizer must be 'offline' or 'llm'")
        if not 1 <= self.top_k <= self.pop_gen:
            raise ValueError("top_k must lie in [1, pop_gen]")
        if self.solver_budget is not None and self.solver_budget < 1:
            raise ValueError("solver_budget must be >= 1")

    @property
    def budget(self) -> int:
        return self.solver_budget if self.solver_budget is not None else DEFAULT_SOLVER_BUDGET[self.task]

    @property
    def policy(self) -> ReferencePolicy:
        if self.reference is not None:
            return self.reference
        return ReferencePolicy(base_budget=self.budget, base_iterations=self.budget)

    def solver_params(self):
        if self.task == "tsp_gls":
            return GlsParams(budget_ls_iters=self.budget)
        return AcoParams(iterations=self.budget)

    @property
    def target(self) -> hd.Target:
        return TASK_TARGET[self.task]

    @property
    def eval_seed(self) -> int:
        return derive_seed(self.master_seed, "eval") % (1 << 31)

    def to_dict(self) -> dict[str, Any]:
        return {
            "task": self.task,
            "n": self.n,
            "generations": self.generations,
            "batch": self.batch,
            "pop_gen": self.pop_gen,
            "pop_heur": self.pop_heur,
            "offspring_per_parent": self.offspring_per_parent,
            "elitism": self.elitism,
            "synthesizer": self.synthesizer,
            "master_seed": self.master_seed,
            "reference": self.policy.to_dict(),
            "solver_budget": self.budget,
            "top_k": self.top_k,
            "connector": self.connector.to_dict() if self.connector else None,
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "EvolutionConfig":
        d = dict(d)
        if d.get("reference") is not None:
            d["reference"] = ReferencePolicy.from_dict(d["reference"])
        if d.get("connector") is not None:
            d["connector"] = ConnectorConfig(**d["connector"])
        return cls(**d)


Program = Union[GeneratorProgram, HeuristicProgram]


@dataclass
class Member:
    id: str
    program: Program
    fitness: float
    parent: str | None = None
    edit: str | None = None
    born: int = 0

    def to_dict(self) -> dict[str, Any]:
        return {
            "id": self.id,
            "program": self.program.to_dict(),
            "fitness": self.fitness,
            "parent": self.parent,
            "edit": self.edit,
            "born": self.born,
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any], side: str) -> "Member":
        prog_cls = GeneratorProgram if side == "generator" else HeuristicProgram
        return cls(d["id"], prog_cls.from_dict(d["program"]), float(d["fitness"]),
                   d["parent"], d["edit"], int(d["born"]))


@dataclass(frozen=True)
class ReflectionNote:
    subject: str
    parent: str
    side: str
    fitness_delta: float
    degraded_families: tuple[str, ...] = ()
    improved_families: tuple[str, ...] = ()
    stats: dict[str, float] = field(default_factory=dict)
    edit_class: str | None = None
    weight_update: tuple[float, float] | None = None  # (old, new)
    text: str | None = None
    generation: int = 0

    def to_dict(self) -> dict[str, Any]:
        return {
            "subject": self.subject,
            "parent": self.parent,
            "side": self.side,
            "generation": self.generation,
            "fitness_delta": self.fitness_delta,
            "degraded_families": list(self.degraded_families),
            "improved_families": list(self.improved_families),
            "stats": dict(self.stats),
            "edit_class": self.edit_class,
            "weight_update": list(self.weight_update) if self.weight_update else None,
            "text": self.text,
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "ReflectionNote":
        wu = d.get("weight_update")
        return cls(d["subject"], d["parent"], d["side"], float(d["fitness_delta"]),
                   tuple(d["degraded_families"]), tuple(d["improved_families"]), dict(d["stats"]),
                   d.get("edit_class"), tuple(wu) if wu else None, d.get("text"), int(d.get("generation", 0)))

    def summary_text(self) -> str:
        """One-line rendering used as prompt context."""
        parts = [f"{self.side} {self.subject} (from {self.parent}, edit {self.edit_class}): "
                 f"fitness delta {self.fitness_delta:+.6f}"]
        if self.improved_families:
            parts.append("improved on " + ", ".join(self.improved_families))
        if self.degraded_families:
            parts.append("degraded on " + ", ".join(self.degraded_families))
        if self.text:
            parts.append(self.text.strip())
        return "; ".join(parts)


def _as_reports(r: GapReport | Sequence[GapReport]) -> list[GapReport]:
    return [r] if isinstance(r, GapReport) else list(r)


def report_fitness(r: GapReport | Sequence[GapReport]) -> float:
    """Gap of one report, or the mean gap of several."""
    reports = _as_reports(r)
    if len(reports) == 1:
        return reports[0].gap
    return math.fsum(x.gap for x in reports) / len(reports)


def _check_comparable(a: GapReport, b: GapReport) -> None:
    if a.task != b.task or a.n != b.n or a.batch != b.batch:
        raise ComparisonError("reports differ in task, size or batch")
    if [p[0] for p in a.per_instance] != [p[0] for p in b.per_instance]:
        raise ComparisonError("reports use different instance seeds")


def bandit_update(weight: float, improvement: float) -> float:
    s = (improvement > 0) - (improvement < 0)
    return min(WEIGHT_BOUNDS[1], max(WEIGHT_BOUNDS[0], weight * (1.0 + BANDIT_STEP * s)))


def reflect(
    parent_eval: GapReport | Sequence[GapReport],
    child_eval: GapReport | Sequence[GapReport],
    mode: str = "offline",
    *,
    side: str = "generator",
    subject: str | None = None,
    parent: str | None = None,
    edit_class: str | None = None,
    weights: dict[str, float] | None = None,
    families: dict[str, str] | None = None,
    connector: LLMConnector | None = None,
    generation: int = 0,
) -> ReflectionNote:
    """Compare a child evaluation with its parent's.

    Generator-side notes take single reports; heuristic-side notes take one
    report per opponent generator, paired by position.  ``weights`` is the
    current mutation-weight table; the returned note carries the suggested
    (old, new) weight of ``edit_class``.
    """
    if side not in ("generator", "heuristic"):
        raise ValueError("side must be 'generator' or 'heuristic'")
    if mode not in ("offline", "llm"):
        raise ValueError("mode must be 'offline' or 'llm'")
    pr, cr = _as_reports(parent_eval), _as_reports(child_eval)
    if len(pr) != len(cr) or not pr:
        raise ComparisonError("need the same nonzero number of parent and child reports")
    for a, b in zip(pr, cr):
        _check_comparable(a, b)
    families = families or {}
    delta = report_fitness(cr) - report_fitness(pr)
    maximize_prize = pr[0].task == "op_aco"

    improved: list[str] = []
    degraded: list[str] = []
    heur_deltas: list[float] = []
    ref_deltas: list[float] = []
    if side == "heuristic":
        per_family: dict[str, list[float]] = {}
        for a, b in zip(pr, cr):
            if a.generator_id != b.generator_id:
                raise ComparisonError("heuristic reports must be paired on the same generators")
            fam = families.get(a.generator_id, a.generator_id)
            for (_, ha, ra), (_, hb, rb) in zip(a.per_instance, b.per_instance):
                heur_deltas.append(hb - ha)
                ref_deltas.append(rb - ra)
                per_family.setdefault(fam, []).append(hb - ha)
        for fam in sorted(per_family):
            d = math.fsum(per_family[fam])
            better = d > 0 if maximize_prize else d < 0
            worse = d < 0 if maximize_prize else d > 0
            if better:
                improved.append(fam)
            elif worse:
                degraded.append(fam)
        improvement = -delta
    else:
        for a, b in zip(pr, cr):
            for (_, ha, ra), (_, hb, rb) in zip(a.per_instance, b.per_instance):
                heur_deltas.append(hb - ha)
                ref_deltas.append(rb - ra)
        fam = families.get(cr[0].generator_id, cr[0].generator_id)
        if delta > 0:
            improved.append(fam)
        elif delta < 0:
            degraded.append(fam)
        improvement = delta

    stats = {
        "parent_fitness": report_fitness(pr),
        "child_fitness": report_fitness(cr),
        "mean_heur_delta": math.fsum(heur_deltas) / len(heur_deltas),
        "mean_ref_delta": math.fsum(ref_deltas) / len(ref_deltas),
        "instances": float(len(heur_deltas)),
    }
    update = None
    if edit_class is not None and weights is not None and edit_class in weights:
        old = float(weights[edit_class])
        update = (old, bandit_update(old, improvement))

    note = ReflectionNote(
        subject=subject or cr[0].generator_id if side == "generator" else subject or cr[0].heuristic_id,
        parent=parent or (pr[0].generator_id if side == "generator" else pr[0].heuristic_id),
        side=side,
        fitness_delta=delta,
        degraded_families=tuple(degraded),
        improved_families=tuple(improved),
        stats=stats,
        edit_class=edit_class,
        weight_update=update,
        generation=generation,
    )
    if mode == "llm":
        if connector is None:
            raise ValueError("llm mode needs a connector")
        prompt = (
            "Two programs were evaluated on the same instances. Structured comparison:\n"
            + json.dumps(note.to_dict(), sort_keys=True)
            + "\nIn at most three sentences, explain the behavioural change and suggest the next edit."
        )
        note = dataclasses.replace(note, text=connector.complete(prompt))
    return note


# ---------------------------------------------------------------- synthesizers


class OfflineSynthesizer:
    """Grammar-level mutation driven by the bandit weights."""

    name = "offline"

    def generator(self, parent: GeneratorProgram, seed: int, weights: dict[str, float], task: str,
                  reflections: Sequence[str] = ()) -> tuple[GeneratorProgram, str]:
        return idsl.mutate_generator_with_class(parent, seed, weights)

    def heuristic(self, parent: HeuristicProgram, seed: int, weights: dict[str, float], task: str,
                  reflections: Sequence[str] = ()) -> tuple[HeuristicProgram, str]:
        return hd.mutate_heuristic_with_class(parent, seed, weights)


class LLMSynthesizer(OfflineSynthesizer):
    """Model-written offspring; falls back to offline mutation on failure."""

    name = "llm"

    def __init__(self, connector: LLMConnector):
        self.connector = connector
        self.events: list[dict[str, Any]] = []

    def _fallback(self, side: str, parent_id: str, result: SynthesisFallback) -> None:
        event = {"side": side, "parent": parent_id, "attempts": result.attempts, "errors": result.errors}
        self.events.append(event)
        log.warning("synthesizer fallback for %s parent %s after %d attempts", side, parent_id, result.attempts)

    def generator(self, parent, seed, weights, task, reflections=()):
        result = self.connector.synthesize(generator_template(parent, task, reflections), "generator")
        if isinstance(result, GeneratorProgram) and result != parent:
            if TASK_KIND[task].value == "op" and (result.prize is None or result.budget is None):
                result = dataclasses.replace(result, prize=parent.prize, budget=parent.budget)
            return result, "llm"
        if isinstance(result, SynthesisFallback):
            self._fallback("generator", parent.id, result)
        child, edit = super().generator(parent, seed, weights, task)
        return child, f"fallback:{edit}"

    def heuristic(self, parent, seed, weights, task, reflections=()):
        result = self.connector.synthesize(heuristic_template(parent, task, reflections), "heuristic")
        if isinstance(result, HeuristicProgram) and result.target is parent.target and result != parent:
            return result, "llm"
        if isinstance(result, SynthesisFallback):
            self._fallback("heuristic", parent.id, result)
        child, edit = super().heuristic(parent, seed, weights, task)
        return child, f"fallback:{edit}"


def make_synthesizer(config: EvolutionConfig, transport=None):
    if config.synthesizer == "offline":
        return OfflineSynthesizer()
    return LLMSynthesizer(LLMConnector(config.connector or ConnectorConfig(), transport))


# ---------------------------------------------------------------- state


@dataclass
class EvolutionState:
    generation: int
    generators: list[Member]
    heuristics: list[Member]
    champion_generator: str
    champion_heuristic: str
    reflections: list[ReflectionNote] = field(default_factory=list)
    gen_weights: dict[str, float] = field(default_factory=lambda: dict(idsl.DEFAULT_WEIGHTS))
    heur_weights: dict[str, float] = field(default_factory=lambda: dict(hd.DEFAULT_WEIGHTS))
    next_ids: dict[str, int] = field(default_factory=lambda: {"g": 0, "h": 0})
    frozen_generators: list[str] = field(default_factory=list)
    lineage: list[tuple[str, int]] = field(default_factory=list)
    history: list[dict[str, Any]] = field(default_factory=list)

    def generator(self, gid: str) -> Member:
        return next(m for m in self.generators if m.id == gid)

    def heuristic(self, hid: str) -> Member:
        return next(m for m in self.heuristics if m.id == hid)

    @property
    def champion_hardness(self) -> float:
        return self.generator(self.champion_generator).fitness

    @property
    def champion_gap(self) -> float:
        return self.heuristic(self.champion_heuristic).fitness

    def check(self) -> None:
        for m in self.generators + self.heuristics:
            if not math.isfinite(m.fitness):
                raise ValueError(f"nonfinite fitness for {m.id}")
        if self.champion_generator != rank_generators(self.generators)[0].id:
            raise ValueError("champion generator is not the fittest generator")
        if self.champion_heuristic != rank_heuristics(self.heuristics)[0].id:
            raise ValueError("champion heuristic is not the fittest heuristic")

    def to_dict(self) -> dict[str, Any]:
        return {
            "generation": self.generation,
            "generators": [m.to_dict() for m in self.generators],
            "heuristics": [m.to_dict() for m in self.heuristics],
            "champion_generator": self.champion_generator,
            "champion_heuristic": self.champion_heuristic,
            "reflections": [r.to_dict() for r in self.reflections],
            "gen_weights": self.gen_weights,
            "heur_weights": self.heur_weights,
            "next_ids": self.next_ids,
            "frozen_generators": self.frozen_generators,
            "lineage": [list(x) for x in self.lineage],
            "history": self.history,
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "EvolutionState":
        return cls(
            generation=int(d["generation"]),
            generators=[Member.from_dict(m, "generator") for m in d["generators"]],
            heuristics=[Member.from_dict(m, "heuristic") for m in d["heuristics"]],
            champion_generator=d["champion_generator"],
            champion_heuristic=d["champion_heuristic"],
            reflections=[ReflectionNote.from_dict(r) for r in d["reflections"]],
            gen_weights=dict(d["gen_weights"]),
            heur_weights=dict(d["heur_weights"]),
            next_ids=dict(d["next_ids"]),
            frozen_generators=list(d["frozen_generators"]),
            lineage=[(str(p), int(s)) for p, s in d["lineage"]],
            history=list(d["history"]),
        )


def rank_generators(members: Sequence[Member]) -> list[Member]:
    """Hardest first; ties go to the earliest id."""
    return sorted(members, key=lambda m: (-m.fitness, m.id))


def rank_heuristics(members: Sequence[Member]) -> list[Member]:
    """Smallest gap first; ties go to the earliest id."""
    return sorted(members, key=lambda m: (m.fitness, m.id))


def _new_id(state: EvolutionState, prefix: str) -> str:
    k = state.next_ids[prefix]
    state.next_ids[prefix] = k + 1
    return f"{prefix}{k:04d}"


def _draw(state: EvolutionState, config: EvolutionConfig, *path: object) -> int:
    seed = derive_seed(config.master_seed, *path)
    state.lineage.append(("/".join(str(p) for p in path), seed))
    return seed


class Evaluator:
    """Caches (generator, heuristic) gap reports by program content."""

    def __init__(self, config: EvolutionConfig, ref_cache: dict[str, float] | None = None,
                 map_fn: Callable = map):
        self.config = config
        self.ref_cache: dict[str, float] = {} if ref_cache is None else ref_cache
        self.reports: dict[tuple[str, str], GapReport] = {}
        self.map_fn = map_fn

    def report(self, g: GeneratorProgram, h: HeuristicProgram) -> GapReport:
        key = (g.id, h.id)
        if key not in self.reports:
            c = self.config
            self.reports[key] = evaluate_hardness(
                g, h, c.n, c.batch, c.eval_seed, c.task, c.policy, c.solver_params(),
                self.ref_cache, map_fn=self.map_fn,
            )
        return self.reports[key]


def _recent_reflections(state: EvolutionState, side: str, k: int = 3) -> list[str]:
    notes = [r for r in state.reflections if r.side == side]
    return [r.summary_text() for r in notes[-k:]]


def _select(parents: list[Member], offspring: list[Member], size: int, elitism: int,
            ranker: Callable[[Sequence[Member]], list[Member]]) -> list[Member]:
    elites = ranker(parents)[:elitism]
    rest = ranker([m for m in parents + offspring if m not in elites])
    pool = ranker(offspring)[: size - elitism]
    if len(pool) < size - elitism:
        # too few offspring: top up from the remaining parents
        pool += [m for m in rest if m not in pool][: size - elitism - len(pool)]
    return ranker(elites + pool)


def initial_state(config: EvolutionConfig, evaluator: Evaluator) -> EvolutionState:
    """Generation 0: baselines plus random draws, scored against the baseline heuristic."""
    kind = TASK_KIND[config.task]
    state = EvolutionState(0, [], [], "", "")
    gens: list[tuple[GeneratorProgram, str]] = [(canonical_for(kind), "seed")]
    i = 0
    while len(gens) < config.pop_gen:
        prog = idsl.random_generator(rng_from(_draw(state, config, "init", "generator", i)), kind)
        i += 1
        if all(prog != p for p, _ in gens):
            gens.append((prog, "random"))
    heurs: list[tuple[HeuristicProgram, str]] = [(hd.baseline_heuristic(config.target), "seed")]
    i = 0
    while len(heurs) < config.pop_heur:
        prog = hd.random_heuristic(rng_from(_draw(state, config, "init", "heuristic", i)), config.target,
                                   max_depth=INITIAL_HEURISTIC_DEPTH)
        i += 1
        if all(prog != p for p, _ in heurs):
            heurs.append((prog, "random"))

    baseline = heurs[0][0]
    for prog, origin in gens:
        fit = evaluator.report(prog, baseline).gap
        state.generators.append(Member(_new_id(state, "g"), prog, fit, None, origin, 0))
    state.generators = rank_generators(state.generators)
    state.champion_generator = state.generators[0].id
    frozen = state.generators[: config.top_k]
    state.frozen_generators = [m.id for m in frozen]
    for prog, origin in heurs:
        fit = report_fitness([evaluator.report(g.program, prog) for g in frozen])
        state.heuristics.append(Member(_new_id(state, "h"), prog, fit, None, origin, 0))
    state.heuristics = rank_heuristics(state.heuristics)
    state.champion_heuristic = state.heuristics[0].id
    state.history.append(_history_row(state))
    state.check()
    return state


def canonical_for(kind) -> GeneratorProgram:
    prog = idsl.canonical_uniform()
    if kind.value == "op":
        prog = dataclasses.replace(prog, prize=idsl.PrizeRule("uniform", 1.0), budget=idsl.BudgetRule(0.5))
    return prog


def _history_row(state: EvolutionState) -> dict[str, Any]:
    return {
        "generation": state.generation,
        "champion_generator": state.champion_generator,
        "champion_heuristic": state.champion_heuristic,
        "champion_hardness": state.champion_hardness,
        "champion_gap": state.champion_gap,
    }


def _families(members: Sequence[Member]) -> dict[str, str]:
    return {m.program.id: idsl.family(m.program) for m in members}


def step_generation(
    state: EvolutionState,
    config: EvolutionConfig,
    synthesizer=None,
    evaluator: Evaluator | None = None,
    connector: LLMConnector | None = None,
) -> EvolutionState:
    """One MAX phase followed by one MIN phase; returns a new state."""
    synthesizer = synthesizer or OfflineSynthesizer()
    evaluator = evaluator or Evaluator(config)
    st = EvolutionState.from_dict(state.to_dict())
    st.check()
    k = st.generation + 1
    mode = "llm" if config.synthesizer == "llm" and connector is not None else "offline"

    # MAX phase
    champ_h = st.heuristic(st.champion_heuristic).program
    offspring: list[Member] = []
    notes: list[ReflectionNote] = []
    for parent in rank_generators(st.generators):
        parent_report = evaluator.report(parent.program, champ_h)
        for j in range(config.offspring_per_parent):
            seed = _draw(st, config, "gen", k, "generator", parent.id, j)
            child_prog, edit = synthesizer.generator(parent.program, seed, st.gen_weights, config.task,
                                                     _recent_reflections(st, "generator"))
            child_report = evaluator.report(child_prog, champ_h)
            child = Member(_new_id(st, "g"), child_prog, child_report.gap, parent.id, edit, k)
            offspring.append(child)
            note = reflect(parent_report, child_report, mode, side="generator", subject=child.id,
                           parent=parent.id, edit_class=edit, weights=st.gen_weights,
                           families=_families([parent, child]), connector=connector, generation=k)
            if note.weight_update is not None:
                st.gen_weights[edit] = note.weight_update[1]
            notes.append(note)
    st.generators = _select(st.generators, offspring, config.pop_gen, config.elitism, rank_generators)
    st.champion_generator = st.generators[0].id

    # MIN phase against a frozen top-k set
    frozen = st.generators[: config.top_k]
    st.frozen_generators = [m.id for m in frozen]
    fams = _families(frozen)

    def scored(prog: HeuristicProgram) -> tuple[list[GapReport], float]:
        reports = [evaluator.report(g.program, prog) for g in frozen]
        return reports, report_fitness(reports)

    parents: list[Member] = []
    for m in st.heuristics:
        _, fit = scored(m.program)
        parents.append(dataclasses.replace(m, fitness=fit))
    offspring = []
    for parent in rank_heuristics(parents):
        parent_reports, _ = scored(parent.program)
        for j in range(config.offspring_per_parent):
            seed = _draw(st, config, "gen", k, "heuristic", parent.id, j)
            child_prog, edit = synthesizer.heuristic(parent.program, seed, st.heur_weights, config.task,
                                                     _recent_reflections(st, "heuristic"))
            child_reports, fit = scored(child_prog)
            child = Member(_new_id(st, "h"), child_prog, fit, parent.id, edit, k)
            offspring.append(child)
            note = reflect(parent_reports, child_reports, mode, side="heuristic", subject=child.id,
                           parent=parent.id, edit_class=edit, weights=st.heur_weights,
                           families=fams, connector=connector, generation=k)
            if note.weight_update is not None:
                st.heur_weights[edit] = note.weight_update[1]
            notes.append(note)
    st.heuristics = _select(parents, offspring, config.pop_heur, config.elitism, rank_heuristics)
    st.champion_heuristic = st.heuristics[0].id

    st.reflections.extend(notes)
    st.generation = k
    st.history.append(_history_row(st))
    st.check()
    return st


# ---------------------------------------------------------------- run directory


@dataclass
class RunArtifacts:
    state: EvolutionState
    history: list[dict[str, Any]]
    run_dir: Path | None
    evaluator: Evaluator

    def champion_report(self) -> GapReport:
        st = self.state
        return self.evaluator.report(st.generator(st.champion_generator).program,
                                     st.heuristic(st.champion_heuristic).program)


def _dump(path: Path, text: str) -> None:
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text(text)
    os.replace(tmp, path)


def _json(obj: Any) -> str:
    return json.dumps(obj, sort_keys=True, indent=1) + "\n"


def _csv(header: Sequence[str], rows: Sequence[Sequence[Any]]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def persist_generation(run_dir: Path, state: EvolutionState, evaluator: Evaluator, config: EvolutionConfig) -> None:
    gdir = run_dir / f"gen_{state.generation}"
    gdir.mkdir(parents=True, exist_ok=True)
    _dump(gdir / "generators.json", _json([m.to_dict() for m in state.generators]))
    _dump(gdir / "heuristics.json", _json([m.to_dict() for m in state.heuristics]))
    rows = [("generator", m.id, m.program.id, repr(m.fitness), m.parent or "", m.edit or "", m.born)
            for m in state.generators]
    rows += [("heuristic", m.id, m.program.id, repr(m.fitness), m.parent or "", m.edit or "", m.born)
             for m in state.heuristics]
    _dump(gdir / "fitness.csv", _csv(("side", "id", "program_hash", "fitness", "parent", "edit", "born"), rows))
    new_notes = [r for r in state.reflections if r.generation == state.generation]
    _dump(gdir / "reflections.jsonl", "".join(json.dumps(r.to_dict(), sort_keys=True) + "\n" for r in new_notes))

    st = state
    champions = {
        "generation": st.generation,
        "champion_generator": st.champion_generator,
        "champion_heuristic": st.champion_heuristic,
        "champion_hardness": st.champion_hardness,
        "champion_gap": st.champion_gap,
        "generator_program": st.generator(st.champion_generator).program.to_dict(),
        "heuristic_program": st.heuristic(st.champion_heuristic).program.to_dict(),
        "frozen_generators": st.frozen_generators,
    }
    _dump(run_dir / "champions.json", _json(champions))
    _dump(run_dir / "curve.csv", _csv(
        ("generation", "champion_hardness", "champion_gap"),
        [(h["generation"], repr(h["champion_hardness"]), repr(h["champion_gap"])) for h in st.history],
    ))
    _dump(run_dir / "reference_cache.json", _json(evaluator.ref_cache))
    _dump(run_dir / "state.json", _json(st.to_dict()))


def run_coevolution(
    config: EvolutionConfig,
    run_dir: str | Path | None = None,
    resume: bool = True,
    transport=None,
    map_fn: Callable = map,
    on_generation: Callable[[EvolutionState], None] | None = None,
) -> RunArtifacts:
    """Initialize, run ``config.generations`` steps, and persist each generation.

    With ``resume`` set, an existing run directory whose config matches is
    continued from its last persisted generation.
    """
    path = Path(run_dir) if run_dir is not None else None
    ref_cache: dict[str, float] = {}
    state: EvolutionState | None = None
    if path is not None:
        path.mkdir(parents=True, exist_ok=True)
        cfg_file = path / "config.json"
        if cfg_file.exists() and resume:
            saved = json.loads(cfg_file.read_text())
            mine = config.to_dict()
            saved_cmp = {k: v for k, v in saved.items() if k != "generations"}
            mine_cmp = {k: v for k, v in mine.items() if k != "generations"}
            if saved_cmp != mine_cmp:
                raise ResumeError(f"{path} holds a run with a different config")
            if (path / "state.json").exists():
                state = EvolutionState.from_dict(json.loads((path / "state.json").read_text()))
            if (path / "reference_cache.json").exists():
                ref_cache = json.loads((path / "reference_cache.json").read_text())
        _dump(cfg_file, _json(config.to_dict()))

    evaluator = Evaluator(config, ref_cache, map_fn)
    synthesizer = make_synthesizer(config, transport)
    connector = getattr(synthesizer, "connector", None)
    if state is None:
        state = initial_state(config, evaluator)
        if path is not None:
            persist_generation(path, state, evaluator, config)
        if on_generation:
            on_generation(state)
    while state.generation < config.generations:
        state = step_generation(state, config, synthesizer, evaluator, connector)
        if path is not None:
            persist_generation(path, state, evaluator, config)
        if on_generation:
            on_generation(state)
        log.info("generation %d: hardness %.6f gap %.6f", state.generation,
                 state.champion_hardness, state.champion_gap)
    return RunArtifacts(state, state.history, path, evaluator)
