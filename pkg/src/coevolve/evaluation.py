"""Hardness measurement: relative optimality gap and reference costs."""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field
from typing import Any, Callable, Iterable, MutableMapping, Sequence

from .core import Instance, Kind
from .heuristic_dsl import HeuristicProgram, Target, baseline_heuristic
from .instance_dsl import GeneratorProgram, generate
from .solvers import (
    HELD_KARP_MAX_N,
    AcoParams,
    GlsParams,
    held_karp,
    solve_aco_op,
    solve_aco_tsp,
    solve_gls,
)

TASKS = ("tsp_gls", "tsp_aco", "op_aco")
TASK_TARGET = {
    "tsp_gls": Target.GLS_GUIDE,
    "tsp_aco": Target.ACO_ETA_TSP,
    "op_aco": Target.ACO_ETA_OP,
}
TASK_KIND = {"tsp_gls": Kind.TSP, "tsp_aco": Kind.TSP, "op_aco": Kind.OP}
CSV_COLUMNS = ("n", "generator_id", "heuristic_id", "gap", "mean_heur", "mean_ref", "batch")


class MeasurementError(ValueError):
    pass


class InstanceEvaluationError(RuntimeError):
    def __init__(self, seed: int, cause: Exception):
        super().__init__(f"instance seed {seed}: {cause}")
        self.seed = seed


def compute_gap(
    heur_costs: Sequence[float], ref_costs: Sequence[float], estimator: str = "ratio_of_means"
) -> float:
    """mean(heur) / mean(ref) - 1.

    ``estimator="mean_of_ratios"`` switches to mean(heur_i / ref_i) - 1 for
    sensitivity studies; the default is the ratio of expectations.
    """
    if len(heur_costs) == 0 or len(heur_costs) != len(ref_costs):
        raise MeasurementError("need two nonempty cost lists of equal length")
    if estimator == "ratio_of_means":
        mean_ref = math.fsum(ref_costs) / len(ref_costs)
        if not mean_ref > 0:
            raise MeasurementError("reference mean must be positive")
        return (math.fsum(heur_costs) / len(heur_costs)) / mean_ref - 1.0
    if estimator == "mean_of_ratios":
        if any(not r > 0 for r in ref_costs):
            raise MeasurementError("reference costs must be positive")
        return math.fsum(h / r for h, r in zip(heur_costs, ref_costs)) / len(ref_costs) - 1.0
    raise ValueError(f"unknown estimator {estimator!r}")


@dataclass(frozen=True)
class ReferencePolicy:
    """How the reference cost f* is obtained.

    Up to ``exact_threshold`` nodes the optimum is computed exactly; above it,
    the best of baseline GLS runs at ``ref_budget_multiplier * base_budget``
    steps over ``seeds``.  For OP the reference is baseline ACO at
    ``ref_budget_multiplier * base_iterations`` iterations.
    """

    exact_threshold: int = 12
    ref_budget_multiplier: float = 10.0
    base_budget: int = GlsParams().budget_ls_iters
    base_iterations: int = AcoParams().iterations
    seeds: tuple[int, ...] = (0, 1, 2)

    def __post_init__(self) -> None:
        if self.exact_threshold > HELD_KARP_MAX_N:
            raise ValueError(f"exact_threshold must be <= {HELD_KARP_MAX_N}")
        object.__setattr__(self, "seeds", tuple(int(s) for s in self.seeds))

    @property
    def key(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)

    def to_dict(self) -> dict[str, Any]:
        d = asdict(self)
        d["seeds"] = list(self.seeds)
        return d

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "ReferencePolicy":
        d = dict(d)
        if "seeds" in d:
            d["seeds"] = tuple(d["seeds"])
        return cls(**d)


# (instance id, content hash, policy key) -> reference value
ReferenceCache = MutableMapping[str, float]
_DEFAULT_CACHE: dict[str, float] = {}


def _cache_key(instance: Instance, policy: ReferencePolicy) -> str:
    return f"{instance.id}|{instance.content_hash()}|{policy.key}"


def reference_cost(
    instance: Instance, policy: ReferencePolicy = ReferencePolicy(), cache: ReferenceCache | None = None
) -> float:
    """Reference tour cost f*: exact when small, long-budget baseline GLS otherwise."""
    if instance.kind is not Kind.TSP:
        raise MeasurementError("reference_cost is defined for TSP instances")
    cache = _DEFAULT_CACHE if cache is None else cache
    key = _cache_key(instance, policy)
    if key in cache:
        return cache[key]
    if instance.n <= policy.exact_threshold:
        value = held_karp(instance).length
    else:
        budget = int(round(policy.ref_budget_multiplier * policy.base_budget))
        guide = baseline_heuristic(Target.GLS_GUIDE)
        value = min(
            solve_gls(instance, guide, GlsParams(budget_ls_iters=budget, seed=s)).cost_or_prize
            for s in policy.seeds
        )
    cache[key] = value
    return value


def reference_prize(
    instance: Instance, policy: ReferencePolicy = ReferencePolicy(), cache: ReferenceCache | None = None,
    seed: int = 0,
) -> float:
    """OP reference: baseline ACO at the multiplied iteration budget."""
    cache = _DEFAULT_CACHE if cache is None else cache
    key = f"{_cache_key(instance, policy)}|op|{seed}"
    if key in cache:
        return cache[key]
    iters = max(1, int(round(policy.ref_budget_multiplier * policy.base_iterations)))
    value = solve_aco_op(instance, baseline_heuristic(Target.ACO_ETA_OP),
                         AcoParams(iterations=iters, seed=seed)).cost_or_prize
    cache[key] = value
    return value


@dataclass
class GapReport:
    generator_id: str
    heuristic_id: str
    task: str
    n: int
    batch: int
    mean_heur_cost: float
    mean_ref_cost: float
    gap: float
    per_instance: list[tuple[int, float, float]]
    policy: dict[str, Any] = field(default_factory=dict)
    estimator: str = "ratio_of_means"

    def to_dict(self) -> dict[str, Any]:
        d = asdict(self)
        d["per_instance"] = [list(t) for t in self.per_instance]
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "GapReport":
        d = dict(d)
        d["per_instance"] = [tuple(t) for t in d["per_instance"]]
        return cls(**d)

    def csv_row(self) -> dict[str, Any]:
        return {
            "n": self.n,
            "generator_id": self.generator_id,
            "heuristic_id": self.heuristic_id,
            "gap": repr(self.gap),
            "mean_heur": repr(self.mean_heur_cost),
            "mean_ref": repr(self.mean_ref_cost),
            "batch": self.batch,
        }


def reports_to_csv(reports: Iterable[GapReport]) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=CSV_COLUMNS, lineterminator="\n")
    w.writeheader()
    for r in reports:
        w.writerow(r.csv_row())
    return buf.getvalue()


def default_solver_params(task: str):
    return GlsParams() if task == "tsp_gls" else AcoParams()


def solve_for_task(task: str, instance: Instance, heuristic: HeuristicProgram, params=None) -> float:
    if task == "tsp_gls":
        return solve_gls(instance, heuristic, params or GlsParams()).cost_or_prize
    if task == "tsp_aco":
        return solve_aco_tsp(instance, heuristic, params or AcoParams()).cost_or_prize
    if task == "op_aco":
        return solve_aco_op(instance, heuristic, params or AcoParams()).cost_or_prize
    raise ValueError(f"unknown task {task!r}")


def evaluate_instances(
    instances: Sequence[Instance],
    seeds: Sequence[int],
    heuristic: HeuristicProgram,
    task: str,
    policy: ReferencePolicy = ReferencePolicy(),
    solver_params=None,
    cache: ReferenceCache | None = None,
    estimator: str = "ratio_of_means",
    generator_id: str = "instances",
    map_fn: Callable = map,
) -> GapReport:
    """Gap (TSP) or prize regret (OP) of a heuristic over explicit instances.

    ``map_fn`` may be replaced by a parallel ordered map; results are
    assembled in seed order either way.
    """
    task = task.lower()
    if task not in TASKS:
        raise ValueError(f"unknown task {task!r}")
    if not instances:
        raise MeasurementError("batch must contain at least one instance")

    def one(item: tuple[int, Instance]) -> tuple[int, float, float]:
        seed, inst = item
        try:
            h = solve_for_task(task, inst, heuristic, solver_params)
            if task == "op_aco":
                r = reference_prize(inst, policy, cache)
            else:
                r = reference_cost(inst, policy, cache)
        except Exception as exc:  # attach the failing seed
            raise InstanceEvaluationError(seed, exc) from exc
        return int(seed), float(h), float(r)

    rows = list(map_fn(one, list(zip(seeds, instances))))
    heur = [r[1] for r in rows]
    ref = [r[2] for r in rows]
    if task == "op_aco":
        mean_h = math.fsum(heur) / len(heur)
        mean_r = math.fsum(ref) / len(ref)
        if mean_r > 0:
            gap = 1.0 - mean_h / mean_r
        elif mean_h == 0:
            gap = 0.0
        else:
            raise MeasurementError("reference prize is zero but the heuristic collected prize")
    else:
        gap = compute_gap(heur, ref, estimator)
        mean_h = math.fsum(heur) / len(heur)
        mean_r = math.fsum(ref) / len(ref)
    n = instances[0].n
    return GapReport(generator_id, heuristic.id, task, n, len(rows), mean_h, mean_r, gap,
                     rows, policy.to_dict(), estimator)


def batch_seeds(base_seed: int, batch: int) -> list[int]:
    return [int(base_seed) + i for i in range(batch)]


def evaluate_hardness(
    generator: GeneratorProgram,
    heuristic: HeuristicProgram,
    n: int,
    batch: int,
    base_seed: int,
    task: str,
    policy: ReferencePolicy = ReferencePolicy(),
    solver_params=None,
    cache: ReferenceCache | None = None,
    estimator: str = "ratio_of_means",
    map_fn: Callable = map,
) -> GapReport:
    """Hardness of ``generator`` for ``heuristic`` on seeds base_seed..base_seed+batch-1."""
    if batch < 1:
        raise MeasurementError("batch must be >= 1")
    task = task.lower()
    if task not in TASKS:
        raise ValueError(f"unknown task {task!r}")
    seeds = batch_seeds(base_seed, batch)
    instances = [generate(generator, n, s, TASK_KIND[task]) for s in seeds]
    return evaluate_instances(instances, seeds, heuristic, task, policy, solver_params, cache,
                              estimator, generator.id, map_fn)
