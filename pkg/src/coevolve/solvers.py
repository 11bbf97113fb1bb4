"""Solver scaffolds: guided local search and ant colony search for TSP, ant
colony search for the orienteering problem, plus exact and greedy baselines."""
from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from . import _kernels as K
from .core import Instance, InvalidSolutionError, Kind, OpRoute, Tour, make_op_route, make_tour
from .heuristic_dsl import HeuristicProgram, IncompatibleTargetError, Target, interpret
from .seeding import rng_from

HELD_KARP_MAX_N = 18
NEIGHBOR_LIST_SIZE = 10
TAU_MIN, TAU_MAX = 1e-9, 1e9


class SizeLimitError(ValueError):
    pass


@dataclass(frozen=True)
class GlsParams:
    budget_ls_iters: int = 20000
    lambda_alpha: float = 0.1
    seed: int = 0

    def __post_init__(self) -> None:
        if self.budget_ls_iters < 0 or self.lambda_alpha <= 0:
            raise ValueError("GLS budget must be >= 0 and lambda_alpha > 0")


@dataclass(frozen=True)
class AcoParams:
    n_ants: int | None = None  # None -> min(n, 30)
    iterations: int = 100
    alpha: float = 1.0
    beta: float = 2.0
    rho: float = 0.1
    q0: float = 0.0
    seed: int = 0

    def __post_init__(self) -> None:
        if not 0 < self.rho < 1:
            raise ValueError("rho must lie in (0, 1)")
        if self.alpha < 0 or self.beta < 0:
            raise ValueError("exponents must be nonnegative")
        if self.iterations < 1 or (self.n_ants is not None and self.n_ants < 1):
            raise ValueError("need at least one ant and one iteration")


@dataclass
class SolveResult:
    best: Tour | OpRoute
    cost_or_prize: float
    trace: list[float]
    wall_ms: float
    evaluations: int
    extra: dict[str, Any] = field(default_factory=dict)

    def to_dict(self) -> dict[str, Any]:
        return {
            "best": self.best.to_dict(),
            "cost_or_prize": self.cost_or_prize,
            "trace": list(self.trace),
            "wall_ms": self.wall_ms,
            "evaluations": self.evaluations,
        }


def _require(instance: Instance, kind: Kind, program: HeuristicProgram | None, target: Target | None):
    if instance.kind is not kind:
        raise IncompatibleTargetError(f"expected a {kind.value} instance, got {instance.kind.value}")
    if program is not None and program.target is not target:
        raise IncompatibleTargetError(f"expected a {target.value} program, got {program.target.value}")


def _tiny_tour(instance: Instance) -> Tour:
    # with three or fewer nodes every closed tour has the same length
    return make_tour(instance, list(range(instance.n)))


def nearest_neighbor(instance: Instance, start: int = 0) -> Tour:
    _require(instance, Kind.TSP, None, None)
    order = K.nearest_neighbor_tour(np.ascontiguousarray(instance.dist), int(start))
    return make_tour(instance, order)


def held_karp(instance: Instance) -> Tour:
    """Exact optimum via bitmask dynamic programming (n <= 18)."""
    _require(instance, Kind.TSP, None, None)
    if instance.n > HELD_KARP_MAX_N:
        raise SizeLimitError(f"held_karp supports n <= {HELD_KARP_MAX_N}, got {instance.n}")
    if instance.n <= 3:
        return _tiny_tour(instance)
    return make_tour(instance, K.held_karp_dp(np.ascontiguousarray(instance.dist)))


def neighbor_lists(dist: np.ndarray, k: int = NEIGHBOR_LIST_SIZE) -> np.ndarray:
    n = dist.shape[0]
    k = min(k, n - 1)
    d = dist.copy()
    np.fill_diagonal(d, np.inf)
    return np.ascontiguousarray(np.argsort(d, axis=1, kind="stable")[:, :k]).astype(np.int64)


def solve_gls(instance: Instance, guide: HeuristicProgram, params: GlsParams = GlsParams()) -> SolveResult:
    """Guided local search seeded by a nearest-neighbour tour.

    The guide matrix plays the role of the edge "cost" feature in the GLS
    utility ``guide[e] / (1 + penalty[e])``.
    """
    _require(instance, Kind.TSP, guide, Target.GLS_GUIDE)
    t0 = time.perf_counter()
    n = instance.n
    if n <= 3:
        tour = _tiny_tour(instance)
        return SolveResult(tour, tour.length, [tour.length], 0.0, 0)
    D = np.ascontiguousarray(instance.dist)
    start = int(rng_from(params.seed).integers(n))
    nn = K.nearest_neighbor_tour(D, start)
    if params.budget_ls_iters == 0:
        tour = make_tour(instance, nn)
        return SolveResult(tour, tour.length, [tour.length],
                           (time.perf_counter() - t0) * 1e3, 0)
    G = np.ascontiguousarray(interpret(guide, instance))
    best, trace, steps = K.gls_run(D, G, neighbor_lists(instance.dist), nn,
                                   int(params.budget_ls_iters), float(params.lambda_alpha))
    polished = K.two_opt_polish(D, best.copy())
    final = K.closed_length(D, polished)
    trace = trace.tolist()
    if final < trace[-1]:
        trace.append(final)
    tour = make_tour(instance, polished)
    return SolveResult(tour, tour.length, trace, (time.perf_counter() - t0) * 1e3, int(steps))


def _normalized_eta(eta: np.ndarray) -> np.ndarray:
    n = eta.shape[0]
    off = ~np.eye(n, dtype=bool)
    return eta / eta[off].max()


def solve_aco_tsp(instance: Instance, eta: HeuristicProgram, params: AcoParams = AcoParams()) -> SolveResult:
    """Ant System (every ant deposits 1/L) plus an elitist best-so-far deposit."""
    _require(instance, Kind.TSP, eta, Target.ACO_ETA_TSP)
    t0 = time.perf_counter()
    n = instance.n
    if n <= 3:
        tour = _tiny_tour(instance)
        return SolveResult(tour, tour.length, [tour.length], 0.0, 0)
    D = np.ascontiguousarray(instance.dist)
    heur = _normalized_eta(interpret(eta, instance)) ** params.beta
    ants = params.n_ants or min(n, 30)
    rng = rng_from(params.seed)
    l_nn = K.closed_length(D, K.nearest_neighbor_tour(D, 0))
    tau = np.full((n, n), 1.0 / (n * l_nn))
    best = None
    best_len = np.inf
    trace: list[float] = []
    for _ in range(params.iterations):
        W = np.ascontiguousarray(tau**params.alpha * heur)
        starts = rng.integers(0, n, size=ants)
        U = rng.random((ants, n))
        Q = rng.random((ants, n)) if params.q0 > 0 else np.ones((ants, n))
        tours = K.aco_tsp_construct(W, starts, U, Q, float(params.q0))
        lengths = np.array([K.closed_length(D, t) for t in tours])
        for k in range(ants):
            length = lengths[k]
            if length < best_len:
                best_len = length
                best = tours[k].copy()
        tau *= 1.0 - params.rho
        K.deposit(tau, tours, 1.0 / lengths)
        K.deposit(tau, best[None, :], np.array([1.0 / best_len]))
        np.clip(tau, TAU_MIN, TAU_MAX, out=tau)
        trace.append(float(best_len))
    tour = make_tour(instance, best)
    return SolveResult(tour, tour.length, trace, (time.perf_counter() - t0) * 1e3,
                       ants * params.iterations)


def greedy_op(instance: Instance) -> OpRoute:
    """Nearest-feasible-neighbour route; used to scale OP pheromone deposits."""
    return make_op_route(instance, K.greedy_op_route(np.ascontiguousarray(instance.dist),
                                                     float(instance.max_len)))


def solve_aco_op(instance: Instance, eta: HeuristicProgram, params: AcoParams = AcoParams()) -> SolveResult:
    """Ant colony search maximizing collected prize under the length budget."""
    _require(instance, Kind.OP, eta, Target.ACO_ETA_OP)
    t0 = time.perf_counter()
    n = instance.n
    D = np.ascontiguousarray(instance.dist)
    heur = _normalized_eta(interpret(eta, instance)) ** params.beta
    ants = params.n_ants or min(n, 30)
    rng = rng_from(params.seed)
    prizes = instance.prizes
    estimate = greedy_op(instance).collected_prize or 1.0
    tau = np.ones((n, n))
    best = np.array([0], dtype=np.int64)
    best_prize = 0.0
    trace: list[float] = []
    for _ in range(params.iterations):
        W = np.ascontiguousarray(tau**params.alpha * heur)
        U = rng.random((ants, n))
        Q = rng.random((ants, n)) if params.q0 > 0 else np.ones((ants, n))
        routes, _lengths = K.aco_op_construct(W, D, float(instance.max_len), U, Q, float(params.q0))
        for k in range(ants):
            r = routes[k]
            r = r[r >= 0]
            prize = float(prizes[r].sum())
            if prize > best_prize:
                best_prize = prize
                best = r.copy()
        tau *= 1.0 - params.rho
        if best.size > 1:
            a, b = best, np.roll(best, -1)
            tau[a, b] += best_prize / estimate
            tau[b, a] += best_prize / estimate
        np.clip(tau, TAU_MIN, TAU_MAX, out=tau)
        trace.append(best_prize)
    route = make_op_route(instance, best)
    if route.length > instance.max_len + 1e-9:
        raise InvalidSolutionError("internal error: route exceeds max_len")
    return SolveResult(route, route.collected_prize, trace,
                       (time.perf_counter() - t0) * 1e3, ants * params.iterations)


def solve(task: str, instance: Instance, program: HeuristicProgram, params=None) -> SolveResult:
    """Dispatch on task name: ``tsp_gls``, ``tsp_aco`` or ``op_aco``."""
    task = task.lower()
    if task == "tsp_gls":
        return solve_gls(instance, program, params or GlsParams())
    if task == "tsp_aco":
        return solve_aco_tsp(instance, program, params or AcoParams())
    if task == "op_aco":
        return solve_aco_op(instance, program, params or AcoParams())
    raise ValueError(f"unknown task {task!r}")
