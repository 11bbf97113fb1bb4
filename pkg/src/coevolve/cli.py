"""Command-line entry points (``coevolve <subcommand>``)."""
from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
from pathlib import Path
from typing import Sequence

from .core import Instance
from .evaluation import (
    TASK_KIND,
    TASK_TARGET,
    TASKS,
    ReferencePolicy,
    batch_seeds,
    evaluate_hardness,
    evaluate_instances,
)
from .heuristic_dsl import HeuristicProgram, baseline_heuristic
from .instance_dsl import GeneratorProgram, canonical_uniform, generate
from .report import ReportTable, render_table
from .solvers import AcoParams, GlsParams, solve

log = logging.getLogger("coevolve")


class UsageError(Exception):
    pass


def _load_generator(args) -> GeneratorProgram:
    if getattr(args, "uniform", False):
        prog = canonical_uniform()
        if args.kind == "op":
            from .evolution import canonical_for
            prog = canonical_for(TASK_KIND["op_aco"])
        return prog
    if not args.generator:
        raise UsageError("give --generator FILE or --uniform")
    return GeneratorProgram.from_json(Path(args.generator).read_text())


def _load_heuristic(path: str | None, task: str) -> HeuristicProgram:
    if path is None:
        return baseline_heuristic(TASK_TARGET[task])
    prog = HeuristicProgram.from_json(Path(path).read_text())
    if prog.target is not TASK_TARGET[task]:
        raise UsageError(f"heuristic targets {prog.target.value}, task {task} needs {TASK_TARGET[task].value}")
    return prog


def _params(task: str, args):
    if task == "tsp_gls":
        return GlsParams(budget_ls_iters=args.budget if args.budget is not None else GlsParams().budget_ls_iters,
                         seed=args.solver_seed)
    return AcoParams(iterations=args.budget if args.budget is not None else AcoParams().iterations,
                     seed=args.solver_seed)


def _policy(args) -> ReferencePolicy:
    base = ReferencePolicy()
    budget = args.budget
    return ReferencePolicy(
        exact_threshold=args.exact_threshold,
        ref_budget_multiplier=args.ref_multiplier,
        base_budget=budget if budget is not None else base.base_budget,
        base_iterations=budget if budget is not None else base.base_iterations,
    )


def _write(text: str, out: str | None) -> None:
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


def _instance_files(paths: Sequence[str]) -> list[Path]:
    files: list[Path] = []
    for p in map(Path, paths):
        if p.is_dir():
            files += sorted(p.glob("*.json"))
        elif p.exists():
            files.append(p)
        else:
            raise UsageError(f"no such file or directory: {p}")
    if not files:
        raise UsageError("no instance files found")
    return files


# ---------------------------------------------------------------- subcommands


def cmd_gen(args) -> int:
    prog = _load_generator(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for k, seed in enumerate(batch_seeds(args.seed, args.count)):
        inst = generate(prog, args.n, seed, args.kind)
        path = out / f"instance_{k:04d}.json"
        path.write_text(inst.to_json() + "\n")
        print(path)
    return 0


def cmd_solve(args) -> int:
    inst = Instance.from_json(Path(args.instance).read_text())
    heur = _load_heuristic(args.heuristic, args.task)
    result = solve(args.task, inst, heur, _params(args.task, args))
    d = result.to_dict()
    if not args.timing:
        d.pop("wall_ms")
    _write(json.dumps(d, sort_keys=True) + "\n", args.out)
    return 0


def cmd_gap(args) -> int:
    heur = _load_heuristic(args.heuristic, args.task)
    policy = _policy(args)
    params = _params(args.task, args)
    if args.instances:
        files = _instance_files([args.instances])
        instances = [Instance.from_json(f.read_text()) for f in files]
        report = evaluate_instances(instances, list(range(len(instances))), heur, args.task, policy, params,
                                    cache={}, generator_id=Path(args.instances).name)
    else:
        args.kind = TASK_KIND[args.task].value
        prog = _load_generator(args)
        report = evaluate_hardness(prog, heur, args.n, args.batch, args.seed, args.task, policy, params, cache={})
    if args.format == "csv":
        from .evaluation import reports_to_csv
        _write(reports_to_csv([report]), args.out)
    else:
        _write(json.dumps(report.to_dict(), sort_keys=True, indent=1) + "\n", args.out)
    return 0


def cmd_evolve(args) -> int:
    from .evolution import EvolutionConfig, run_coevolution
    from .llm import ConnectorConfig

    connector = None
    if args.synthesizer == "llm":
        if not args.endpoint:
            raise UsageError("--synthesizer llm needs --endpoint")
        connector = ConnectorConfig(endpoint=args.endpoint, model=args.model or "default")
    config = EvolutionConfig(
        task=args.task, n=args.n, generations=args.generations, batch=args.batch,
        pop_gen=args.pop_gen, pop_heur=args.pop_heur, offspring_per_parent=args.offspring,
        elitism=args.elitism, synthesizer=args.synthesizer, master_seed=args.seed,
        solver_budget=args.budget, connector=connector,
    )
    out = args.out or f"runs/{config.task}-n{config.n}-s{config.master_seed}"

    def progress(state) -> None:
        print(f"generation {state.generation}: champion hardness {state.champion_hardness:.6f}, "
              f"champion gap {state.champion_gap:.6f}", file=sys.stderr)

    arts = run_coevolution(config, out, resume=not args.no_resume, on_generation=progress)
    print(json.dumps({"run_dir": str(out), **arts.history[-1]}, sort_keys=True))
    return 0


def cmd_tsplib(args) -> int:
    from .tsplib import load_best_known, read_tsplib

    tsp = read_tsplib(args.file)
    heur = _load_heuristic(args.heuristic, "tsp_gls")
    inst = tsp.to_instance()
    result = solve("tsp_gls", inst, heur, _params("tsp_gls", args))
    cost = tsp.original_cost(result.best.order, args.rounding)
    out = {"name": tsp.name, "n": tsp.dimension, "cost": cost, "rounding": args.rounding,
           "normalized_cost": result.cost_or_prize, "best_known": None, "gap": None}
    if args.best_known:
        known = load_best_known(args.best_known)
        if tsp.name in known:
            out["best_known"] = known[tsp.name]
            out["gap"] = cost / known[tsp.name] - 1.0
    _write(json.dumps(out, sort_keys=True) + "\n", args.out)
    return 0


def cmd_report(args) -> int:
    run = Path(args.run_dir)
    state_file = run / "state.json"
    if not state_file.exists():
        raise UsageError(f"{run} is not a run directory (no state.json)")
    state = json.loads(state_file.read_text())
    history = state["history"]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(("generation", "champion_hardness", "champion_gap"))
    for h in history:
        w.writerow((h["generation"], repr(h["champion_hardness"]), repr(h["champion_gap"])))
    (run / "curve.csv").write_text(buf.getvalue())
    curve = ReportTable(
        "Champion hardness and champion gap per generation",
        ("generation", "champion_hardness", "champion_gap"),
        [(str(h["generation"]), (h["champion_hardness"], h["champion_gap"])) for h in history],
        (6, 6),
    )
    final = state["generators"]
    pool = ReportTable(
        "Final generator population (fitness = gap of the champion heuristic at birth)",
        ("generator", "fitness"),
        [(m["id"], (m["fitness"],)) for m in final],
        (6,),
    )
    heur = ReportTable(
        "Final heuristic population (fitness = mean gap over the frozen top generators)",
        ("heuristic", "fitness"),
        [(m["id"], (m["fitness"],)) for m in state["heuristics"]],
        (6,),
    )
    md = "\n".join(render_table(t, "markdown") for t in (curve, pool, heur))
    (run / "report.md").write_text(md)
    sys.stdout.write(md)
    return 0


def cmd_export_coords(args) -> int:
    files = _instance_files(args.inputs)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(("instance_id", "node", "x", "y", "prize"))
    for f in files:
        inst = Instance.from_json(f.read_text())
        for i, (x, y) in enumerate(inst.coords):
            prize = "" if inst.prizes is None else repr(float(inst.prizes[i]))
            w.writerow((inst.id, i, repr(float(x)), repr(float(y)), prize))
    _write(buf.getvalue(), args.out)
    return 0


# ---------------------------------------------------------------- parser


def _add_solver_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--budget", type=int, default=None,
                   help="GLS local-search steps (tsp_gls) or ACO iterations (tsp_aco, op_aco)")
    p.add_argument("--solver-seed", type=int, default=0)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="coevolve", description="Co-evolution of hard routing instances and heuristics.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate instance files from a generator program")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--generator", help="generator program JSON")
    src.add_argument("--uniform", action="store_true", help="use the canonical uniform generator")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--count", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--kind", choices=("tsp", "op"), default="tsp")
    p.add_argument("--out", default="instances")
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("solve", help="solve one instance and print a SolveResult")
    p.add_argument("--task", choices=TASKS, required=True)
    p.add_argument("--instance", required=True)
    p.add_argument("--heuristic", help="heuristic program JSON (default: the baseline for the task)")
    p.add_argument("--timing", action="store_true", help="include wall-clock time in the output")
    p.add_argument("--out")
    _add_solver_flags(p)
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("gap", help="measure the gap of a heuristic on generated or stored instances")
    p.add_argument("--task", choices=TASKS, required=True)
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--generator")
    src.add_argument("--uniform", action="store_true")
    src.add_argument("--instances", help="directory of instance JSON files")
    p.add_argument("--heuristic")
    p.add_argument("--n", type=int, default=100)
    p.add_argument("--batch", type=int, default=16)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--exact-threshold", type=int, default=ReferencePolicy().exact_threshold)
    p.add_argument("--ref-multiplier", type=float, default=ReferencePolicy().ref_budget_multiplier)
    p.add_argument("--format", choices=("json", "csv"), default="json")
    p.add_argument("--out")
    _add_solver_flags(p)
    p.set_defaults(func=cmd_gap)

    p = sub.add_parser("evolve", help="run adversarial co-evolution")
    p.add_argument("--task", choices=TASKS, default="tsp_gls")
    p.add_argument("--n", type=int, default=100)
    p.add_argument("--generations", type=int, default=15)
    p.add_argument("--batch", type=int, default=16)
    p.add_argument("--pop-gen", type=int, default=8)
    p.add_argument("--pop-heur", type=int, default=8)
    p.add_argument("--offspring", type=int, default=2)
    p.add_argument("--elitism", type=int, default=2)
    p.add_argument("--synthesizer", choices=("offline", "llm"), default="offline")
    p.add_argument("--endpoint")
    p.add_argument("--model")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--budget", type=int, default=None, help="per-solve budget inside the run")
    p.add_argument("--out", help="run directory (default runs/<task>-n<n>-s<seed>)")
    p.add_argument("--no-resume", action="store_true")
    p.set_defaults(func=cmd_evolve)

    p = sub.add_parser("tsplib", help="solve a TSPLIB EUC_2D file with GLS")
    p.add_argument("file")
    p.add_argument("--heuristic")
    p.add_argument("--best-known", help="CSV with columns name,best_known")
    p.add_argument("--rounding", choices=("nint", "real"), default="nint")
    p.add_argument("--out")
    _add_solver_flags(p)
    p.set_defaults(func=cmd_tsplib)

    p = sub.add_parser("report", help="rebuild curve.csv and markdown tables from a run directory")
    p.add_argument("run_dir")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("export-coords", help="flatten instance coordinates into one CSV")
    p.add_argument("inputs", nargs="+", help="instance JSON files or directories")
    p.add_argument("--out")
    p.set_defaults(func=cmd_export_coords)
    return parser


def cli_main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse reports usage errors with status 2
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"coevolve: error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:
        print(f"coevolve: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(cli_main())
