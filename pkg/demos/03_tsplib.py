# TSPLIB harness: read an EUC_2D file, solve the normalized instance with GLS,
# and report the tour length in original units against a best-known sidecar.

from pathlib import Path

from coevolve.heuristic_dsl import Target, baseline_heuristic
from coevolve.solvers import solve_gls
from coevolve.tsplib import load_best_known, read_tour, read_tsplib

data = Path(__file__).resolve().parents[1] / "tests" / "data" / "tsplib"
tsp = read_tsplib(data / "pcb442.tsp")
known = load_best_known(data / "best_known.csv")
print(tsp.name, tsp.dimension, "nodes; scale factor", tsp.scale)

# The sidecar value matches the shipped optimal tour under TSPLIB rounding.
print("optimal tour length (nint):", tsp.original_cost(read_tour(data / "pcb442.opt.tour")))

res = solve_gls(tsp.to_instance(), baseline_heuristic(Target.GLS_GUIDE))
cost = tsp.original_cost(res.best.order)
print(f"GLS tour (nint): {cost:.0f}  gap {cost / known['pcb442'] - 1:.3%}")
# Real-valued lengths are available too, but the sidecar optimum is a nint value.
print(f"GLS tour (real): {tsp.original_cost(res.best.order, 'real'):.1f}")
