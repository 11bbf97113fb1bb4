# A small adversarial co-evolution run: generators try to raise the baseline
# solver's gap, heuristics try to lower it on the hardest generators.
# The acceptance-scale run is `coevolve evolve --task tsp_gls --n 100 --generations 15`.

import json
import tempfile
from pathlib import Path

from coevolve.evolution import EvolutionConfig, run_coevolution

config = EvolutionConfig(task="tsp_gls", n=40, generations=5, batch=6, pop_gen=4, pop_heur=4,
                         elitism=1, solver_budget=200, master_seed=1)

run_dir = Path(tempfile.mkdtemp()) / "run"
arts = run_coevolution(config, run_dir)

# Champion hardness never decreases: elites keep the fitness measured at birth.
print((run_dir / "curve.csv").read_text())

st = arts.state
print("champion generator:", st.generator(st.champion_generator).program.to_json())
print("champion heuristic:", st.heuristic(st.champion_heuristic).program.to_json())

# Reflections record what each edit did; offline they drive the mutation-weight bandit.
for note in st.reflections[-3:]:
    print(note.summary_text())
print("generator edit weights:", json.dumps(st.gen_weights, sort_keys=True))
print("run directory:", sorted(p.name for p in run_dir.iterdir()))
