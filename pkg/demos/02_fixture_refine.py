# %% [markdown]
# # A full refinement run, offline
#
# The bundled fixture file replays every agent's answer, so the loop runs
# without a model. The judge reports 58 for the original and then a rising
# sequence. Gains fall under the threshold after iteration 3, which locks the
# storyline. Three more stalls end the run.

# %%
import tempfile

from scriptrefine import Gateway, RefineConfig, load_sample_script, refine
from scriptrefine.fixtures import sample_fixtures_path
from scriptrefine.gateway import FixtureBackend, FixtureSet

script = load_sample_script()
gateway = Gateway(FixtureBackend(FixtureSet.load(sample_fixtures_path())))

with tempfile.TemporaryDirectory() as run_dir:
    final, trace = refine(script, RefineConfig(threshold=1.0, patience=3), gateway, run_dir=run_dir)

print(f"baseline {trace.baseline['total']:.1f}")
for record in trace.records:
    flag = "storyline" if record.storyline_ran else ""
    print(f"{record.index:>2} {record.phase.value:<10} {record.evaluation.total:6.1f} "
          f"{record.delta:+6.2f} {flag}")
print("termination:", trace.termination)

# %% [markdown]
# Every completion is kept, tagged with the iteration, stage and scene that
# issued it.

# %%
print(len(gateway.transcripts), "completions")
print(gateway.transcripts[-1].role, gateway.transcripts[-1].context)
