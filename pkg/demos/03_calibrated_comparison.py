# %% [markdown]
# # Cancelling position bias
#
# The toy judge below likes one script more than the other, and also adds 10
# points to whichever script it reads first. Running both presentation
# orders equally often and mapping scores back to the right labels removes
# the bonus.

# %%
import re
from dataclasses import replace

from scriptrefine import Gateway, compare_scripts_calibrated, load_sample_script
from scriptrefine.evaluation import compare_once
from scriptrefine.gateway import Completion

QUALITY = {"polished": 80.0, "rough": 65.0}
BIAS = 10.0


class ToyJudge:
    parallel_safe = False

    def complete(self, request):
        if request.role.value == "component_judge":
            first = "polished" if "[polished]" in request.prompt.split("SCRIPT_B")[0] else "rough"
            return Completion(f"COMPONENT: scene\nComparison: first={first}")
        first = re.search(r"first=(\w+)", request.prompt).group(1)
        second = "rough" if first == "polished" else "polished"
        return Completion(f"SCRIPT_A Score: {QUALITY[first] + BIAS}\n"
                          f"SCRIPT_B Score: {QUALITY[second]}\nDetailed Justification: toy")


base = load_sample_script()


def tagged(tag):
    return replace(base, scenes=tuple(replace(s, dialogue=f"[{tag}]\n{s.dialogue}") for s in base.scenes))


polished, rough = tagged("polished"), tagged("rough")

# %% [markdown]
# A single order is skewed by the bias.

# %%
single, _ = compare_once(rough, polished, Gateway(ToyJudge()))
print(f"rough first: rough {single.score_a:.1f}, polished {single.score_b:.1f}")

# %% [markdown]
# Balanced runs recover the true 15-point gap, and swapping inputs swaps the
# scores.

# %%
res = compare_scripts_calibrated(polished, rough, Gateway(ToyJudge()), repetitions=4, seed=1)
print(f"calibrated: polished {res.score_a:.1f}, rough {res.score_b:.1f}")
for row in res.orderings_used:
    print(row)
