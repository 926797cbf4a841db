# %% [markdown]
# # Rubric scoring and its repairs
#
# The judge scores four dimensions out of 25 and reports a total. Judges
# sometimes overshoot a dimension or add up wrong. Each dimension is
# clamped, the total is always the dimension sum, and every fix is logged.

# %%
from scriptrefine.evaluation import scores_from_judge

raw = {
    "character_development": 27,
    "narrative_structure": 21.5,
    "dialogue_quality": 19,
    "scene_presentation": 22,
    "total": 92,
    "justification": "Vivid, if uneven.",
}
ev = scores_from_judge(raw)
print(ev.scores.as_dict())
print("total", ev.total)
for note in ev.repairs:
    print(" -", note)
