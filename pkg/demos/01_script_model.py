# %% [markdown]
# # The script model
#
# A script is a title, a cast and an ordered list of scenes. Each scene has a
# place, a plot element, a beat, a description and a dialogue block. Agents
# see one scene at a time plus a small window of neighbours.

# %%
from scriptrefine import load_sample_script
from scriptrefine.script import character_presence, chunk_script, scene_context

script = load_sample_script()
print(script.title, "-", len(script), "scenes")
for scene in script.scenes:
    print(f"  {scene.index}. {scene.place:<28} {scene.plot_element}")

# %% [markdown]
# The context window around scene 3 holds excerpts of scenes 2 and 4.

# %%
ctx = scene_context(script, 3, window=1)
print([e.index for e in ctx.previous], [e.index for e in ctx.next])

# %% [markdown]
# Whole-script prompts go out in chunks. Scenes are packed greedily under the
# character limit.

# %%
chunks = chunk_script(script, 1500)
print(len(chunks), "chunks:", [len(c) for c in chunks])

# %%
name = next(iter(script.characters))
print(character_presence(script, name)[:300])
