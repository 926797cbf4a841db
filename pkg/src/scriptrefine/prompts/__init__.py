"""Prompt templates, one resource file per agent role.

Templates use ``[slot]`` placeholders. Only the slots declared in
:data:`SLOTS` are substituted; other bracketed text (output-format hints
such as ``[score_A]``) is left for the model to read.
"""

from __future__ import annotations

import re
from functools import lru_cache
from importlib import resources

PROMPT_VERSION = "1"

_INSPECTOR_SLOTS = (
    "script_summary",
    "prev_scenes_str",
    "scene_number",
    "scene_json",
    "next_scenes_str",
    "global_review_suggestion",
    "beat_update",
)

SLOTS: dict[str, tuple[str, ...]] = {
    "summarizer": ("total_scenes", "title", "max_chars"),
    "engagement_eval": ("total_scenes", "title"),
    "character_eval": ("total_scenes", "title"),
    "theme_eval": ("total_scenes", "title"),
    "narrative_eval": ("total_scenes", "title"),
    "global_integrator": ("script_summary", "suggestions_text"),
    "dialogue_inspector": _INSPECTOR_SLOTS,
    "plot_inspector": _INSPECTOR_SLOTS,
    "character_inspector": _INSPECTOR_SLOTS,
    "scene_desc_inspector": _INSPECTOR_SLOTS,
    "scene_integrator": ("script_summary", "suggestions_text"),
    "router": ("scenes_data", "suggestion_text"),
    "brainstormer": ("title", "characters", "script_summary", "global_review_suggestion"),
    "decomposer": ("original_plot_summary", "enhanced_plot_summary"),
    "scene_editor": (
        "place",
        "plot_element",
        "beat",
        "characters",
        "original_description",
        "scene_suggestions",
    ),
    "dialogue_editor": (
        "place",
        "plot_element",
        "beat",
        "scene_description",
        "characters_str",
        "previous_dialogue",
        "original_dialogue",
        "dialogue_suggestions",
    ),
    "title_editor": ("title", "plot_summary"),
    "character_desc_editor": ("name", "description", "character_summary", "plot_summary"),
    "desc_polisher": ("plot_summary", "context", "scene_description"),
    "dialogue_polisher": (
        "plot_summary",
        "context",
        "place",
        "plot_element",
        "beat",
        "scene_description",
        "characters_str",
        "dialogue",
    ),
    "script_judge": ("total_scenes",),
    "component_judge": ("content_a", "content_b", "component_name"),
    "final_judge": ("component_results",),
}

_SLOT = re.compile(r"\[([a-z_]+)\]")


@lru_cache(maxsize=None)
def template(name: str) -> str:
    if name not in SLOTS:
        raise KeyError(f"unknown prompt template {name!r}")
    return resources.files(__name__).joinpath(f"{name}.txt").read_text(encoding="utf-8")


def render(name: str, /, **values: object) -> str:
    """Fill the declared slots of template ``name`` in a single pass.

    Every declared slot must be supplied and no undeclared value may be
    passed, so a renamed slot fails loudly instead of leaking brackets.
    """
    declared = set(SLOTS[name])
    given = set(values)
    if given != declared:
        missing = sorted(declared - given)
        extra = sorted(given - declared)
        raise KeyError(f"prompt {name!r}: missing slots {missing}, unexpected {extra}")
    text = template(name)

    def sub(m: re.Match[str]) -> str:
        key = m.group(1)
        return str(values[key]) if key in declared else m.group(0)

    return _SLOT.sub(sub, text)
