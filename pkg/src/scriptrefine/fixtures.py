"""Build fixture documents that drive a whole refine run offline.

Every refinement role gets a ``repeat`` block of well-formed responses, and
the script judge gets a finite sequence of scores (baseline first), so the
score trajectory of the run is exactly the one requested.
"""

from __future__ import annotations

import json
import math
from importlib import resources
from typing import Any, Sequence

from .script import Script, parse_script

SAMPLE_SCRIPT = "into_the_dark_woods.json"
SAMPLE_FIXTURES = "dark_woods_fixtures.json"

# the trajectory used by the bundled fixture run: three structural
# iterations, then four detail iterations that stall
SAMPLE_TOTALS = (58.0, 70.0, 78.0, 78.5, 84.0, 84.3, 84.5, 84.6)


def split_total(total: float) -> list[float]:
    """Four rubric scores in [0, 25] that add up to ``total``."""
    if not 0 <= total <= 100:
        raise ValueError(f"total {total} outside [0, 100]")
    q = min(25.0, math.ceil(total / 2) / 2)
    if total - 3 * q < 0:
        q = 0.0
    return [q, q, q, total - 3 * q]


def judge_response(total: float, note: str = "") -> dict[str, Any]:
    cd, ns, dq, sp = split_total(total)
    return {
        "character_development": cd,
        "narrative_structure": ns,
        "dialogue_quality": dq,
        "scene_presentation": sp,
        "total": math.fsum((cd, ns, dq, sp)),
        "justification": note or f"Scripted judgement totalling {total:g}.",
    }


def refine_responses(script: Script) -> dict[str, Any]:
    """Repeat blocks for every refinement role, shaped after ``script``."""
    scenes = script.scenes
    n = len(scenes)

    def review(dim: str) -> dict:
        return {
            "suggestion": [
                {
                    "title": f"Deepen the {dim} through-line",
                    "description": f"The {dim} thread is stated rather than dramatised.",
                    "impact": "Readers feel the stakes instead of being told them.",
                }
            ],
            "overall_assessment": f"The {dim} dimension is serviceable but flat.",
        }

    finding = {
        "global_review_reference": "Deepen the through-line",
        "beat_update_reference": "",
        "issue": "Emotion is announced in plain statements.",
        "suggestion": "Show the feeling through action and subtext.",
        "priority": 7,
    }
    return {
        "summarizer": {"repeat": [{"summary": f"{script.title}: " + " ".join(s.beat for s in scenes)}]},
        "engagement_eval": {"repeat": [review("engagement")]},
        "character_eval": {"repeat": [review("character")]},
        "theme_eval": {"repeat": [review("theme")]},
        "narrative_eval": {"repeat": [review("narrative")]},
        "global_integrator": {
            "repeat": [
                {
                    "integrated_suggestions": [
                        {"scene_index": 1, "place": scenes[0].place,
                         "suggestion": "Plant the central fear early so it pays off later."},
                        {"scene_index": n, "place": scenes[-1].place,
                         "suggestion": "Let the ending echo the opening image."},
                    ]
                }
            ]
        },
        **{
            role: {"repeat": [{"suggestions": [finding]}]}
            for role in ("dialogue_inspector", "plot_inspector",
                         "character_inspector", "scene_desc_inspector")
        },
        "scene_integrator": {
            "repeat": [
                {
                    "integrated_suggestions": [
                        {"source": "dialogue inspector", "issue": "Lines state feelings outright.",
                         "suggestion": "Carry the feeling in subtext and gesture.", "priority": 8},
                        {"source": "scene description inspector", "issue": "The setting is generic.",
                         "suggestion": "Add one concrete sensory detail that mirrors the mood.",
                         "priority": 6},
                    ]
                }
            ]
        },
        "router": {
            "repeat": [
                {
                    "scene_suggestions": [
                        {"classification": "dialogue", "reasoning": "Concerns spoken lines."},
                        {"classification": "scene_description", "reasoning": "Concerns the setting."},
                    ]
                }
            ]
        },
        "brainstormer": {
            "repeat": [{"enhanced_plot": "An enriched plot that keeps the world, the cast and the ending, "
                                         "while giving each turn a clearer cause."}]
        },
        "decomposer": {
            "repeat": [[{"place": s.place, "plot_element": s.plot_element, "beat": s.beat} for s in scenes]]
        },
        "scene_editor": {
            "repeat": [{"scene_description": f"{s.scene_description} The air smells of damp moss."}
                       for s in scenes]
        },
        "dialogue_editor": {"repeat": [{"dialogue": s.dialogue} for s in scenes]},
        "title_editor": {"repeat": [{"title": script.title}]},
        "character_desc_editor": {
            "repeat": [{"characters_description": d} for d in script.characters.values()]
        },
        "desc_polisher": {
            "repeat": [{"polished_description": f"{s.scene_description} The air smells of damp moss."}
                       for s in scenes]
        },
        "dialogue_polisher": {"repeat": [{"polished_dialogue": s.dialogue} for s in scenes]},
    }


def scripted_run(script: Script, totals: Sequence[float]) -> dict[str, Any]:
    """Fixture document for a full refine run whose judge reports ``totals``.

    ``totals[0]`` is the baseline score; each later entry is the score after
    one iteration. The judge sequence runs out after ``len(totals)`` calls.
    """
    if not totals:
        raise ValueError("need at least a baseline total")
    responses = refine_responses(script)
    responses["script_judge"] = [judge_response(t) for t in totals]
    return {"responses": responses}


def load_sample_script() -> Script:
    data = resources.files(__package__).joinpath("data", SAMPLE_SCRIPT).read_bytes()
    return parse_script(data)


def sample_fixtures_path():
    """Traversable path of the bundled fixture document."""
    return resources.files(__package__).joinpath("data", SAMPLE_FIXTURES)


def write_sample_fixtures(path) -> None:
    doc = scripted_run(load_sample_script(), SAMPLE_TOTALS)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps(doc, indent=2, ensure_ascii=False) + "\n")
