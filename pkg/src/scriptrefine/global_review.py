"""Stage 1: summarize the whole script, review it along four dimensions,
and fold the reviews into per-scene guidance."""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Sequence

from . import prompts
from .gateway import TEXT, AgentRole, Gateway, Opt, SchemaMismatch
from .script import Script, chunk_script

DEFAULT_CHUNK_CHARS = 8000
DEFAULT_SUMMARY_CHARS = 4000
MAX_SUGGESTIONS = 2


class Dimension(str, Enum):
    ENGAGEMENT = "engagement"
    CHARACTER = "character"
    THEME = "theme"
    NARRATIVE = "narrative"


# fixed order keeps fixture replay reproducible
DIMENSIONS = (Dimension.ENGAGEMENT, Dimension.CHARACTER, Dimension.THEME, Dimension.NARRATIVE)

_DIMENSION_ROLE = {
    Dimension.ENGAGEMENT: AgentRole.ENGAGEMENT_EVAL,
    Dimension.CHARACTER: AgentRole.CHARACTER_EVAL,
    Dimension.THEME: AgentRole.THEME_EVAL,
    Dimension.NARRATIVE: AgentRole.NARRATIVE_EVAL,
}


@dataclass(frozen=True)
class GlobalSuggestion:
    dimension: Dimension
    title: str
    description: str
    impact: str


@dataclass(frozen=True)
class DimensionReview:
    dimension: Dimension
    suggestions: tuple[GlobalSuggestion, ...]
    overall_assessment: str


@dataclass(frozen=True)
class IntegratedGlobalSuggestion:
    scene_index: int
    place: str
    suggestion: str


SUMMARY_SCHEMA = {"summary": TEXT}

REVIEW_SCHEMA = {
    "suggestion": [{"title": str, "description": str, "impact": str}],
    "overall_assessment": str,
}

INTEGRATED_SCHEMA = {
    "integrated_suggestions": [{"scene_index": Opt(object), "place": Opt(str), "suggestion": str}]
}


def summarize(
    script: Script,
    gateway: Gateway,
    *,
    chunk_chars: int = DEFAULT_CHUNK_CHARS,
    max_chars: int = DEFAULT_SUMMARY_CHARS,
) -> str:
    prompt = prompts.render(
        "summarizer", total_scenes=len(script), title=script.title, max_chars=max_chars
    )
    request = gateway.request(
        AgentRole.SUMMARIZER, prompt, chunks=chunk_script(script, chunk_chars)
    )
    summary = gateway.complete_structured(request, SUMMARY_SCHEMA)["summary"].strip()
    if len(summary) > max_chars:
        gateway.warn(
            "summary_truncated",
            f"summary of {len(summary)} chars cut to {max_chars}",
        )
        summary = summary[:max_chars]
    return summary


def review_dimension(
    script: Script,
    summary: str,
    dimension: Dimension | str,
    gateway: Gateway,
    *,
    chunk_chars: int = DEFAULT_CHUNK_CHARS,
) -> DimensionReview:
    """Ask one dimension evaluator for 1-2 suggestions over the full script.

    The script goes out as ordered chunk messages, the summary rides along
    with the last one, then the evaluator prompt asks for the analysis.
    """
    dimension = Dimension(dimension)
    chunks = chunk_script(script, chunk_chars)
    chunks.append(f"Script summary:\n{summary}")
    prompt = prompts.render(
        _DIMENSION_ROLE[dimension].value, total_scenes=len(script), title=script.title
    )
    request = gateway.request(_DIMENSION_ROLE[dimension], prompt, chunks=chunks)
    data = gateway.complete_structured(request, REVIEW_SCHEMA)

    raw = data["suggestion"]
    if len(raw) > MAX_SUGGESTIONS:
        gateway.warn(
            "suggestions_clamped",
            f"{dimension.value} evaluator returned {len(raw)} suggestions; kept {MAX_SUGGESTIONS}",
            dimension=dimension.value,
        )
        raw = raw[:MAX_SUGGESTIONS]
    elif not raw:
        gateway.warn(
            "no_suggestions",
            f"{dimension.value} evaluator returned no suggestions",
            dimension=dimension.value,
        )
    suggestions = tuple(
        GlobalSuggestion(dimension, s["title"], s["description"], s["impact"]) for s in raw
    )
    return DimensionReview(dimension, suggestions, data["overall_assessment"])


def review_all(
    script: Script,
    summary: str,
    gateway: Gateway,
    *,
    chunk_chars: int = DEFAULT_CHUNK_CHARS,
) -> list[DimensionReview]:
    return gateway.map(
        lambda d: review_dimension(script, summary, d, gateway, chunk_chars=chunk_chars),
        DIMENSIONS,
    )


def format_reviews(reviews: Sequence[DimensionReview]) -> str:
    blocks = []
    n = 0
    for review in reviews:
        lines = [f"[{review.dimension.value.title()} Evaluator]"]
        for s in review.suggestions:
            n += 1
            lines.append(f"{n}. {s.title}\n   Description: {s.description}\n   Impact: {s.impact}")
        if not review.suggestions:
            lines.append("(no suggestions)")
        lines.append(f"Overall assessment: {review.overall_assessment}")
        blocks.append("\n".join(lines))
    return "\n\n".join(blocks)


def _scene_index(value: object) -> int:
    if isinstance(value, bool):
        raise SchemaMismatch(f"scene_index must be an integer, got {value!r}")
    if isinstance(value, int):
        return value
    if isinstance(value, float) and value.is_integer():
        return int(value)
    if isinstance(value, str) and value.strip().lstrip("-").isdigit():
        return int(value.strip())
    raise SchemaMismatch(f"scene_index must be an integer, got {value!r}")


def integrate_global(
    summary: str,
    reviews: Sequence[DimensionReview],
    script: Script,
    gateway: Gateway,
) -> list[IntegratedGlobalSuggestion]:
    """Map the four reviews onto concrete scenes.

    Scene indices outside the script are clamped to the nearest valid
    scene (with a warning); results come back sorted by scene.
    """
    dims = sorted(r.dimension.value for r in reviews)
    if dims != sorted(d.value for d in DIMENSIONS):
        raise ValueError(f"expected one review per dimension, got {dims}")

    prompt = prompts.render(
        "global_integrator", script_summary=summary, suggestions_text=format_reviews(reviews)
    )

    def check(data: dict) -> list[tuple[object, dict]]:
        out = []
        for item in data["integrated_suggestions"]:
            idx = item.get("scene_index")
            if idx is None:
                raise SchemaMismatch("integrated suggestion without scene_index")
            out.append((_scene_index(idx), item))
        return out

    parsed = gateway.complete_structured(
        gateway.request(AgentRole.GLOBAL_INTEGRATOR, prompt), INTEGRATED_SCHEMA, check
    )

    n = len(script)
    results = []
    for idx, item in parsed:
        if not 1 <= idx <= n:
            fixed = min(max(idx, 1), n)
            gateway.warn(
                "dangling_scene_index",
                f"integrator cited scene {idx} of a {n}-scene script; clamped to {fixed}",
                cited=idx,
                repaired=fixed,
            )
            idx = fixed
        place = item.get("place") or script.scene(idx).place
        results.append(IntegratedGlobalSuggestion(idx, place, item["suggestion"]))
    results.sort(key=lambda s: s.scene_index)
    return results


def guidance_for(
    guidance: Sequence[IntegratedGlobalSuggestion], scene_index: int
) -> list[IntegratedGlobalSuggestion]:
    return [g for g in guidance if g.scene_index == scene_index]


def format_guidance(guidance: Sequence[IntegratedGlobalSuggestion]) -> str:
    if not guidance:
        return "none"
    return "\n".join(f"- Scene {g.scene_index} ({g.place}): {g.suggestion}" for g in guidance)
