"""Stage 3: storyline reconstruction, scene and dialogue editing, title and
character description updates, and the final polish pass."""

from __future__ import annotations

from dataclasses import dataclass, replace
from enum import Enum
from typing import Mapping, Sequence

from . import prompts
from .gateway import TEXT, AgentRole, Gateway, validate_shape
from .global_review import IntegratedGlobalSuggestion, format_guidance
from .scene_review import RoutedFinding
from .script import (
    Scene,
    SceneContext,
    Script,
    character_presence,
    characters_in_scene,
    format_characters,
    scene_context,
)


class Phase(str, Enum):
    STRUCTURAL = "structural"
    DETAIL = "detail"


class PhaseError(RuntimeError):
    """A storyline operation was requested outside the structural phase."""


class EmptyDecomposition(ValueError):
    pass


@dataclass(frozen=True)
class EnhancedPlot:
    text: str

    def __post_init__(self) -> None:
        if not self.text.strip():
            raise ValueError("enhanced plot must be non-empty")


@dataclass(frozen=True)
class SceneBeat:
    place: str
    plot_element: str
    beat: str


BEATS_SCHEMA = [{"place": TEXT, "plot_element": TEXT, "beat": TEXT}]


# --- storyline editor --------------------------------------------------------


def brainstorm_plot(
    script: Script,
    summary: str,
    guidance: Sequence[IntegratedGlobalSuggestion],
    gateway: Gateway,
    *,
    phase: Phase = Phase.STRUCTURAL,
) -> EnhancedPlot:
    if Phase(phase) is not Phase.STRUCTURAL:
        raise PhaseError("the storyline is locked during detail refinement")
    prompt = prompts.render(
        "brainstormer",
        title=script.title,
        characters=format_characters(script.characters),
        script_summary=summary,
        global_review_suggestion=format_guidance(guidance),
    )
    data = gateway.complete_structured(
        gateway.request(AgentRole.BRAINSTORMER, prompt), {"enhanced_plot": TEXT}
    )
    return EnhancedPlot(data["enhanced_plot"].strip())


def decompose_plot(
    original_summary: str,
    enhanced: EnhancedPlot,
    gateway: Gateway,
    *,
    phase: Phase = Phase.STRUCTURAL,
) -> list[SceneBeat]:
    if Phase(phase) is not Phase.STRUCTURAL:
        raise PhaseError("the storyline is locked during detail refinement")
    prompt = prompts.render(
        "decomposer",
        original_plot_summary=original_summary,
        enhanced_plot_summary=enhanced.text,
    )
    data = gateway.complete_structured(
        gateway.request(AgentRole.DECOMPOSER, prompt), BEATS_SCHEMA
    )
    if not data:
        raise EmptyDecomposition("decomposer returned no scenes")
    return [SceneBeat(b["place"].strip(), b["plot_element"].strip(), b["beat"].strip()) for b in data]


def apply_storyline(script: Script, beats: Sequence[SceneBeat]) -> Script:
    """Lay a new beat sequence over the script by position.

    Scene k takes beats[k]; existing description and dialogue at k are kept
    as drafts. Extra beats get empty drafts, surplus old scenes are dropped
    (callers archive ``script.scenes[len(beats):]``).
    """
    if not beats:
        raise EmptyDecomposition("cannot apply an empty storyline")
    scenes = []
    for k, b in enumerate(beats, start=1):
        old = script.scenes[k - 1] if k <= len(script.scenes) else None
        scenes.append(
            Scene(
                index=k,
                place=b.place,
                plot_element=b.plot_element,
                beat=b.beat,
                scene_description=old.scene_description if old else "",
                dialogue=old.dialogue if old else "",
            )
        )
    return replace(script, scenes=tuple(scenes))


def beat_updates(before: Script, after: Script) -> dict[int, str]:
    """Per-scene description of what the storyline editor changed."""
    updates = {}
    for scene in after.scenes:
        if scene.index <= len(before.scenes):
            old = before.scene(scene.index)
            if (old.place, old.plot_element, old.beat) == (
                scene.place,
                scene.plot_element,
                scene.beat,
            ):
                updates[scene.index] = "Unchanged by the Storyline Editor this iteration."
            else:
                updates[scene.index] = (
                    f"Old: {old.place} / {old.plot_element} / {old.beat}\n"
                    f"New: {scene.place} / {scene.plot_element} / {scene.beat}"
                )
        else:
            updates[scene.index] = (
                f"New scene added: {scene.place} / {scene.plot_element} / {scene.beat}"
            )
    return updates


# --- scene and dialogue editors ------------------------------------------------


def format_routed(suggestions: Sequence[RoutedFinding]) -> str:
    """Concatenate routed findings, highest priority first (stable for ties)."""
    if not suggestions:
        return "none"
    ordered = sorted(
        suggestions, key=lambda r: -(r.finding.priority if r.finding.priority is not None else 0)
    )
    return "\n".join(
        f"{n}. Issue: {r.finding.issue}\n   Suggestion: {r.finding.suggestion}"
        for n, r in enumerate(ordered, start=1)
    )


def edit_scene_description(
    scene: Scene,
    characters: Mapping[str, str],
    suggestions: Sequence[RoutedFinding],
    gateway: Gateway,
) -> str:
    if not suggestions and scene.scene_description.strip():
        return scene.scene_description
    prompt = prompts.render(
        "scene_editor",
        place=scene.place,
        plot_element=scene.plot_element,
        beat=scene.beat,
        characters=format_characters(characters),
        original_description=scene.scene_description or "(none)",
        scene_suggestions=format_routed(suggestions),
    )
    data = gateway.complete_structured(
        gateway.request(AgentRole.SCENE_EDITOR, prompt), {"scene_description": TEXT}
    )
    return data["scene_description"].strip()


def edit_dialogue(
    scene: Scene,
    characters: Mapping[str, str],
    previous_dialogue: str | None,
    suggestions: Sequence[RoutedFinding],
    gateway: Gateway,
) -> str:
    if not suggestions and scene.dialogue.strip():
        return scene.dialogue
    prompt = prompts.render(
        "dialogue_editor",
        place=scene.place,
        plot_element=scene.plot_element,
        beat=scene.beat,
        scene_description=scene.scene_description,
        characters_str=format_characters(characters),
        previous_dialogue=previous_dialogue or "(none)",
        original_dialogue=scene.dialogue or "(none)",
        dialogue_suggestions=format_routed(suggestions),
    )
    data = gateway.complete_structured(
        gateway.request(AgentRole.DIALOGUE_EDITOR, prompt), {"dialogue": TEXT}
    )
    return data["dialogue"].strip()


def edit_scenes(
    script: Script,
    routed: Mapping[int, tuple[Sequence[RoutedFinding], Sequence[RoutedFinding]]],
    gateway: Gateway,
) -> Script:
    """Apply scene-description edits (independent per scene), then dialogue
    edits in scene order so each one sees the previous scene's final dialogue.

    ``routed`` maps scene index to ``(dialogue_bucket, description_bucket)``.
    """

    def describe(scene: Scene) -> Scene:
        _, desc_bucket = routed.get(scene.index, ((), ()))
        text = edit_scene_description(scene, script.characters, desc_bucket, gateway)
        return replace(scene, scene_description=text)

    scenes = gateway.map(describe, script.scenes)
    current = replace(script, scenes=tuple(scenes))

    previous: str | None = None
    for scene in current.scenes:
        dial_bucket, _ = routed.get(scene.index, ((), ()))
        cast = characters_in_scene(current, scene)
        text = edit_dialogue(scene, cast, previous, dial_bucket, gateway)
        current = current.with_scene(replace(scene, dialogue=text))
        previous = text
    return current


# --- script description editor -------------------------------------------------


def edit_title(script: Script, plot_summary: str, gateway: Gateway) -> str:
    prompt = prompts.render("title_editor", title=script.title, plot_summary=plot_summary)
    data = gateway.complete_structured(
        gateway.request(AgentRole.TITLE_EDITOR, prompt), {"title": TEXT}
    )
    return data["title"].strip()


def edit_character_description(
    script: Script, name: str, plot_summary: str, gateway: Gateway
) -> str:
    presence = character_presence(script, name)  # raises UnknownCharacter
    prompt = prompts.render(
        "character_desc_editor",
        name=name,
        description=script.characters[name] or "(none)",
        character_summary=presence or "(no direct appearances found)",
        plot_summary=plot_summary,
    )
    data = gateway.complete_structured(
        gateway.request(AgentRole.CHARACTER_DESC_EDITOR, prompt),
        {"characters_description": TEXT},
    )
    return data["characters_description"].strip()


def edit_script_description(script: Script, plot_summary: str, gateway: Gateway) -> Script:
    title = edit_title(script, plot_summary, gateway)
    if title != script.title:
        gateway.warn("title_changed", f"title {script.title!r} -> {title!r}", old=script.title, new=title)
    names = list(script.characters)
    descriptions = gateway.map(
        lambda n: edit_character_description(script, n, plot_summary, gateway), names
    )
    return replace(script, title=title, characters=dict(zip(names, descriptions)))


# --- polisher -----------------------------------------------------------------


def polish_scene(
    scene: Scene, context: SceneContext, plot_summary: str, gateway: Gateway
) -> str:
    prompt = prompts.render(
        "desc_polisher",
        plot_summary=plot_summary,
        context=context.render(),
        scene_description=scene.scene_description or "(none)",
    )
    data = gateway.complete_structured(
        gateway.request(AgentRole.DESC_POLISHER, prompt), {"polished_description": TEXT}
    )
    return data["polished_description"].strip()


def polish_dialogue(
    scene: Scene,
    context: SceneContext,
    characters: Mapping[str, str],
    plot_summary: str,
    gateway: Gateway,
) -> str:
    prompt = prompts.render(
        "dialogue_polisher",
        plot_summary=plot_summary,
        context=context.render(),
        place=scene.place,
        plot_element=scene.plot_element,
        beat=scene.beat,
        scene_description=scene.scene_description,
        characters_str=format_characters(characters),
        dialogue=scene.dialogue or "(none)",
    )
    data = gateway.complete_structured(
        gateway.request(AgentRole.DIALOGUE_POLISHER, prompt), {"polished_dialogue": TEXT}
    )
    return data["polished_dialogue"].strip()


def polish_script(
    script: Script, plot_summary: str, gateway: Gateway, *, window: int = 1
) -> Script:
    """Sequential polish pass; each scene sees its already-polished neighbours."""
    current = script
    for index in range(1, len(current) + 1):
        scene = current.scene(index)
        ctx = scene_context(current, index, window)
        scene = replace(scene, scene_description=polish_scene(scene, ctx, plot_summary, gateway))
        current = current.with_scene(scene)
        ctx = scene_context(current, index, window)
        cast = characters_in_scene(current, scene)
        scene = replace(scene, dialogue=polish_dialogue(scene, ctx, cast, plot_summary, gateway))
        current = current.with_scene(scene)
    return current


# kept importable for callers validating decomposer output by hand
def validate_beats(value: object) -> list[SceneBeat]:
    validate_shape(value, BEATS_SCHEMA)
    assert isinstance(value, list)
    return [SceneBeat(b["place"], b["plot_element"], b["beat"]) for b in value]
