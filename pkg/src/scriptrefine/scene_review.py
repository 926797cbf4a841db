"""Stage 2: per-scene inspection, integration and routing.

Each scene is inspected by four inspectors under the global guidance for
that scene. Their findings are merged by an integrator, and the router
sends every merged finding to exactly one editor.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from enum import Enum
from typing import Sequence

from . import prompts
from .gateway import (
    NUMBER,
    TEXT,
    AgentRole,
    Gateway,
    Opt,
    OutputError,
    StructuredOutputExhausted,
    as_number,
)
from .global_review import IntegratedGlobalSuggestion, format_guidance
from .script import Scene, SceneContext


class InspectorKind(str, Enum):
    DIALOGUE = "dialogue"
    PLOT = "plot"
    CHARACTER = "character"
    SCENE_DESCRIPTION = "scene_description"


INSPECTORS = (
    InspectorKind.DIALOGUE,
    InspectorKind.PLOT,
    InspectorKind.CHARACTER,
    InspectorKind.SCENE_DESCRIPTION,
)

INSPECTOR_ROLE = {
    InspectorKind.DIALOGUE: AgentRole.DIALOGUE_INSPECTOR,
    InspectorKind.PLOT: AgentRole.PLOT_INSPECTOR,
    InspectorKind.CHARACTER: AgentRole.CHARACTER_INSPECTOR,
    InspectorKind.SCENE_DESCRIPTION: AgentRole.SCENE_DESC_INSPECTOR,
}

DIALOGUE = "dialogue"
SCENE_DESCRIPTION = "scene_description"
LABELS = (DIALOGUE, SCENE_DESCRIPTION)


@dataclass(frozen=True)
class InspectorFinding:
    inspector: InspectorKind
    global_review_reference: str
    beat_update_reference: str | None
    issue: str
    suggestion: str
    priority: int


@dataclass(frozen=True)
class IntegratedFinding:
    scene_index: int
    source: str
    issue: str
    suggestion: str
    priority: int | None = None


@dataclass(frozen=True)
class RoutedFinding:
    finding: IntegratedFinding
    classification: str
    reasoning: str


@dataclass(frozen=True)
class Routing:
    dialogue: tuple[RoutedFinding, ...] = ()
    scene_description: tuple[RoutedFinding, ...] = ()

    def __len__(self) -> int:
        return len(self.dialogue) + len(self.scene_description)


@dataclass(frozen=True)
class SceneReview:
    """Everything the scene-level review produced for one scene."""

    scene_index: int
    findings: tuple[InspectorFinding, ...]
    integrated: tuple[IntegratedFinding, ...]
    routing: Routing


FINDINGS_SCHEMA = {
    "suggestions": [
        {
            "global_review_reference": Opt(str),
            "beat_update_reference": Opt(str),
            "issue": TEXT,
            "suggestion": TEXT,
            "priority": NUMBER,
        }
    ]
}

INTEGRATED_SCHEMA = {
    "integrated_suggestions": [
        {"source": Opt(str), "issue": TEXT, "suggestion": TEXT, "priority": Opt(NUMBER)}
    ]
}

ROUTER_SCHEMA = {"scene_suggestions": [{"classification": str, "reasoning": Opt(str)}]}


def scene_json(scene: Scene) -> str:
    return json.dumps(scene.to_document(), indent=2, ensure_ascii=False)


def _clamp_priority(raw: object, gateway: Gateway, **ctx: object) -> int:
    value = int(round(as_number(raw)))
    if not 1 <= value <= 10:
        fixed = min(max(value, 1), 10)
        gateway.warn("priority_clamped", f"priority {value} clamped to {fixed}", **ctx)
        return fixed
    return value


def inspect_scene(
    scene: Scene,
    context: SceneContext,
    summary: str,
    guidance: Sequence[IntegratedGlobalSuggestion],
    kind: InspectorKind | str,
    gateway: Gateway,
    *,
    beat_update: str | None = None,
) -> list[InspectorFinding]:
    kind = InspectorKind(kind)
    prompt = prompts.render(
        INSPECTOR_ROLE[kind].value,
        script_summary=summary,
        prev_scenes_str=context.render_previous(),
        scene_number=scene.index,
        scene_json=scene_json(scene),
        next_scenes_str=context.render_next(),
        global_review_suggestion=format_guidance(guidance),
        beat_update=beat_update or "(none)",
    )
    data = gateway.complete_structured(
        gateway.request(INSPECTOR_ROLE[kind], prompt), FINDINGS_SCHEMA
    )
    findings = []
    for item in data["suggestions"]:
        findings.append(
            InspectorFinding(
                inspector=kind,
                global_review_reference=item.get("global_review_reference") or "",
                beat_update_reference=item.get("beat_update_reference"),
                issue=item["issue"],
                suggestion=item["suggestion"],
                priority=_clamp_priority(
                    item["priority"], gateway, scene=scene.index, inspector=kind.value
                ),
            )
        )
    return findings


def format_findings(findings: Sequence[InspectorFinding]) -> str:
    lines = []
    for n, f in enumerate(findings, start=1):
        ref = f.global_review_reference or "-"
        lines.append(
            f"{n}. [{f.inspector.value} inspector, priority {f.priority}] "
            f"(Global review: {ref}; Storyline: {f.beat_update_reference or '-'})\n"
            f"   Issue: {f.issue}\n   Suggestion: {f.suggestion}"
        )
    return "\n".join(lines)


def _dedupe_key(text: str) -> str:
    return " ".join(text.split()).casefold()


def integrate_findings(
    scene_index: int,
    summary: str,
    findings: Sequence[InspectorFinding],
    gateway: Gateway,
) -> list[IntegratedFinding]:
    """Merge the inspectors' findings for one scene.

    With no findings the integrator is not called. Exact duplicate issues
    that survive the integrator are dropped (first one wins).
    """
    if not findings:
        return []
    prompt = prompts.render(
        "scene_integrator",
        script_summary=summary,
        suggestions_text=f"Scene {scene_index}\n" + format_findings(findings),
    )
    data = gateway.complete_structured(
        gateway.request(AgentRole.SCENE_INTEGRATOR, prompt), INTEGRATED_SCHEMA
    )
    seen: set[str] = set()
    out = []
    for item in data["integrated_suggestions"]:
        key = _dedupe_key(item["issue"])
        if key in seen:
            gateway.warn(
                "duplicate_finding", f"dropped duplicate issue in scene {scene_index}",
                scene=scene_index,
            )
            continue
        seen.add(key)
        priority = item.get("priority")
        out.append(
            IntegratedFinding(
                scene_index=scene_index,
                source=item.get("source") or "scene-level review",
                issue=item["issue"],
                suggestion=item["suggestion"],
                priority=(
                    _clamp_priority(priority, gateway, scene=scene_index)
                    if priority is not None
                    else None
                ),
            )
        )
    return out


class InvalidClassification(OutputError):
    """The router answered with something other than the two labels."""

    def __init__(self, message: str, labels: list[str | None], reasons: list[str]):
        super().__init__(message)
        self.labels = labels
        self.reasons = reasons


def _normalize_label(raw: str) -> str | None:
    label = raw.strip().strip("'\"").lower().replace(" ", "_").replace("-", "_")
    if label in LABELS:
        return label
    if label in ("scene", "description", "scenedescription"):
        return SCENE_DESCRIPTION
    return None


def format_for_routing(integrated: Sequence[IntegratedFinding]) -> str:
    lines = [
        f"There are {len(integrated)} suggestions. Classify each one separately and return "
        "exactly one entry per suggestion, in the same order."
    ]
    for n, f in enumerate(integrated, start=1):
        lines.append(f"{n}. Issue: {f.issue}\n   Suggestion: {f.suggestion}")
    return "\n".join(lines)


def route_findings(
    scene: Scene, integrated: Sequence[IntegratedFinding], gateway: Gateway
) -> Routing:
    """Partition findings into the dialogue and scene-description buckets.

    One batched router call per scene. If the router keeps returning
    unusable labels, the affected findings fall back to dialogue with a
    warning; malformed JSON is still an error.
    """
    if not integrated:
        return Routing()
    prompt = prompts.render(
        "router", scenes_data=scene_json(scene), suggestion_text=format_for_routing(integrated)
    )
    expected = len(integrated)

    def check(data: dict) -> tuple[list[str], list[str]]:
        entries = data["scene_suggestions"]
        labels = [_normalize_label(e["classification"]) for e in entries[:expected]]
        reasons = [e.get("reasoning") or "" for e in entries[:expected]]
        labels += [None] * (expected - len(labels))
        reasons += [""] * (expected - len(reasons))
        if len(entries) != expected or None in labels:
            raise InvalidClassification(
                f"router returned {len(entries)} entries for {expected} suggestions, "
                f"{labels.count(None)} unusable",
                labels,
                reasons,
            )
        return labels, reasons

    try:
        labels, reasons = gateway.complete_structured(
            gateway.request(AgentRole.ROUTER, prompt), ROUTER_SCHEMA, check
        )
    except StructuredOutputExhausted as exc:
        if not isinstance(exc.last_error, InvalidClassification):
            raise
        labels, reasons = list(exc.last_error.labels), list(exc.last_error.reasons)
        for i, label in enumerate(labels):
            if label is None:
                gateway.warn(
                    "router_default",
                    f"scene {scene.index} finding {i + 1} unclassifiable; routed to dialogue",
                    scene=scene.index,
                    finding=i + 1,
                )
                labels[i] = DIALOGUE
                reasons[i] = reasons[i] or "defaulted to dialogue after invalid classification"

    dialogue, description = [], []
    for finding, label, reason in zip(integrated, labels, reasons):
        routed = RoutedFinding(finding, label, reason)
        (dialogue if label == DIALOGUE else description).append(routed)
    return Routing(tuple(dialogue), tuple(description))


def review_scene(
    scene: Scene,
    context: SceneContext,
    summary: str,
    guidance: Sequence[IntegratedGlobalSuggestion],
    gateway: Gateway,
    *,
    beat_update: str | None = None,
) -> SceneReview:
    """Full scene-level pipeline for one scene: inspect, integrate, route."""
    per_inspector = gateway.map(
        lambda kind: inspect_scene(
            scene, context, summary, guidance, kind, gateway, beat_update=beat_update
        ),
        INSPECTORS,
    )
    findings = [f for batch in per_inspector for f in batch]
    integrated = integrate_findings(scene.index, summary, findings, gateway)
    routing = route_findings(scene, integrated, gateway)
    return SceneReview(scene.index, tuple(findings), tuple(integrated), routing)


def suggestion_log(review: SceneReview, iteration: int) -> list[dict]:
    """Flat records for the per-iteration suggestion log."""
    records: list[dict] = []
    for f in review.findings:
        records.append(
            {
                "iteration": iteration,
                "stage": "inspection",
                "scene": review.scene_index,
                "inspector": f.inspector.value,
                "priority": f.priority,
                "issue": f.issue,
                "suggestion": f.suggestion,
                "global_review_reference": f.global_review_reference,
                "beat_update_reference": f.beat_update_reference,
            }
        )
    for bucket in (review.routing.dialogue, review.routing.scene_description):
        for r in bucket:
            records.append(
                {
                    "iteration": iteration,
                    "stage": "routed",
                    "scene": review.scene_index,
                    "source": r.finding.source,
                    "classification": r.classification,
                    "reasoning": r.reasoning,
                    "priority": r.finding.priority,
                    "issue": r.finding.issue,
                    "suggestion": r.finding.suggestion,
                }
            )
    return records
