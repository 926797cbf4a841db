"""Script-level rubric scoring and calibrated scene-level pairwise comparison."""

from __future__ import annotations

import math
import random
import re
from dataclasses import dataclass, field
from typing import Any, Sequence

from . import prompts
from .gateway import NUMBER, AgentRole, Gateway, Opt, OutputError, SchemaMismatch, as_number
from .script import Scene, Script, chunk_script, render_scene_text

DIMENSION_MAX = 25.0
TOTAL_MAX = 100.0
SUM_TOLERANCE = 1e-9
SCORE_KEYS = ("character_development", "narrative_structure", "dialogue_quality", "scene_presentation")
NO_COUNTERPART = "(no counterpart scene)"
REPORT_KEYS = ("scores", "total", "justification", "model", "timestamp")


@dataclass(frozen=True)
class DimensionScores:
    character_development: float
    narrative_structure: float
    dialogue_quality: float
    scene_presentation: float

    def __post_init__(self) -> None:
        for key in SCORE_KEYS:
            v = getattr(self, key)
            if not 0.0 <= v <= DIMENSION_MAX:
                raise ValueError(f"{key}={v} outside [0, {DIMENSION_MAX:g}]")

    def as_dict(self) -> dict[str, float]:
        return {k: getattr(self, k) for k in SCORE_KEYS}

    def total(self) -> float:
        return math.fsum(self.as_dict().values())


@dataclass(frozen=True)
class ScriptEvaluation:
    scores: DimensionScores
    total: float
    justification: str
    # repairs applied to the judge's raw output, one message each
    repairs: tuple[str, ...] = field(default=(), compare=False)

    def __post_init__(self) -> None:
        if abs(self.total - self.scores.total()) > SUM_TOLERANCE:
            raise ValueError(f"total {self.total} != dimension sum {self.scores.total()}")

    @classmethod
    def from_scores(cls, scores: DimensionScores, justification: str = "") -> "ScriptEvaluation":
        return cls(scores, scores.total(), justification)

    def to_document(self) -> dict[str, Any]:
        return {
            "scores": self.scores.as_dict(),
            "total": self.total,
            "justification": self.justification,
            "repairs": list(self.repairs),
        }

    @classmethod
    def from_document(cls, doc: dict[str, Any]) -> "ScriptEvaluation":
        scores = DimensionScores(**{k: float(doc["scores"][k]) for k in SCORE_KEYS})
        return cls(scores, float(doc["total"]), doc.get("justification", ""), tuple(doc.get("repairs", ())))


@dataclass(frozen=True)
class PairwiseResult:
    score_a: float
    score_b: float
    justification: str
    orderings_used: tuple[dict[str, Any], ...] = ()
    components: tuple[dict[str, Any], ...] = ()

    def __post_init__(self) -> None:
        for name in ("score_a", "score_b"):
            v = getattr(self, name)
            if not 0.0 <= v <= TOTAL_MAX:
                raise ValueError(f"{name}={v} outside [0, {TOTAL_MAX:g}]")


# --- script-level rubric -------------------------------------------------------

JUDGE_SCHEMA = {
    **{k: NUMBER for k in SCORE_KEYS},
    "total": Opt(NUMBER),
    "justification": Opt(str),
}


def _finite(raw: object, key: str) -> float:
    value = as_number(raw)
    if not math.isfinite(value):
        raise SchemaMismatch(f"{key} is not finite: {raw!r}")
    return value


def scores_from_judge(data: dict[str, Any], gateway: Gateway | None = None) -> ScriptEvaluation:
    """Turn a validated judge object into a ScriptEvaluation.

    Out-of-range dimensions are clamped to [0, 25] and the total is always
    recomputed from the dimensions; every repair is recorded.
    """
    repairs: list[str] = []

    def note(kind: str, message: str, **ctx: object) -> None:
        repairs.append(message)
        if gateway is not None:
            gateway.warn(kind, message, **ctx)

    values = {}
    for key in SCORE_KEYS:
        v = _finite(data[key], key)
        if not 0.0 <= v <= DIMENSION_MAX:
            fixed = min(max(v, 0.0), DIMENSION_MAX)
            note("score_clamped", f"{key} {v:g} clamped to {fixed:g}", dimension=key, raw=v)
            v = fixed
        values[key] = v
    scores = DimensionScores(**values)
    total = scores.total()
    reported = data.get("total")
    if reported is None:
        note("total_missing", f"judge gave no total; using dimension sum {total:g}")
    else:
        rep = _finite(reported, "total")
        if abs(rep - total) > SUM_TOLERANCE:
            note(
                "total_resummed",
                f"reported total {rep:g} replaced by dimension sum {total:g}",
                reported=rep,
                total=total,
            )
    return ScriptEvaluation(scores, total, (data.get("justification") or "").strip(), tuple(repairs))


def evaluate_script(
    script: Script, gateway: Gateway, *, chunk_chars: int = 8000
) -> ScriptEvaluation:
    """Score the whole script on the four-dimension rubric.

    The script goes out in chunks; the judge role runs at temperature 0.
    """
    prompt = prompts.render("script_judge", total_scenes=len(script))
    request = gateway.request(
        AgentRole.SCRIPT_JUDGE, prompt, chunks=chunk_script(script, chunk_chars)
    )

    def check(data: dict) -> dict:
        for key in (*SCORE_KEYS, "total"):
            if data.get(key) is not None:
                _finite(data[key], key)
        return data

    data = gateway.complete_structured(request, JUDGE_SCHEMA, check)
    return scores_from_judge(data, gateway)


def evaluation_report(
    evaluation: ScriptEvaluation, *, model: str, timestamp: str | None
) -> dict[str, Any]:
    return {
        "scores": evaluation.scores.as_dict(),
        "total": evaluation.total,
        "justification": evaluation.justification,
        "model": model,
        "timestamp": timestamp,
    }


# --- pairwise comparison --------------------------------------------------------

_SCORE_LEAK = re.compile(r"(?i)\bscore\s*:\s*\d")


class ScoreInComparison(OutputError):
    pass


def pair_scenes(a: Script, b: Script) -> list[tuple[Scene | None, Scene | None]]:
    """Pair scenes by position; the longer script's surplus meets a placeholder."""
    n = max(len(a), len(b))
    return [
        (a.scenes[k] if k < len(a) else None, b.scenes[k] if k < len(b) else None)
        for k in range(n)
    ]


def _component_text(scene: Scene | None) -> str:
    return NO_COUNTERPART if scene is None else render_scene_text(scene)


def compare_components(
    component_a: Scene | None,
    component_b: Scene | None,
    gateway: Gateway,
    *,
    component_name: str | None = None,
) -> str:
    if component_a is None and component_b is None:
        raise ValueError("at least one side of a comparison needs a scene")
    if component_name is None:
        index = (component_a or component_b).index  # type: ignore[union-attr]
        component_name = f"Scene {index}"
    prompt = prompts.render(
        "component_judge",
        content_a=_component_text(component_a),
        content_b=_component_text(component_b),
        component_name=component_name,
    )

    def parse(raw: str) -> str:
        text = raw.strip()
        if not text:
            raise OutputError("empty comparison")
        if _SCORE_LEAK.search(text):
            raise ScoreInComparison("comparison contains a numerical score")
        return text

    return gateway.complete_validated(gateway.request(AgentRole.COMPONENT_JUDGE, prompt), parse)


def _score_pattern(label: str) -> re.Pattern[str]:
    return re.compile(rf"{label}\s*Score\s*:?\**\s*:?\s*\**\s*(-?\d+(?:\.\d+)?)", re.IGNORECASE)


_SCORE_A = _score_pattern("SCRIPT_A")
_SCORE_B = _score_pattern("SCRIPT_B")
_JUSTIFICATION = re.compile(r"Detailed Justification\s*:\s*", re.IGNORECASE)


def parse_final(raw: str) -> tuple[float, float, str]:
    found = []
    for label, pattern in (("SCRIPT_A", _SCORE_A), ("SCRIPT_B", _SCORE_B)):
        m = pattern.search(raw)
        if m is None:
            raise OutputError(f"no '{label} Score:' line")
        found.append(float(m.group(1)))
    m = _JUSTIFICATION.search(raw)
    justification = raw[m.end():].strip() if m else raw.strip()
    return found[0], found[1], justification


def finalize_comparison(component_results: Sequence[str], gateway: Gateway) -> PairwiseResult:
    if not component_results:
        raise ValueError("need at least one component result")
    prompt = prompts.render("final_judge", component_results="\n\n".join(component_results))
    score_a, score_b, justification = gateway.complete_validated(
        gateway.request(AgentRole.FINAL_JUDGE, prompt), parse_final
    )
    clamped = []
    for label, v in (("SCRIPT_A", score_a), ("SCRIPT_B", score_b)):
        fixed = min(max(v, 0.0), TOTAL_MAX)
        if fixed != v:
            gateway.warn("score_clamped", f"{label} score {v:g} clamped to {fixed:g}", label=label)
        clamped.append(fixed)
    return PairwiseResult(clamped[0], clamped[1], justification)


def compare_once(first: Script, second: Script, gateway: Gateway) -> tuple[PairwiseResult, list[str]]:
    """One comparison with ``first`` presented as SCRIPT_A."""
    texts = [
        compare_components(x, y, gateway, component_name=f"Scene {k}")
        for k, (x, y) in enumerate(pair_scenes(first, second), start=1)
    ]
    return finalize_comparison(texts, gateway), texts


def balanced_orders(repetitions: int, seed: int | None) -> list[str]:
    """Exactly half "AB" and half "BA", in a seeded shuffled order."""
    if repetitions <= 0 or repetitions % 2:
        raise ValueError(f"repetitions must be a positive even integer, got {repetitions}")
    orders = ["AB"] * (repetitions // 2) + ["BA"] * (repetitions // 2)
    random.Random(seed).shuffle(orders)
    return orders


def compare_scripts_calibrated(
    a: Script,
    b: Script,
    gateway: Gateway,
    *,
    repetitions: int = 2,
    seed: int | None = None,
) -> PairwiseResult:
    """Pairwise comparison with exact position balancing.

    Half the runs show ``a`` first, half show ``b`` first. Each run's scores
    are mapped back to the real scripts before averaging.
    """
    orders = balanced_orders(repetitions, seed)

    def run(order: str) -> tuple[PairwiseResult, list[str]]:
        return compare_once(a, b, gateway) if order == "AB" else compare_once(b, a, gateway)

    results = gateway.map(run, orders)
    ledger, components, notes = [], [], []
    scores_a, scores_b = [], []
    for n, (order, (res, texts)) in enumerate(zip(orders, results), start=1):
        sa, sb = (res.score_a, res.score_b) if order == "AB" else (res.score_b, res.score_a)
        scores_a.append(sa)
        scores_b.append(sb)
        ledger.append({"run": n, "order": order, "score_a": sa, "score_b": sb})
        components.append({"run": n, "order": order, "texts": texts})
        notes.append(f"[run {n}, order {order}] {res.justification}")
    return PairwiseResult(
        math.fsum(scores_a) / len(scores_a),
        math.fsum(scores_b) / len(scores_b),
        "\n\n".join(notes),
        tuple(ledger),
        tuple(components),
    )


def comparison_report(result: PairwiseResult, *, model: str, timestamp: str | None) -> dict[str, Any]:
    return {
        "score_a": result.score_a,
        "score_b": result.score_b,
        "justification": result.justification,
        "orderings": list(result.orderings_used),
        "components": list(result.components),
        "model": model,
        "timestamp": timestamp,
    }
