"""The refinement loop: phase machine, improvement deltas, termination and
run-directory persistence.

Each iteration runs global review, the storyline editor (structural phase
only), scene-level review, the editors and the polish pass, then scores the
result. The storyline is locked once an iteration fails to improve the total
by at least ``threshold``; the run ends after ``patience`` consecutive such
iterations in the detail phase, or at ``max_iterations``.
"""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Sequence

from . import global_review, revision, scene_review
from .evaluation import ScriptEvaluation, evaluate_script, evaluation_report
from .gateway import Gateway, Transcript
from .revision import Phase
from .script import Script, scene_context, script_to_document, serialize_script
from .storage import atomic_write_json, atomic_write_jsonl, atomic_write_text

log = logging.getLogger(__name__)

TRACE_FILE = "trace.json"
CONVERGED = "converged"
MAX_ITERATIONS = "max_iterations"
ERROR = "error"


class ConfigError(ValueError):
    pass


class RefineError(RuntimeError):
    """A stage failed; ``trace`` holds everything recorded up to the failure."""

    def __init__(self, message: str, trace: "RefineTrace"):
        super().__init__(message)
        self.trace = trace


@dataclass(frozen=True)
class RefineConfig:
    max_iterations: int = 10
    threshold: float = 1.0
    patience: int = 3
    parse_retries: int = 3
    context_window: int = 1
    chunk_chars: int = 8000
    summary_chars: int = 4000
    parallelism: int = 4
    seed: int | None = None
    rollback_on_regression: bool = False

    def __post_init__(self) -> None:
        for name in ("max_iterations", "patience", "parse_retries", "context_window",
                     "chunk_chars", "summary_chars", "parallelism"):
            value = getattr(self, name)
            if isinstance(value, bool) or not isinstance(value, int):
                raise ConfigError(f"{name} must be an integer")
        if isinstance(self.threshold, bool) or not isinstance(self.threshold, (int, float)):
            raise ConfigError("threshold must be a number")
        if self.seed is not None and (isinstance(self.seed, bool) or not isinstance(self.seed, int)):
            raise ConfigError("seed must be an integer")
        if not isinstance(self.rollback_on_regression, bool):
            raise ConfigError("rollback_on_regression must be true or false")
        checks = [
            (self.max_iterations >= 1, "max_iterations must be >= 1"),
            (self.threshold > 0, "threshold must be > 0"),
            (self.patience >= 1, "patience must be >= 1"),
            (self.parse_retries >= 1, "parse_retries must be >= 1"),
            (self.context_window >= 1, "context_window must be >= 1"),
            (self.chunk_chars >= 500, "chunk_chars must be >= 500"),
            (self.summary_chars >= 1, "summary_chars must be >= 1"),
            (self.parallelism >= 1, "parallelism must be >= 1"),
        ]
        for ok, message in checks:
            if not ok:
                raise ConfigError(message)

    def to_document(self) -> dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_mapping(cls, values: dict[str, Any]) -> "RefineConfig":
        unknown = set(values) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(sorted(unknown))}")
        try:
            return cls(**values)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc


@dataclass
class IterationRecord:
    index: int
    phase: Phase
    snapshot: str | None
    evaluation: ScriptEvaluation
    delta: float
    storyline_ran: bool
    retry_counter: int
    scene_count: int
    title: str
    dropped_scenes: int = 0
    rolled_back: bool = False
    transcripts: list[int] = field(default_factory=list)
    warnings: list[dict[str, Any]] = field(default_factory=list)

    def to_document(self) -> dict[str, Any]:
        return {
            "index": self.index,
            "phase": self.phase.value,
            "snapshot": self.snapshot,
            "evaluation": self.evaluation.to_document(),
            "total": self.evaluation.total,
            "delta": self.delta,
            "storyline_ran": self.storyline_ran,
            "retry_counter": self.retry_counter,
            "scene_count": self.scene_count,
            "title": self.title,
            "dropped_scenes": self.dropped_scenes,
            "rolled_back": self.rolled_back,
            "transcripts": self.transcripts,
            "warnings": self.warnings,
        }


@dataclass
class RefineTrace:
    run_id: str
    config: dict[str, Any]
    baseline: dict[str, Any] | None = None
    records: list[IterationRecord] = field(default_factory=list)
    termination: str | None = None
    error: dict[str, Any] | None = None
    usage: dict[str, int] = field(default_factory=dict)

    def to_document(self) -> dict[str, Any]:
        return {
            "run_id": self.run_id,
            "config": self.config,
            "baseline": self.baseline,
            "iterations": [r.to_document() for r in self.records],
            "termination": self.termination,
            "error": self.error,
            "usage": self.usage,
        }

    def transcript_ids(self) -> list[int]:
        ids = list((self.baseline or {}).get("transcripts", []))
        for r in self.records:
            ids.extend(r.transcripts)
        if self.error:
            ids.extend(self.error.get("transcripts", []))
        return ids


# --- quality control ------------------------------------------------------------


def compute_delta(previous: ScriptEvaluation, current: ScriptEvaluation) -> float:
    """Signed improvement in total score; negative means the script regressed."""
    return current.total - previous.total


def should_transition(phase: Phase | str, delta: float, threshold: float) -> bool:
    return Phase(phase) is Phase.STRUCTURAL and delta < threshold


def trailing_stalls(detail_deltas: Sequence[float], threshold: float) -> int:
    """Length of the run of sub-threshold deltas at the end of the history."""
    count = 0
    for d in reversed(detail_deltas):
        if d >= threshold:
            break
        count += 1
    return count


def should_stop(
    phase: Phase | str,
    detail_deltas: Sequence[float],
    threshold: float,
    patience: int,
    iteration: int,
    max_iterations: int,
) -> bool:
    """Stop at the iteration cap, or once the last ``patience`` detail-phase
    deltas are all below ``threshold``."""
    if iteration >= max_iterations:
        return True
    return Phase(phase) is Phase.DETAIL and trailing_stalls(detail_deltas, threshold) >= patience


# --- persistence ---------------------------------------------------------------


def derive_run_id(script: Script, config: RefineConfig) -> str:
    payload = json.dumps(
        [script_to_document(script), config.to_document()], sort_keys=True, ensure_ascii=False
    )
    return "run-" + hashlib.sha256(payload.encode("utf-8")).hexdigest()[:12]


def allocate_run_dir(root: str | Path, run_id: str) -> tuple[str, Path]:
    """Pick ``root/run_id``, adding a numeric suffix if that directory is taken."""
    root = Path(root)
    candidate, n = run_id, 1
    while (root / candidate).exists():
        n += 1
        candidate = f"{run_id}-{n}"
    return candidate, root / candidate


class RunWriter:
    def __init__(self, run_dir: Path | None):
        self.run_dir = run_dir

    def iter_dir(self, index: int) -> str:
        return f"iter-{index}"

    def snapshot(
        self,
        index: int,
        script: Script,
        transcripts: Sequence[Transcript],
        *,
        evaluation: ScriptEvaluation | None = None,
        suggestions: list[dict] | None = None,
        dropped: Sequence[dict] | None = None,
    ) -> str | None:
        if self.run_dir is None:
            return None
        rel = self.iter_dir(index)
        base = self.run_dir / rel
        atomic_write_text(base / "script.json", serialize_script(script))
        self.transcripts(index, transcripts)
        if evaluation is not None:
            atomic_write_json(
                base / "evaluation.json", evaluation_report(evaluation, model="", timestamp=None)
            )
        if suggestions is not None:
            atomic_write_jsonl(base / "suggestions.jsonl", suggestions)
        if dropped:
            atomic_write_json(base / "dropped_scenes.json", list(dropped))
        return rel

    def transcripts(self, index: int, transcripts: Sequence[Transcript]) -> None:
        if self.run_dir is None:
            return
        folder = self.run_dir / self.iter_dir(index) / "transcripts"
        folder.mkdir(parents=True, exist_ok=True)
        for t in transcripts:
            atomic_write_json(folder / f"{t.id:05d}-{t.role}.json", t.to_dict())

    def trace(self, trace: RefineTrace) -> None:
        if self.run_dir is not None:
            atomic_write_json(self.run_dir / TRACE_FILE, trace.to_document())


# --- the loop -------------------------------------------------------------------


_RECORD_ROLES = {
    "global_review": lambda r: [f"{r['dimension']}_eval"],
    "global_integrated": lambda r: ["global_integrator"],
    "storyline": lambda r: ["brainstormer", "decomposer"],
    "inspection": lambda r: [scene_review.INSPECTOR_ROLE[scene_review.InspectorKind(r["inspector"])].value],
    "routed": lambda r: ["scene_integrator", "router"],
}


def _link_transcripts(records: list[dict], transcripts: Sequence[Transcript]) -> None:
    """Attach to each suggestion record the ids of the completions that produced it."""
    for record in records:
        roles = set(_RECORD_ROLES[record["stage"]](record))
        per_scene = record["stage"] in ("inspection", "routed")
        record["transcripts"] = [
            t.id for t in transcripts
            if t.role in roles and (not per_scene or t.context.get("scene") == record["scene"])
        ]


@dataclass
class IterationOutcome:
    script: Script
    storyline_ran: bool
    dropped: list[dict]
    suggestions: list[dict]


def run_iteration(
    script: Script, phase: Phase, index: int, config: RefineConfig, gateway: Gateway
) -> IterationOutcome:
    """One pass of global review, storyline editing, scene review and revision."""
    start = len(gateway.transcripts)
    with gateway.context(stage="global_review"):
        summary = global_review.summarize(
            script, gateway, chunk_chars=config.chunk_chars, max_chars=config.summary_chars
        )
        reviews = global_review.review_all(script, summary, gateway, chunk_chars=config.chunk_chars)
        guidance = global_review.integrate_global(summary, reviews, script, gateway)

    log_records: list[dict] = []
    for review in reviews:
        for s in review.suggestions:
            log_records.append(
                {"iteration": index, "stage": "global_review", "dimension": review.dimension.value,
                 "title": s.title, "description": s.description, "impact": s.impact}
            )
    for g in guidance:
        log_records.append(
            {"iteration": index, "stage": "global_integrated", "scene": g.scene_index,
             "place": g.place, "suggestion": g.suggestion}
        )

    current = script
    plot_summary = summary
    updates: dict[int, str] = {}
    dropped: list[dict] = []
    storyline_ran = phase is Phase.STRUCTURAL
    if storyline_ran:
        with gateway.context(stage="storyline"):
            enhanced = revision.brainstorm_plot(current, summary, guidance, gateway, phase=phase)
            beats = revision.decompose_plot(summary, enhanced, gateway, phase=phase)
        current = revision.apply_storyline(script, beats)
        dropped = [s.to_document() for s in script.scenes[len(beats):]]
        updates = revision.beat_updates(script, current)
        plot_summary = enhanced.text
        log_records.append({"iteration": index, "stage": "storyline", "enhanced_plot": enhanced.text,
                            "scene_count": len(beats), "dropped_scenes": len(dropped)})
        if dropped:
            gateway.warn("scenes_dropped", f"storyline dropped {len(dropped)} trailing scenes",
                         iteration=index, count=len(dropped))

    # guidance was mapped onto the pre-storyline scene list; clamp it onto the new one
    n = len(current)
    guidance = [
        g if g.scene_index <= n
        else global_review.IntegratedGlobalSuggestion(n, current.scene(n).place, g.suggestion)
        for g in guidance
    ]

    def review(scene_index: int) -> scene_review.SceneReview:
        scene = current.scene(scene_index)
        with gateway.context(stage="scene_review", scene=scene_index):
            return scene_review.review_scene(
                scene,
                scene_context(current, scene_index, config.context_window),
                summary,
                global_review.guidance_for(guidance, scene_index),
                gateway,
                beat_update=updates.get(scene_index),
            )

    scene_reviews = gateway.map(review, range(1, n + 1))
    for r in scene_reviews:
        log_records.extend(scene_review.suggestion_log(r, index))
    routed = {r.scene_index: (r.routing.dialogue, r.routing.scene_description) for r in scene_reviews}
    _link_transcripts(log_records, gateway.transcripts[start:])

    with gateway.context(stage="revision"):
        current = revision.edit_scenes(current, routed, gateway)
        current = revision.edit_script_description(current, plot_summary, gateway)
    with gateway.context(stage="polish"):
        current = revision.polish_script(current, plot_summary, gateway, window=config.context_window)

    if not storyline_ran:
        before = [(s.place, s.plot_element, s.beat) for s in script.scenes]
        after = [(s.place, s.plot_element, s.beat) for s in current.scenes]
        if before != after:
            raise AssertionError("scene skeleton changed during detail refinement")
    return IterationOutcome(current, storyline_ran, dropped, log_records)


def refine(
    script: Script,
    config: RefineConfig,
    gateway: Gateway,
    *,
    run_dir: str | Path | None = None,
    run_id: str | None = None,
) -> tuple[Script, RefineTrace]:
    """Iteratively refine ``script``; returns the final script and the trace.

    With ``run_dir`` set, every iteration is snapshotted under it and the
    trace is rewritten after each step. Any stage failure raises
    :class:`RefineError` carrying the trace recorded so far.
    """
    writer = RunWriter(Path(run_dir) if run_dir is not None else None)
    trace = RefineTrace(
        run_id=run_id or derive_run_id(script, config), config=config.to_document()
    )

    def fail(exc: BaseException, index: int, mark: tuple[int, int]) -> RefineError:
        transcripts, warnings = gateway.since(mark)
        writer.transcripts(index, transcripts)
        trace.termination = ERROR
        trace.error = {
            "iteration": index,
            "type": type(exc).__name__,
            "message": str(exc),
            "transcripts": [t.id for t in transcripts],
            "warnings": warnings,
        }
        trace.usage = gateway.usage_totals()
        writer.trace(trace)
        return RefineError(f"iteration {index} failed: {exc}", trace)

    mark = gateway.mark()
    try:
        with gateway.context(iteration=0, stage="evaluation"):
            baseline = evaluate_script(script, gateway, chunk_chars=config.chunk_chars)
    except Exception as exc:
        raise fail(exc, 0, mark) from exc
    transcripts, warnings = gateway.since(mark)
    trace.baseline = {
        "snapshot": writer.snapshot(0, script, transcripts, evaluation=baseline),
        "evaluation": baseline.to_document(),
        "total": baseline.total,
        "transcripts": [t.id for t in transcripts],
        "warnings": warnings,
    }
    writer.trace(trace)

    phase = Phase.STRUCTURAL
    current, previous_eval = script, baseline
    detail_deltas: list[float] = []

    for index in range(1, config.max_iterations + 1):
        mark = gateway.mark()
        try:
            with gateway.context(iteration=index):
                outcome = run_iteration(current, phase, index, config, gateway)
                with gateway.context(stage="evaluation"):
                    evaluation = evaluate_script(
                        outcome.script, gateway, chunk_chars=config.chunk_chars
                    )
        except Exception as exc:
            raise fail(exc, index, mark) from exc

        delta = compute_delta(previous_eval, evaluation)
        if phase is Phase.DETAIL:
            detail_deltas.append(delta)
        rolled_back = config.rollback_on_regression and delta < 0
        if rolled_back:
            gateway.warn("rolled_back", f"iteration {index} regressed by {-delta:g}; restored previous script",
                         iteration=index, delta=delta)
        else:
            current, previous_eval = outcome.script, evaluation

        transcripts, warnings = gateway.since(mark)
        snapshot = writer.snapshot(
            index, outcome.script, transcripts, evaluation=evaluation,
            suggestions=outcome.suggestions, dropped=outcome.dropped,
        )
        record = IterationRecord(
            index=index,
            phase=phase,
            snapshot=snapshot,
            evaluation=evaluation,
            delta=delta,
            storyline_ran=outcome.storyline_ran,
            retry_counter=trailing_stalls(detail_deltas, config.threshold),
            scene_count=len(outcome.script),
            title=outcome.script.title,
            dropped_scenes=len(outcome.dropped),
            rolled_back=rolled_back,
            transcripts=[t.id for t in transcripts],
            warnings=warnings,
        )
        trace.records.append(record)
        trace.usage = gateway.usage_totals()
        log.info("iteration %d (%s): total %.2f, delta %+.2f", index, phase.value, evaluation.total, delta)

        stop = should_stop(phase, detail_deltas, config.threshold, config.patience,
                           index, config.max_iterations)
        if stop:
            converged = phase is Phase.DETAIL and record.retry_counter >= config.patience
            trace.termination = CONVERGED if converged else MAX_ITERATIONS
            writer.trace(trace)
            break
        if should_transition(phase, delta, config.threshold):
            phase = Phase.DETAIL
        writer.trace(trace)

    return current, trace


def load_trace(path: str | Path) -> dict[str, Any]:
    """Read a trace document from a file or a run directory."""
    path = Path(path)
    if path.is_dir():
        path = path / TRACE_FILE
    doc = json.loads(path.read_text(encoding="utf-8"))
    if not isinstance(doc, dict) or not isinstance(doc.get("iterations"), list):
        raise ValueError(f"{path} is not a trace document")
    return doc
