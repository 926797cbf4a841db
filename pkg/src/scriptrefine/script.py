"""Script document model: scenes, characters, the JSON document format,
and the context excerpts handed to scene-level agents."""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field, replace
from typing import Any, Mapping

SCENE_KEYS = ("place", "plot_element", "beat", "scene_description", "dialogue")
EXCERPT_CHARS = 500
TRUNCATION_MARKER = "\n[... dialogue truncated ...]\n"


class SchemaError(ValueError):
    """Raised when a script document does not match the canonical schema.

    ``path`` points at the offending location, e.g. ``scenes[2].beat``.
    """

    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}")
        self.path = path


class UnknownCharacter(KeyError):
    pass


@dataclass(frozen=True)
class Scene:
    index: int
    place: str
    plot_element: str
    beat: str
    scene_description: str = ""
    dialogue: str = ""

    def to_document(self) -> dict[str, str]:
        return {key: getattr(self, key) for key in SCENE_KEYS}


@dataclass(frozen=True)
class Script:
    """An immutable script snapshot.

    ``characters`` maps name to description and keeps insertion order.
    ``summary`` caches the summarizer output for the current iteration; it
    is not part of the document format and does not take part in equality.
    """

    title: str
    characters: Mapping[str, str]
    scenes: tuple[Scene, ...]
    summary: str | None = field(default=None, compare=False)

    def __post_init__(self) -> None:
        if not self.title or not self.title.strip():
            raise SchemaError("title", "must be non-empty")
        if not self.scenes:
            raise SchemaError("scenes", "must contain at least one scene")
        for position, scene in enumerate(self.scenes, start=1):
            if scene.index != position:
                raise SchemaError(
                    f"scenes[{position - 1}]",
                    f"scene index {scene.index} does not match position {position}",
                )
        for name in self.characters:
            if not name or not name.strip():
                raise SchemaError("characters", "character names must be non-empty")
        # freeze a private copy so callers cannot mutate the snapshot
        object.__setattr__(self, "characters", dict(self.characters))

    def __len__(self) -> int:
        return len(self.scenes)

    def scene(self, index: int) -> Scene:
        if not 1 <= index <= len(self.scenes):
            raise IndexError(f"scene index {index} out of range 1..{len(self.scenes)}")
        return self.scenes[index - 1]

    def with_scene(self, scene: Scene) -> "Script":
        scenes = list(self.scenes)
        scenes[scene.index - 1] = scene
        return replace(self, scenes=tuple(scenes))

    def with_summary(self, summary: str | None) -> "Script":
        return replace(self, summary=summary)


def make_scenes(rows: list[Mapping[str, str]]) -> tuple[Scene, ...]:
    """Build positional scenes from plain mappings (missing text fields become empty)."""
    return tuple(
        Scene(index=i, **{key: row.get(key, "") for key in SCENE_KEYS})
        for i, row in enumerate(rows, start=1)
    )


def _require_str(value: Any, path: str, *, non_empty: bool = False) -> str:
    if not isinstance(value, str):
        raise SchemaError(path, f"expected string, got {type(value).__name__}")
    if non_empty and not value.strip():
        raise SchemaError(path, "must be non-empty")
    return value


def script_from_document(doc: Any) -> Script:
    """Validate an already-decoded document and build a :class:`Script`."""
    if not isinstance(doc, dict):
        raise SchemaError("$", "document must be an object")
    for key in ("title", "characters", "scenes"):
        if key not in doc:
            raise SchemaError(key, "missing field")
    extra = set(doc) - {"title", "characters", "scenes"}
    if extra:
        raise SchemaError(sorted(extra)[0], "unknown field")

    title = _require_str(doc["title"], "title", non_empty=True)

    raw_chars = doc["characters"]
    if not isinstance(raw_chars, list):
        raise SchemaError("characters", "expected a list")
    characters: dict[str, str] = {}
    for i, item in enumerate(raw_chars):
        path = f"characters[{i}]"
        if not isinstance(item, dict):
            raise SchemaError(path, "expected an object")
        for key in ("name", "description"):
            if key not in item:
                raise SchemaError(f"{path}.{key}", "missing field")
        if set(item) - {"name", "description"}:
            raise SchemaError(path, "unknown field")
        name = _require_str(item["name"], f"{path}.name", non_empty=True)
        if name in characters:
            raise SchemaError(f"{path}.name", f"duplicate character {name!r}")
        characters[name] = _require_str(item["description"], f"{path}.description")

    raw_scenes = doc["scenes"]
    if not isinstance(raw_scenes, list):
        raise SchemaError("scenes", "expected a list")
    if not raw_scenes:
        raise SchemaError("scenes", "must contain at least one scene")
    scenes = []
    for i, item in enumerate(raw_scenes):
        path = f"scenes[{i}]"
        if not isinstance(item, dict):
            raise SchemaError(path, "expected an object")
        if set(item) - set(SCENE_KEYS) - {"index"}:
            raise SchemaError(path, "unknown field")
        # an explicit index is accepted on input but must agree with position
        if "index" in item and item["index"] != i + 1:
            raise SchemaError(
                f"{path}.index",
                f"non-contiguous scene order: index {item['index']!r} at position {i + 1}",
            )
        fields = {}
        for key in SCENE_KEYS:
            if key not in item:
                raise SchemaError(f"{path}.{key}", "missing field")
            fields[key] = _require_str(item[key], f"{path}.{key}")
        scenes.append(Scene(index=i + 1, **fields))

    return Script(title=title, characters=characters, scenes=tuple(scenes))


def parse_script(document: str | bytes) -> Script:
    try:
        doc = json.loads(document)
    except json.JSONDecodeError as exc:
        raise SchemaError("$", f"not valid JSON: {exc}") from exc
    return script_from_document(doc)


def script_to_document(script: Script) -> dict[str, Any]:
    return {
        "title": script.title,
        "characters": [
            {"name": name, "description": desc} for name, desc in script.characters.items()
        ],
        "scenes": [scene.to_document() for scene in script.scenes],
    }


def serialize_script(script: Script) -> str:
    return json.dumps(script_to_document(script), indent=2, ensure_ascii=False) + "\n"


# --- context excerpts --------------------------------------------------------


@dataclass(frozen=True)
class SceneExcerpt:
    index: int
    place: str
    beat: str
    dialogue: str

    def render(self) -> str:
        return f"Scene {self.index} - {self.place}\nBeat: {self.beat}\nDialogue:\n{self.dialogue}"


@dataclass(frozen=True)
class SceneContext:
    previous: tuple[SceneExcerpt, ...]
    next: tuple[SceneExcerpt, ...]
    window: int

    def render_previous(self) -> str:
        return "\n\n".join(e.render() for e in self.previous) or "(none)"

    def render_next(self) -> str:
        return "\n\n".join(e.render() for e in self.next) or "(none)"

    def render(self) -> str:
        return f"Previous Scenes:\n{self.render_previous()}\n\nNext Scenes:\n{self.render_next()}"


def truncate_dialogue(text: str, limit: int = EXCERPT_CHARS) -> str:
    if len(text) <= 2 * limit:
        return text
    return text[:limit] + TRUNCATION_MARKER + text[-limit:]


def excerpt(scene: Scene) -> SceneExcerpt:
    return SceneExcerpt(scene.index, scene.place, scene.beat, truncate_dialogue(scene.dialogue))


def scene_context(script: Script, index: int, window: int = 1) -> SceneContext:
    if window < 1:
        raise ValueError("window must be a positive integer")
    if not 1 <= index <= len(script.scenes):
        raise IndexError(f"scene index {index} out of range 1..{len(script.scenes)}")
    lo = max(1, index - window)
    hi = min(len(script.scenes), index + window)
    previous = tuple(excerpt(script.scene(k)) for k in range(lo, index))
    following = tuple(excerpt(script.scene(k)) for k in range(index + 1, hi + 1))
    return SceneContext(previous=previous, next=following, window=window)


# --- character lookups -------------------------------------------------------


def _mentions(name: str) -> re.Pattern[str]:
    return re.compile(rf"(?<!\w){re.escape(name)}(?!\w)")


def character_presence(script: Script, name: str) -> str:
    """Digest of every beat and dialogue line that mentions ``name``, in scene order."""
    if name not in script.characters:
        raise UnknownCharacter(name)
    pattern = _mentions(name)
    parts = []
    for scene in script.scenes:
        fragments = []
        if pattern.search(scene.beat):
            fragments.append(f"Beat: {scene.beat}")
        lines = [ln.strip() for ln in scene.dialogue.splitlines() if pattern.search(ln)]
        fragments.extend(ln for ln in lines if ln)
        if fragments:
            parts.append(f"Scene {scene.index} ({scene.place}):\n" + "\n".join(fragments))
    return "\n\n".join(parts)


def characters_in_scene(script: Script, scene: Scene) -> dict[str, str]:
    """Characters named anywhere in the scene; all characters when none are named."""
    text = "\n".join((scene.beat, scene.scene_description, scene.dialogue))
    found = {n: d for n, d in script.characters.items() if _mentions(n).search(text)}
    return found or dict(script.characters)


def format_characters(characters: Mapping[str, str]) -> str:
    if not characters:
        return "(none)"
    return "\n".join(f"- {name}: {desc}" for name, desc in characters.items())


def render_script_text(script: Script) -> str:
    """Plain-text rendering used when a whole script is transmitted to an agent."""
    head = [f"Title: {script.title}", "", "Characters:", format_characters(script.characters)]
    body = [render_scene_text(s) for s in script.scenes]
    return "\n".join(head) + "\n\n" + "\n\n".join(body)


def render_scene_text(scene: Scene) -> str:
    return (
        f"Scene {scene.index}\n"
        f"Place: {scene.place}\n"
        f"Plot element: {scene.plot_element}\n"
        f"Beat: {scene.beat}\n"
        f"Scene description: {scene.scene_description}\n"
        f"Dialogue:\n{scene.dialogue}"
    )


def chunk_script(script: Script, chunk_chars: int) -> list[str]:
    """Split the rendered script into messages of at most ``chunk_chars`` characters.

    Whole scenes are packed greedily; a scene longer than the limit is cut
    into consecutive hard slices.
    """
    if chunk_chars < 1:
        raise ValueError("chunk size must be positive")
    head = f"Title: {script.title}\n\nCharacters:\n{format_characters(script.characters)}"
    pieces = [head] + [render_scene_text(s) for s in script.scenes]
    chunks: list[str] = []
    current = ""
    for piece in pieces:
        candidate = piece if not current else current + "\n\n" + piece
        if len(candidate) <= chunk_chars:
            current = candidate
            continue
        if current:
            chunks.append(current)
        while len(piece) > chunk_chars:
            chunks.append(piece[:chunk_chars])
            piece = piece[chunk_chars:]
        current = piece
    if current:
        chunks.append(current)
    return chunks
