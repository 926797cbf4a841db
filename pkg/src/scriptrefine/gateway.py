"""Chat-completion access for every agent role.

The :class:`Gateway` wraps a backend (live HTTP endpoint or replayed
fixtures), applies per-role sampling defaults, records a transcript for
every completion, and re-requests when a response fails to parse.
"""

from __future__ import annotations

import contextvars
import hashlib
import json
import logging
import os
import re
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from contextlib import contextmanager
from dataclasses import asdict, dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Any, Callable, Iterable, Iterator, Mapping, Protocol, Sequence, TypeVar

import httpx

log = logging.getLogger(__name__)

T = TypeVar("T")
U = TypeVar("U")


class AgentRole(str, Enum):
    SUMMARIZER = "summarizer"
    ENGAGEMENT_EVAL = "engagement_eval"
    CHARACTER_EVAL = "character_eval"
    THEME_EVAL = "theme_eval"
    NARRATIVE_EVAL = "narrative_eval"
    GLOBAL_INTEGRATOR = "global_integrator"
    DIALOGUE_INSPECTOR = "dialogue_inspector"
    PLOT_INSPECTOR = "plot_inspector"
    CHARACTER_INSPECTOR = "character_inspector"
    SCENE_DESC_INSPECTOR = "scene_desc_inspector"
    SCENE_INTEGRATOR = "scene_integrator"
    ROUTER = "router"
    BRAINSTORMER = "brainstormer"
    DECOMPOSER = "decomposer"
    SCENE_EDITOR = "scene_editor"
    DIALOGUE_EDITOR = "dialogue_editor"
    TITLE_EDITOR = "title_editor"
    CHARACTER_DESC_EDITOR = "character_desc_editor"
    DESC_POLISHER = "desc_polisher"
    DIALOGUE_POLISHER = "dialogue_polisher"
    SCRIPT_JUDGE = "script_judge"
    COMPONENT_JUDGE = "component_judge"
    FINAL_JUDGE = "final_judge"


JUDGE_ROLES = frozenset(
    {AgentRole.SCRIPT_JUDGE, AgentRole.COMPONENT_JUDGE, AgentRole.FINAL_JUDGE}
)

# (temperature, top_p)
REFINE_SAMPLING = (0.7, 0.95)
JUDGE_SAMPLING = (0.0, 1.0)


# --- errors ------------------------------------------------------------------


class GatewayError(RuntimeError):
    pass


class TransportError(GatewayError):
    pass


class AuthError(GatewayError):
    pass


class BackendTimeout(GatewayError, TimeoutError):
    pass


class MissingFixture(GatewayError, LookupError):
    def __init__(self, role: str, counter: int, digest: str):
        super().__init__(f"no fixture for role={role!r} call #{counter} digest={digest}")
        self.role = role
        self.counter = counter
        self.digest = digest


class OutputError(ValueError):
    """A completion that could not be turned into the expected value."""


class NoJsonFound(OutputError):
    pass


class UnbalancedJson(NoJsonFound):
    pass


class SchemaMismatch(OutputError):
    pass


class StructuredOutputExhausted(GatewayError):
    def __init__(self, role: str, attempts: list["Transcript"], last_error: Exception | None):
        super().__init__(
            f"{role}: no valid response after {len(attempts)} attempt(s): {last_error}"
        )
        self.role = role
        self.attempts = attempts
        self.last_error = last_error


# --- requests ----------------------------------------------------------------


@dataclass(frozen=True)
class CompletionRequest:
    role: AgentRole
    prompt: str
    chunks: tuple[str, ...] = ()
    system: str | None = None
    temperature: float | None = None
    top_p: float | None = None
    seed: int | None = None

    def __post_init__(self) -> None:
        role = AgentRole(self.role)
        object.__setattr__(self, "role", role)
        default_t, default_p = JUDGE_SAMPLING if role in JUDGE_ROLES else REFINE_SAMPLING
        if self.temperature is None:
            object.__setattr__(self, "temperature", default_t)
        if self.top_p is None:
            object.__setattr__(self, "top_p", default_p)
        if not 0.0 <= self.temperature <= 2.0:
            raise ValueError(f"temperature {self.temperature} outside [0, 2]")
        if not 0.0 < self.top_p <= 1.0:
            raise ValueError(f"top_p {self.top_p} outside (0, 1]")

    @property
    def digest(self) -> str:
        payload = json.dumps(
            [self.role.value, self.system, list(self.chunks), self.prompt], ensure_ascii=False
        )
        return hashlib.sha256(payload.encode("utf-8")).hexdigest()[:16]

    def messages(self) -> list[dict[str, str]]:
        msgs = []
        if self.system:
            msgs.append({"role": "system", "content": self.system})
        total = len(self.chunks)
        for i, chunk in enumerate(self.chunks, start=1):
            msgs.append({"role": "user", "content": f"Script part {i} of {total}:\n\n{chunk}"})
        msgs.append({"role": "user", "content": self.prompt})
        return msgs


@dataclass
class Completion:
    text: str
    usage: dict[str, int] | None = None


@dataclass
class Transcript:
    id: int
    role: str
    attempt: int
    digest: str
    prompt: str
    chunks: list[str]
    system: str | None
    temperature: float
    top_p: float
    seed: int | None
    response: str | None
    status: str = "ok"  # ok | rejected | failed
    error: str | None = None
    usage: dict[str, int] | None = None
    # tags set by the caller via Gateway.context(), e.g. {"scene": 3}
    context: dict[str, Any] = field(default_factory=dict)

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)


# --- JSON extraction ---------------------------------------------------------

_CLOSERS = {"{": "}", "[": "]"}


def _balanced_end(text: str, start: int) -> int | None:
    """Index one past the delimiter closing ``text[start]``, or None if unclosed."""
    stack = [_CLOSERS[text[start]]]
    in_string = False
    escaped = False
    for i in range(start + 1, len(text)):
        ch = text[i]
        if in_string:
            if escaped:
                escaped = False
            elif ch == "\\":
                escaped = True
            elif ch == '"':
                in_string = False
            continue
        if ch == '"':
            in_string = True
        elif ch in _CLOSERS:
            stack.append(_CLOSERS[ch])
        elif ch in "}]":
            if ch != stack[-1]:
                return None
            stack.pop()
            if not stack:
                return i + 1
    return None


_OPENER = re.compile(r"[{\[]")
_TRAILING_COMMA = re.compile(r",(\s*[}\]])")
_MISSING_COMMA = re.compile(r'(["}\]])(\s*\n\s*["{\[])')


def _strip_lenient(candidate: str) -> str:
    """Drop ``//`` line comments and trailing commas outside of strings, and
    add commas missing between members that sit on consecutive lines."""
    out = []
    in_string = False
    escaped = False
    i = 0
    while i < len(candidate):
        ch = candidate[i]
        if in_string:
            out.append(ch)
            if escaped:
                escaped = False
            elif ch == "\\":
                escaped = True
            elif ch == '"':
                in_string = False
            i += 1
            continue
        if ch == '"':
            in_string = True
        elif ch == "/" and candidate.startswith("//", i):
            while i < len(candidate) and candidate[i] != "\n":
                i += 1
            continue
        out.append(ch)
        i += 1
    text = _TRAILING_COMMA.sub(r"\1", "".join(out))
    # the prompt examples omit commas between lines; models copy that
    return _MISSING_COMMA.sub(r"\1,\2", text)


def extract_json(raw: str) -> Any:
    """Return the first complete JSON object or array embedded in ``raw``.

    Code fences and surrounding prose are tolerated. Regions that are
    balanced but not valid JSON are retried after removing ``//`` comments
    and trailing commas, then skipped.
    """
    if raw is None:
        raise NoJsonFound("empty response")
    saw_opener = False
    saw_unclosed = False
    pos = 0
    while True:
        match = _OPENER.search(raw, pos)
        if match is None:
            break
        saw_opener = True
        start = match.start()
        end = _balanced_end(raw, start)
        if end is None:
            saw_unclosed = True
            pos = start + 1
            continue
        candidate = raw[start:end]
        for text in (candidate, _strip_lenient(candidate)):
            try:
                return json.loads(text)
            except json.JSONDecodeError:
                pass
        pos = start + 1
    if saw_unclosed:
        raise UnbalancedJson("JSON payload is truncated or has unbalanced delimiters")
    if saw_opener:
        raise NoJsonFound("delimited regions found but none is valid JSON")
    raise NoJsonFound("response contains no JSON payload")


# --- structural schemas ------------------------------------------------------


class Opt:
    """Marks an object key as optional."""

    def __init__(self, schema: Any):
        self.schema = schema


class _Kind:
    def __init__(self, name: str, check: Callable[[Any], bool]):
        self.name = name
        self.check = check

    def __repr__(self) -> str:
        return self.name


_NUMERIC_PREFIX = re.compile(r"^\s*(-?\d+(?:\.\d+)?)")

TEXT = _Kind("non-empty string", lambda v: isinstance(v, str) and bool(v.strip()))
NUMBER = _Kind(
    "number",
    lambda v: (isinstance(v, (int, float)) and not isinstance(v, bool))
    or (isinstance(v, str) and _NUMERIC_PREFIX.match(v) is not None),
)


def as_number(value: Any) -> float:
    """Coerce a NUMBER-validated value (e.g. ``"8   // priority"``) to float."""
    if isinstance(value, (int, float)) and not isinstance(value, bool):
        return float(value)
    m = _NUMERIC_PREFIX.match(str(value))
    if not m:
        raise SchemaMismatch(f"not a number: {value!r}")
    return float(m.group(1))


def validate_shape(value: Any, schema: Any, path: str = "$") -> None:
    """Structural check: required keys and value kinds. Extra keys are allowed."""
    if isinstance(schema, _Kind):
        if not schema.check(value):
            raise SchemaMismatch(f"{path}: expected {schema.name}, got {value!r:.60}")
    elif isinstance(schema, dict):
        if not isinstance(value, dict):
            raise SchemaMismatch(f"{path}: expected object")
        for key, sub in schema.items():
            if isinstance(sub, Opt):
                if key in value and value[key] is not None:
                    validate_shape(value[key], sub.schema, f"{path}.{key}")
            elif key not in value:
                raise SchemaMismatch(f"{path}: missing key {key!r}")
            else:
                validate_shape(value[key], sub, f"{path}.{key}")
    elif isinstance(schema, list):
        if not isinstance(value, list):
            raise SchemaMismatch(f"{path}: expected array")
        for i, item in enumerate(value):
            validate_shape(item, schema[0], f"{path}[{i}]")
    elif schema is float:
        if not (isinstance(value, (int, float)) and not isinstance(value, bool)):
            raise SchemaMismatch(f"{path}: expected number")
    elif isinstance(schema, type):
        if not isinstance(value, schema) or (schema is int and isinstance(value, bool)):
            raise SchemaMismatch(f"{path}: expected {schema.__name__}")
    else:
        raise TypeError(f"unsupported schema descriptor {schema!r}")


# --- backends ----------------------------------------------------------------


class Backend(Protocol):
    parallel_safe: bool

    def complete(self, request: CompletionRequest) -> Completion: ...


def _as_text(value: Any) -> str:
    return value if isinstance(value, str) else json.dumps(value, ensure_ascii=False)


@dataclass
class FixtureSet:
    """Canned responses keyed by role.

    ``sequences[role]`` is replayed in call order and runs out;
    ``repeats[role]`` cycles forever; ``digests[role][digest]`` answers a
    specific request and takes precedence over the other two.
    """

    sequences: dict[str, list[str]] = field(default_factory=dict)
    repeats: dict[str, list[str]] = field(default_factory=dict)
    digests: dict[str, dict[str, str]] = field(default_factory=dict)

    @classmethod
    def from_document(cls, doc: Mapping[str, Any]) -> "FixtureSet":
        fx = cls()
        fx.merge_document(doc)
        return fx

    def merge_document(self, doc: Mapping[str, Any]) -> None:
        for role, entry in doc.get("responses", {}).items():
            role = AgentRole(role).value
            if role in self.sequences or role in self.repeats:
                raise ValueError(f"fixture role {role!r} defined twice")
            if isinstance(entry, dict):
                if set(entry) != {"repeat"} or not entry["repeat"]:
                    raise ValueError(f"fixture role {role!r}: expected {{'repeat': [...]}}")
                self.repeats[role] = [_as_text(v) for v in entry["repeat"]]
            elif isinstance(entry, list):
                self.sequences[role] = [_as_text(v) for v in entry]
            else:
                raise ValueError(f"fixture role {role!r}: expected list or repeat block")
        for role, table in doc.get("by_digest", {}).items():
            role = AgentRole(role).value
            bucket = self.digests.setdefault(role, {})
            for digest, value in table.items():
                if digest in bucket:
                    raise ValueError(f"fixture digest {digest} for {role!r} defined twice")
                bucket[digest] = _as_text(value)

    @classmethod
    def load(cls, path: str | os.PathLike) -> "FixtureSet":
        """Load one scenario file, or merge every ``*.json`` in a directory."""
        path = Path(path)
        files = sorted(path.glob("*.json")) if path.is_dir() else [path]
        if not files:
            raise FileNotFoundError(f"no fixture documents in {path}")
        fx = cls()
        for f in files:
            fx.merge_document(json.loads(f.read_text(encoding="utf-8")))
        return fx


class FixtureBackend:
    """Deterministic replay of a :class:`FixtureSet`.

    Sequence keys depend on call order, so the gateway runs fixture
    sessions serially.
    """

    parallel_safe = False

    def __init__(self, fixtures: FixtureSet):
        self.fixtures = fixtures
        self._counters: dict[str, int] = {}
        self._calls: dict[str, int] = {}
        self._lock = threading.Lock()

    def calls(self, role: AgentRole | str) -> int:
        """Total completions requested for ``role``, digest hits included."""
        return self._calls.get(AgentRole(role).value, 0)

    def complete(self, request: CompletionRequest) -> Completion:
        role = request.role.value
        digest = request.digest
        by_digest = self.fixtures.digests.get(role, {})
        with self._lock:
            self._calls[role] = self._calls.get(role, 0) + 1
            if digest in by_digest:
                return Completion(by_digest[digest])
            # digest hits leave the sequence position alone
            counter = self._counters.get(role, 0)
            self._counters[role] = counter + 1
        if role in self.fixtures.sequences:
            seq = self.fixtures.sequences[role]
            if counter < len(seq):
                return Completion(seq[counter])
        elif role in self.fixtures.repeats:
            cycle = self.fixtures.repeats[role]
            return Completion(cycle[counter % len(cycle)])
        raise MissingFixture(role, counter, digest)


class TokenBucket:
    def __init__(self, rate: float, capacity: float | None = None):
        if rate <= 0:
            raise ValueError("rate must be positive")
        self.rate = rate
        self.capacity = capacity if capacity is not None else max(1.0, rate)
        self._tokens = self.capacity
        self._stamp = time.monotonic()
        self._lock = threading.Lock()

    def acquire(self) -> None:
        while True:
            with self._lock:
                now = time.monotonic()
                self._tokens = min(self.capacity, self._tokens + (now - self._stamp) * self.rate)
                self._stamp = now
                if self._tokens >= 1.0:
                    self._tokens -= 1.0
                    return
                wait = (1.0 - self._tokens) / self.rate
            time.sleep(wait)


@dataclass
class BackendConfig:
    base_url: str = "https://api.openai.com/v1"
    model: str = "gpt-4.1-mini"
    api_key_env: str = "OPENAI_API_KEY"
    timeout: float = 120.0
    transport_retries: int = 3
    backoff_base: float = 1.0
    backoff_max: float = 30.0
    requests_per_second: float | None = None
    max_tokens: int | None = None

    def __post_init__(self) -> None:
        if self.transport_retries < 0:
            raise ValueError("transport_retries must be >= 0")


class LiveBackend:
    """OpenAI-compatible ``/chat/completions`` client."""

    parallel_safe = True

    def __init__(self, config: BackendConfig, client: httpx.Client | None = None):
        self.config = config
        self._client = client or httpx.Client(timeout=config.timeout)
        self._bucket = (
            TokenBucket(config.requests_per_second) if config.requests_per_second else None
        )

    def _api_key(self) -> str:
        key = os.environ.get(self.config.api_key_env)
        if not key:
            raise AuthError(f"credential env var {self.config.api_key_env} is not set")
        return key

    def complete(self, request: CompletionRequest) -> Completion:
        headers = {"Authorization": f"Bearer {self._api_key()}"}
        body: dict[str, Any] = {
            "model": self.config.model,
            "messages": request.messages(),
            "temperature": request.temperature,
            "top_p": request.top_p,
        }
        if request.seed is not None:
            body["seed"] = request.seed
        if self.config.max_tokens:
            body["max_tokens"] = self.config.max_tokens
        url = self.config.base_url.rstrip("/") + "/chat/completions"

        last: Exception | None = None
        for attempt in range(self.config.transport_retries + 1):
            if attempt:
                delay = min(self.config.backoff_max, self.config.backoff_base * 2 ** (attempt - 1))
                time.sleep(delay)
            if self._bucket:
                self._bucket.acquire()
            try:
                resp = self._client.post(url, json=body, headers=headers)
            except httpx.TimeoutException as exc:
                last = BackendTimeout(f"request timed out: {exc}")
                continue
            except httpx.TransportError as exc:
                last = TransportError(f"transport failure: {exc}")
                continue
            if resp.status_code in (401, 403):
                raise AuthError(f"endpoint rejected credential ({resp.status_code})")
            if resp.status_code == 429 or resp.status_code >= 500:
                last = TransportError(f"HTTP {resp.status_code}: {resp.text[:200]}")
                continue
            if resp.status_code >= 400:
                raise TransportError(f"HTTP {resp.status_code}: {resp.text[:200]}")
            try:
                data = resp.json()
                text = data["choices"][0]["message"]["content"] or ""
            except (ValueError, KeyError, IndexError, TypeError) as exc:
                raise TransportError(f"malformed completion payload: {exc}") from exc
            return Completion(text, data.get("usage"))
        assert last is not None
        raise last


# --- gateway -----------------------------------------------------------------


_CALL_TAGS: contextvars.ContextVar[Mapping[str, Any]] = contextvars.ContextVar(
    "call_tags", default={}
)


class Gateway:
    """Single entry point agents use to talk to a backend.

    Holds the transcript log, the repair-warning log and the parse-retry
    budget. Sampling defaults come from the role family unless overridden
    here.
    """

    def __init__(
        self,
        backend: Backend,
        *,
        parse_retries: int = 3,
        refine_sampling: tuple[float, float] = REFINE_SAMPLING,
        judge_sampling: tuple[float, float] = JUDGE_SAMPLING,
        seed: int | None = None,
        parallelism: int = 4,
    ):
        if parse_retries < 1:
            raise ValueError("parse_retries must be >= 1")
        self.backend = backend
        self.parse_retries = parse_retries
        self.refine_sampling = refine_sampling
        self.judge_sampling = judge_sampling
        self.seed = seed
        self.parallelism = parallelism
        self.transcripts: list[Transcript] = []
        self.warnings: list[dict[str, Any]] = []
        self._lock = threading.Lock()

    # requests

    def request(
        self,
        role: AgentRole | str,
        prompt: str,
        *,
        chunks: Sequence[str] = (),
        system: str | None = None,
    ) -> CompletionRequest:
        role = AgentRole(role)
        temperature, top_p = self.judge_sampling if role in JUDGE_ROLES else self.refine_sampling
        return CompletionRequest(
            role=role,
            prompt=prompt,
            chunks=tuple(chunks),
            system=system,
            temperature=temperature,
            top_p=top_p,
            seed=self.seed,
        )

    def _record(self, request: CompletionRequest, attempt: int, **kw: Any) -> Transcript:
        with self._lock:
            t = Transcript(
                id=len(self.transcripts) + 1,
                role=request.role.value,
                attempt=attempt,
                digest=request.digest,
                prompt=request.prompt,
                chunks=list(request.chunks),
                system=request.system,
                temperature=request.temperature,
                top_p=request.top_p,
                seed=request.seed,
                context=dict(_CALL_TAGS.get()),
                **kw,
            )
            self.transcripts.append(t)
        return t

    def _complete(self, request: CompletionRequest, attempt: int) -> Transcript:
        try:
            result = self.backend.complete(request)
        except GatewayError as exc:
            self._record(request, attempt, response=None, status="failed", error=str(exc))
            raise
        return self._record(request, attempt, response=result.text, usage=result.usage)

    def complete(self, request: CompletionRequest) -> str:
        return self._complete(request, 1).response or ""

    def complete_validated(
        self, request: CompletionRequest, parse: Callable[[str], T], *, budget: int | None = None
    ) -> T:
        """Complete and parse, re-requesting on :class:`OutputError` up to the budget."""
        budget = budget or self.parse_retries
        attempts: list[Transcript] = []
        last_error: Exception | None = None
        current = request
        for attempt in range(1, budget + 1):
            t = self._complete(current, attempt)
            attempts.append(t)
            try:
                return parse(t.response or "")
            except OutputError as exc:
                t.status = "rejected"
                t.error = str(exc)
                last_error = exc
                log.info("%s attempt %d rejected: %s", request.role.value, attempt, exc)
                current = replace(
                    request,
                    prompt=request.prompt
                    + f"\n\nYour previous response was rejected ({exc}). "
                    "Follow the required response format exactly.",
                )
        raise StructuredOutputExhausted(request.role.value, attempts, last_error)

    def complete_structured(
        self,
        request: CompletionRequest,
        schema: Any,
        check: Callable[[Any], Any] | None = None,
    ) -> Any:
        """Complete, extract JSON, validate against ``schema``, then run ``check``.

        ``check`` may raise :class:`OutputError` for semantic rejects; its
        return value (if not None) replaces the parsed value.
        """

        def parse(raw: str) -> Any:
            value = extract_json(raw)
            validate_shape(value, schema)
            if check is not None:
                checked = check(value)
                if checked is not None:
                    return checked
            return value

        return self.complete_validated(request, parse)

    # bookkeeping

    def warn(self, kind: str, message: str, **context: Any) -> None:
        entry = {"kind": kind, "message": message, **context}
        with self._lock:
            self.warnings.append(entry)
        log.warning("%s: %s", kind, message)

    @contextmanager
    def context(self, **tags: Any) -> Iterator[None]:
        """Tag every transcript recorded inside the block (nests, thread-aware)."""
        token = _CALL_TAGS.set({**_CALL_TAGS.get(), **tags})
        try:
            yield
        finally:
            _CALL_TAGS.reset(token)

    def mark(self) -> tuple[int, int]:
        return len(self.transcripts), len(self.warnings)

    def since(self, mark: tuple[int, int]) -> tuple[list[Transcript], list[dict[str, Any]]]:
        return self.transcripts[mark[0]:], self.warnings[mark[1]:]

    def usage_totals(self) -> dict[str, int]:
        totals: dict[str, int] = {}
        for t in self.transcripts:
            for key, value in (t.usage or {}).items():
                if isinstance(value, int):
                    totals[key] = totals.get(key, 0) + value
        return totals

    def map(self, fn: Callable[[T], U], items: Iterable[T], parallelism: int | None = None) -> list[U]:
        """Apply ``fn`` to each item, concurrently when the backend allows it.

        Results keep input order either way.
        """
        items = list(items)
        workers = parallelism if parallelism is not None else self.parallelism
        if workers <= 1 or len(items) <= 1 or not getattr(self.backend, "parallel_safe", False):
            return [fn(item) for item in items]
        with ThreadPoolExecutor(max_workers=workers) as pool:
            futures = [pool.submit(contextvars.copy_context().run, fn, item) for item in items]
            return [f.result() for f in futures]
