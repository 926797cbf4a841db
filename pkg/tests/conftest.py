import json
from typing import Callable

import pytest

from scriptrefine.fixtures import load_sample_script, scripted_run
from scriptrefine.gateway import Completion, CompletionRequest, FixtureBackend, FixtureSet, Gateway
from scriptrefine.script import Script, make_scenes

_ACCEPTANCE: list[tuple[int, str, str]] = []


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, text): acceptance criterion id")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    number, text = marker.args
    if report.when == "call":
        status = "PASS" if report.passed else "FAIL"
        _ACCEPTANCE.append((number, text, status))
    elif report.when == "setup" and report.skipped:
        _ACCEPTANCE.append((number, text, "SKIP"))


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number, text, status in sorted(_ACCEPTANCE):
        terminalreporter.write_line(f"criterion {number:>2}: {status}  {text}")


class FnBackend:
    """Backend that answers with ``fn(request)``; keeps every request."""

    parallel_safe = False

    def __init__(self, fn: Callable[[CompletionRequest], object]):
        self.fn = fn
        self.requests: list[CompletionRequest] = []

    def complete(self, request):
        self.requests.append(request)
        out = self.fn(request)
        return Completion(out if isinstance(out, str) else json.dumps(out))


def fixture_gateway(doc: dict, **kw) -> Gateway:
    return Gateway(FixtureBackend(FixtureSet.from_document(doc)), **kw)


def one_role(role: str, *responses, repeat: bool = False) -> Gateway:
    entry = {"repeat": list(responses)} if repeat else list(responses)
    return fixture_gateway({"responses": {role: entry}})


def tiny_script(n: int = 3, **kw) -> Script:
    rows = [
        {
            "place": f"Place {k}",
            "plot_element": "Rising Action",
            "beat": f"Ana and Ben face trial {k}.",
            "scene_description": f"Room {k} is dim.",
            "dialogue": f"Ana: Line {k}.\nBen: Reply {k}.",
        }
        for k in range(1, n + 1)
    ]
    return Script(
        title=kw.get("title", "Trials"),
        characters=kw.get("characters", {"Ana": "A stubborn scout.", "Ben": "Her cautious brother."}),
        scenes=make_scenes(rows),
    )


@pytest.fixture
def sample() -> Script:
    return load_sample_script()


@pytest.fixture
def script3() -> Script:
    return tiny_script(3)


@pytest.fixture
def scripted():
    """Factory: gateway replaying a full run whose judge reports ``totals``."""

    def make(script: Script, totals, **kw) -> Gateway:
        return fixture_gateway(scripted_run(script, totals), **kw)

    return make


def marked_script(marker: str, n: int = 2) -> Script:
    """A tiny script whose every dialogue line carries ``marker``."""
    from dataclasses import replace

    s = tiny_script(n)
    return replace(s, scenes=tuple(replace(sc, dialogue=f"Ana: {marker} speaks.") for sc in s.scenes))


def biased_judge(quality: dict[str, float], bias: float = 10.0) -> FnBackend:
    """Pairwise judge that scores by marker quality plus a first-position bonus."""
    import re

    def fn(req):
        if req.role.value == "component_judge":
            first = re.search(r"SCRIPT_A\):\n.*?Ana: (\w+) speaks", req.prompt, re.S).group(1)
            second = re.search(r"SCRIPT_B\):\n.*?Ana: (\w+) speaks", req.prompt, re.S).group(1)
            return f"COMPONENT: x\nComparison: first={first} second={second}"
        m = re.search(r"first=(\w+) second=(\w+)", req.prompt)
        a, b = quality[m.group(1)] + bias, quality[m.group(2)]
        return f"FINAL EVALUATION\nSCRIPT_A Score: {a}\n\nSCRIPT_B Score: {b}\n\nDetailed Justification: ok"

    return FnBackend(fn)
