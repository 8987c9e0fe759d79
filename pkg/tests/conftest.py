import json
import threading
from collections import Counter, defaultdict
from pathlib import Path

import pytest
from hypothesis import settings

from memloop.dialogue import load_corpus
from memloop.embedding import LocalEmbedder
from memloop.gateway import Gateway, ReplayBackend
from memloop.testing import FactSheetBackend

# fixed example sequence and no per-example deadline, so runs are repeatable on slow machines
settings.register_profile("memloop", deadline=None, derandomize=True)
settings.load_profile("memloop")

DATA = Path(__file__).resolve().parents[1] / "src" / "memloop" / "data"
GOLDEN = Path(__file__).resolve().parent / "golden"
REFUSAL = "I cannot answer this question based on the available memory."


class ScriptedBackend:
    """Answers per role from a dict of strings or callables and counts calls."""

    backend_id = "scripted"

    def __init__(self, responses: dict):
        self.responses = responses
        self.calls = Counter()
        self.requests = []
        self._lock = threading.Lock()

    def complete(self, request):
        with self._lock:
            self.calls[request.role_tag] += 1
            self.requests.append(request)
        r = self.responses[request.role_tag]
        return r(request) if callable(r) else r


def locomo_sample(sample_id="conv-1", qa=None):
    return {
        "sample_id": sample_id,
        "conversation": {
            "speaker_a": "Jon",
            "speaker_b": "Gina",
            "session_2": [{"speaker": "Gina", "dia_id": "D2:1", "text": "Back again."}],
            "session_2_date_time": "1:00 pm on 2 May, 2023",
            "session_10": [{"speaker": "Jon", "dia_id": "D10:1", "text": "Much later."}],
            "session_1": [{"speaker": "Jon", "dia_id": "D1:1", "text": "Hey Gina!"},
                          {"speaker": "Gina", "dia_id": "D1:2", "text": "Hi Jon."}],
            "session_1_date_time": "8 May",
        },
        "qa": qa if qa is not None else [
            {"question": "q1", "answer": "a1", "evidence": ["D1:1"], "category": 1},
            {"question": "q2", "answer": 2023, "evidence": ["D2:1"], "category": 2},
            {"question": "q3", "answer": "a3", "category": 3},
            {"question": "q4", "answer": "a4", "category": 4},
            {"question": "q5", "adversarial_answer": "not mentioned", "category": 5},
        ],
    }


def fixture_paths(name):
    return DATA / f"{name}.corpus.json", DATA / f"{name}.facts.json", DATA / f"{name}.replay.jsonl"


@pytest.fixture
def data_dir():
    return DATA


@pytest.fixture
def embedder():
    return LocalEmbedder()


@pytest.fixture(scope="session")
def demo_corpus():
    return load_corpus(DATA / "demo.corpus.json")


@pytest.fixture(scope="session")
def tiny_corpus():
    return load_corpus(DATA / "tiny.corpus.json")


@pytest.fixture(scope="session")
def synthetic_corpus():
    return load_corpus(DATA / "synthetic10.corpus.json")


@pytest.fixture
def demo_session(demo_corpus):
    return demo_corpus.dialogues[0].sessions[0]


@pytest.fixture
def demo_facts_gateway(demo_corpus):
    sheet = json.loads((DATA / "demo.facts.json").read_text(encoding="utf-8"))
    return Gateway(FactSheetBackend(demo_corpus, sheet))


def replay_gateway(name, **kwargs):
    return Gateway(ReplayBackend.from_file(DATA / f"{name}.replay.jsonl"), **kwargs)


# ---------------------------------------------------------------- acceptance criterion report

_criteria: dict[int, str] = {}
_outcomes: dict[int, list[bool]] = defaultdict(list)


def pytest_runtest_logreport(report):
    number = getattr(report, "criterion", None)
    if number is None:
        return
    if report.when == "call" or report.outcome == "failed":
        _outcomes[number].append(report.outcome == "passed")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    marker = item.get_closest_marker("criterion")
    if marker is not None:
        number, title = marker.args
        _criteria[number] = title
        outcome.get_result().criterion = number


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_criteria):
        results = _outcomes.get(number, [])
        status = "PASS" if results and all(results) else "FAIL"
        terminalreporter.write_line(f"criterion {number}: {status}  {_criteria[number]} ({len(results)} checks)")
