import json
import logging

import pytest
from hypothesis import given
from hypothesis import strategies as st

from memloop.dialogue import (
    BenchmarkQuestion,
    Corpus,
    CorpusError,
    Dialogue,
    Session,
    Turn,
    corpus_digest,
    load_corpus,
    session_text,
    write_native,
)

from conftest import locomo_sample


def test_session_text_examples(demo_session):
    assert session_text(Session(1, "", ())) == ""
    assert session_text(Session(1, "8 May", (Turn("D1:1", "Jon", "Hey Gina!"),))) == "DATE: 8 May\nJon: Hey Gina!"
    assert "Been rehearsing hard and working on business plans." in session_text(demo_session)


def test_session_text_stable(demo_corpus, demo_session):
    again = load_corpus_copy(demo_corpus)
    assert session_text(again.dialogues[0].sessions[0]) == session_text(demo_session)


def load_corpus_copy(corpus):
    return Corpus(corpus.dialogues, corpus.questions)


def test_locomo_loader(tmp_path, caplog):
    path = tmp_path / "locomo.json"
    path.write_text(json.dumps([locomo_sample()]), encoding="utf-8")
    with caplog.at_level(logging.INFO, logger="memloop.dialogue"):
        corpus = load_corpus(path, "locomo")
    d = corpus.dialogues[0]
    assert d.dialogue_id == "conv-1"
    assert [s.session_index for s in d.sessions] == [1, 2, 10]
    assert d.sessions[0].date_label == "8 May"
    assert d.sessions[0].turns[1] == Turn("D1:2", "Gina", "Hi Jon.")
    assert corpus.category_counts() == {"multi_hop": 1, "temporal": 1, "open_domain": 1, "single_hop": 1, "other": 1}
    qs = corpus.questions["conv-1"]
    assert qs[1].gold_answer == "2023"
    assert qs[4].gold_answer == "not mentioned"
    assert "code 5" in caplog.text


def test_locomo_missing_answer_names_key(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text(json.dumps([locomo_sample(qa=[{"question": "q", "category": 1}])]), encoding="utf-8")
    with pytest.raises(CorpusError) as err:
        load_corpus(path, "locomo")
    assert err.value.key == "answer" and err.value.dialogue_index == 0


def test_invalid_json_reports_byte_offset(tmp_path):
    path = tmp_path / "broken.json"
    path.write_bytes(b'{"dialogues": [}')
    with pytest.raises(CorpusError) as err:
        load_corpus(path)
    assert err.value.offset == 15


def test_missing_file(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_corpus(tmp_path / "nope.json")


def test_empty_dialogue_list(tmp_path):
    path = tmp_path / "empty.json"
    path.write_text('{"dialogues": [], "questions": {}}', encoding="utf-8")
    corpus = load_corpus(path)
    assert corpus.dialogues == () and sum(corpus.category_counts().values()) == 0


def test_structural_errors_become_corpus_errors(tmp_path):
    path = tmp_path / "nosessions.json"
    path.write_text('{"dialogues": [{"dialogue_id": "x", "sessions": []}]}', encoding="utf-8")
    with pytest.raises(CorpusError):
        load_corpus(path)


def test_fixture_counts_match_hand_written_manifest(data_dir, tiny_corpus):
    manifest = json.loads((data_dir / "tiny.manifest.json").read_text(encoding="utf-8"))
    raw = json.loads((data_dir / "tiny.corpus.json").read_text(encoding="utf-8"))
    counted = {c: 0 for c in manifest["category_counts"]}
    for qs in raw["questions"].values():
        for q in qs:
            counted[q["category"]] += 1
    assert counted == manifest["category_counts"]
    assert tiny_corpus.category_counts() == manifest["category_counts"]
    assert len(tiny_corpus.dialogues) == manifest["dialogues"]
    assert sum(len(s.turns) for d in tiny_corpus.dialogues for s in d.sessions) == manifest["turns"]


def test_category_totals_preserved(synthetic_corpus):
    total = sum(len(qs) for qs in synthetic_corpus.questions.values())
    assert sum(synthetic_corpus.category_counts().values()) == total == 90


text = st.text(alphabet=st.characters(blacklist_categories=("Cs",)), min_size=1, max_size=20)


@st.composite
def corpora(draw):
    dialogues, questions = [], {}
    for d in range(draw(st.integers(0, 3))):
        sessions = []
        for s in range(1, draw(st.integers(1, 3)) + 1):
            turns = tuple(Turn(f"D{s}:{t}", draw(text), draw(st.text(max_size=30)))
                          for t in range(draw(st.integers(0, 3))))
            sessions.append(Session(s, draw(st.text(max_size=10)), turns))
        did = f"d{d}"
        dialogues.append(Dialogue(did, tuple(sessions)))
        questions[did] = tuple(
            BenchmarkQuestion(draw(text), draw(text), draw(st.sampled_from(["multi_hop", "temporal", "other"])))
            for _ in range(draw(st.integers(0, 2)))
        )
    return Corpus(tuple(dialogues), questions)


@given(corpora())
def test_native_round_trip(tmp_path_factory, corpus):
    path = tmp_path_factory.mktemp("rt") / "c.json"
    write_native(corpus, path)
    again = load_corpus(path)
    assert again == corpus
    assert corpus_digest(again) == corpus_digest(corpus)
