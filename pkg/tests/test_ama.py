import pytest

from memloop.ama import (
    FALLBACK_DEFECT,
    GATEWAY_ERROR_DEFECT,
    AmaConfig,
    ErrorRecord,
    QAPair,
    Verdict,
    adapt,
    answer_with_memory,
    apply_memory_update,
    generate_qa,
    judge_answer,
    parse_qa_pairs,
    run_corpus,
    run_session,
)
from memloop.dialogue import Corpus
from memloop.embedding import LocalEmbedder
from memloop.gateway import Gateway, ReplayMiss
from memloop.store import ADAPTER_SUPPLEMENT, MemoryStore, construct_session_memory, update_store
from memloop.strategy import ExtractionStrategy, apply_strategy_update

from conftest import REFUSAL, ScriptedBackend, replay_gateway

EMB = LocalEmbedder()
QA1 = "What is Jon currently working on that has been stressful?"
GOLD1 = "Jon has been rehearsing hard and working on business plans."
QA3 = "What does Gina believe is important for dancers?"
MISSING = "Jon is currently rehearsing hard and working on business plans."
IMPROVE = "Enhance memory extraction by focusing on detailed and contextual information"


def case_study_store(session, gateway):
    store = MemoryStore("jon-gina")
    return update_store(store, construct_session_memory(session, ExtractionStrategy.default(), gateway, EMB,
                                                        dialogue_id="jon-gina"))


# ---------------------------------------------------------------- challenger

def test_generate_qa_k0_makes_no_call(demo_session):
    backend = ScriptedBackend({})
    assert generate_qa(demo_session, 0, True, Gateway(backend)) == []
    assert sum(backend.calls.values()) == 0


def test_generate_qa_case_study(demo_session, demo_facts_gateway):
    pairs = generate_qa(demo_session, 3, True, demo_facts_gateway, dialogue_id="jon-gina")
    assert (QA1, GOLD1) in [(p.question, p.gold_answer) for p in pairs]
    assert all(p.source_session == ("jon-gina", 1) for p in pairs)


def test_generate_qa_truncates_in_order(demo_session):
    text = "\n".join(f"Q: question {i}?\nA: answer {i}" for i in range(5))
    pairs = generate_qa(demo_session, 3, True, Gateway(ScriptedBackend({"challenger": text})))
    assert [p.question for p in pairs] == ["question 0?", "question 1?", "question 2?"]


def test_generate_qa_unguided_uses_other_prompt(demo_session):
    backend = ScriptedBackend({"challenger": "Q: x?\nA: y"})
    generate_qa(demo_session, 1, True, Gateway(backend))
    generate_qa(demo_session, 1, False, Gateway(backend))
    guided, unguided = backend.requests
    assert guided.system_prompt != unguided.system_prompt


def test_generate_qa_no_pairs(demo_session):
    with pytest.raises(ValueError):
        generate_qa(demo_session, 3, True, Gateway(ScriptedBackend({"challenger": "I refuse."})))


def test_parse_qa_pairs_formats():
    text = "1. Q: Who? \nA: Jon\nQuestion 2: When?\nAnswer 2: May\nQ: dangling"
    assert parse_qa_pairs(text) == [("Who?", "Jon"), ("When?", "May")]


# ---------------------------------------------------------------- evaluator

def test_answers_from_case_study_store(demo_session, demo_facts_gateway):
    store = case_study_store(demo_session, demo_facts_gateway)
    assert answer_with_memory(store, QA1, 10, demo_facts_gateway, EMB) == REFUSAL
    assert (answer_with_memory(store, QA3, 10, demo_facts_gateway, EMB)
            == "Gina believes that a creative space for dancers is important.")


def test_empty_store_gets_refusal():
    backend = ScriptedBackend({"evaluator_answer": lambda r: REFUSAL if "(empty)" in r.user_prompt else "?"})
    assert answer_with_memory(MemoryStore(), "anything?", 10, Gateway(backend), EMB) == REFUSAL


def test_judge_examples(demo_facts_gateway):
    ok = judge_answer("What phrase does Gina encourage Jon to remember?",
                      "Gina encourages Jon to remember to 'just do it.'", "Just do it!", demo_facts_gateway)
    assert ok.correct and ok.defect == ""
    bad = judge_answer(QA1, REFUSAL, GOLD1, demo_facts_gateway)
    assert not bad.correct and bad.defect


def test_judge_fallback():
    gw = Gateway(ScriptedBackend({"evaluator_judge": "Looks fine to me"}))
    assert judge_answer("q", "Lisbon in Portugal", "Lisbon in Portugal", gw) == Verdict("Lisbon in Portugal", True)
    v = judge_answer("q", "Porto", "Lisbon", gw)
    assert not v.correct and v.defect == FALLBACK_DEFECT


def test_judge_incorrect_without_reason():
    v = judge_answer("q", "x", "y", Gateway(ScriptedBackend({"evaluator_judge": "INCORRECT"})))
    assert not v.correct and v.defect


def test_verdict_invariant():
    with pytest.raises(ValueError):
        Verdict("x", True, "but wrong")
    with pytest.raises(ValueError):
        Verdict("x", False, "")


# ---------------------------------------------------------------- adapter

def case_study_errors():
    return ErrorRecord(((QAPair(QA1, GOLD1), Verdict(REFUSAL, False, "memory lacks Jon's current work")),),
                       ("jon-gina", 1))


def test_adapt_case_study(demo_facts_gateway):
    result = adapt(case_study_errors(), ExtractionStrategy.default(), demo_facts_gateway)
    assert MISSING in result.memory_supplements
    assert result.strategy_amendment.startswith(IMPROVE)


def test_adapt_switches():
    backend = ScriptedBackend({"adapter_content": "A fact.", "adapter_strategy": "Be thorough."})
    r = adapt(case_study_errors(), ExtractionStrategy.default(), Gateway(backend), content_update=False)
    assert r.memory_supplements == () and backend.calls["adapter_content"] == 0
    r = adapt(case_study_errors(), ExtractionStrategy.default(), Gateway(backend), strategy_update=False)
    assert r.strategy_amendment == "" and backend.calls["adapter_strategy"] == 1
    assert r.memory_supplements == ("A fact.",)


def test_adapt_none_answers():
    backend = ScriptedBackend({"adapter_content": "NONE", "adapter_strategy": "None."})
    r = adapt(case_study_errors(), ExtractionStrategy.default(), Gateway(backend))
    assert r.memory_supplements == () and r.strategy_amendment == ""


def test_strategy_update_examples():
    v1 = ExtractionStrategy.default()
    assert apply_strategy_update(v1, "") is v1
    v2 = apply_strategy_update(v1, "focus on temporal details")
    assert v2.version == 2 and v2.amendments == ("focus on temporal details",)
    again = apply_strategy_update(v2, "focus on temporal details")
    assert again.version == 2 and len(again.amendments) == 1
    assert v2.base_instruction == v1.base_instruction


def test_apply_memory_update_examples(demo_session):
    store = MemoryStore("d")
    assert apply_memory_update(store, [], demo_session, EMB) is store and len(store) == 0
    apply_memory_update(store, [MISSING], demo_session, EMB, dialogue_id="d")
    (e,) = store.entries
    assert e.provenance == ADAPTER_SUPPLEMENT and e.source is None
    assert e.timestamp_label == demo_session.date_label and e.session_ref == ("d", 1)
    assert len(e.keywords) <= 5
    # a near duplicate: same words, different punctuation and case
    apply_memory_update(store, ["JON is currently rehearsing hard, and working on business plans!"], demo_session,
                        EMB)
    assert len(store) == 1 and store.events[-1].action == "deduplicated"


# ---------------------------------------------------------------- session driver

def test_case_study_two_rounds(demo_session, demo_facts_gateway):
    store = case_study_store(demo_session, demo_facts_gateway)
    store, strategy, report = run_session(demo_session, store, ExtractionStrategy.default(),
                                          AmaConfig(max_rounds=2), demo_facts_gateway, EMB, dialogue_id="jon-gina")
    first, second = report.rounds
    assert [r.correct for r in first.records] == [False, True, True]
    assert first.pass_rate == pytest.approx(2 / 3)
    assert second.pass_rate == 1.0
    assert first.supplements_inserted == [MISSING]
    assert first.amendment_applied.startswith(IMPROVE)
    assert strategy.version == 2 and report.strategy_version == 2
    assert report.followup is None


def test_all_pass_short_circuits(demo_session):
    backend = ScriptedBackend({"challenger": "Q: q?\nA: a", "evaluator_answer": "a", "evaluator_judge": "CORRECT"})
    store = MemoryStore("d")
    strategy = ExtractionStrategy.default()
    out_store, out_strategy, report = run_session(demo_session, store, strategy, AmaConfig(), Gateway(backend), EMB)
    assert out_store is store and len(store) == 0 and out_strategy is strategy
    assert report.rounds[0].pass_rate == 1.0 and report.rounds[0].adapter_calls == 0
    assert backend.calls["adapter_content"] == backend.calls["adapter_strategy"] == 0


def test_k0_no_calls(demo_session):
    backend = ScriptedBackend({})
    strategy = ExtractionStrategy.default()
    store, out, report = run_session(demo_session, MemoryStore(), strategy, AmaConfig(qa_per_session=0),
                                     Gateway(backend), EMB)
    assert sum(backend.calls.values()) == 0 and out is strategy and report.rounds == []


def test_gateway_errors_become_verdicts(demo_session):
    def answer(request):
        raise ReplayMiss("evaluator_answer", "0" * 64, None, 0)

    backend = ScriptedBackend({"challenger": "Q: q?\nA: a", "evaluator_answer": answer,
                               "adapter_content": "NONE", "adapter_strategy": "NONE"})
    _, _, report = run_session(demo_session, MemoryStore(), ExtractionStrategy.default(), AmaConfig(),
                               Gateway(backend), EMB)
    (rec,) = report.rounds[0].records
    assert not rec.correct and rec.defect == GATEWAY_ERROR_DEFECT


def test_reconstruction_replaces_only_session_entries(demo_session, demo_facts_gateway):
    store = case_study_store(demo_session, demo_facts_gateway)
    config = AmaConfig(reconstruction_pass_threshold=1.0, enable_content_update=False)
    store, strategy, report = run_session(demo_session, store, ExtractionStrategy.default(), config,
                                          demo_facts_gateway, EMB, dialogue_id="jon-gina")
    assert report.reconstructed
    assert any("business plans" in e.summary for e in store.entries)
    assert all(e.provenance != ADAPTER_SUPPLEMENT for e in store.entries)
    assert [r.correct for r in report.followup] == [True, True, True]


def test_no_content_update_keeps_gap(demo_session, demo_facts_gateway):
    store = case_study_store(demo_session, demo_facts_gateway)
    _, strategy, report = run_session(demo_session, store, ExtractionStrategy.default(),
                                      AmaConfig(enable_content_update=False), demo_facts_gateway, EMB,
                                      dialogue_id="jon-gina")
    assert report.pre_pass_rate == report.post_pass_rate == pytest.approx(2 / 3)
    assert strategy.version == 2


# ---------------------------------------------------------------- corpus driver

def test_empty_corpus():
    run = run_corpus(Corpus(), AmaConfig(), Gateway(ScriptedBackend({})), EMB)
    assert run.dialogues == {}


def test_failing_dialogue_does_not_sink_run(tiny_corpus):
    def summarize(request):
        if "Sam" in request.user_prompt:
            raise ReplayMiss("memory_summarizer", "0" * 64, None, 0)
        return "fact | k"

    backend = ScriptedBackend({"memory_summarizer": summarize})
    run = run_corpus(tiny_corpus, AmaConfig(qa_per_session=0), Gateway(backend), EMB)
    assert run.dialogues["tiny-a"].error is None
    assert "ReplayMiss" in run.dialogues["tiny-b"].error


def test_shared_strategy_carries_amendments(tiny_corpus):
    run = run_corpus(tiny_corpus, AmaConfig(shared_strategy=True), replay_gateway("tiny"), EMB)
    assert run.dialogues["tiny-a"].strategy.version == 2
    assert run.dialogues["tiny-b"].strategy.version == 2


def test_strategy_and_store_monotone(synthetic_corpus):
    run = run_corpus(synthetic_corpus, AmaConfig(), replay_gateway("synthetic10"), EMB)
    base = ExtractionStrategy.default().base_instruction
    for art in run.dialogues.values():
        assert art.error is None
        assert art.strategy.base_instruction == base
        versions = [s.strategy_version for s in art.sessions]
        assert versions == sorted(versions)
        for s in art.sessions:
            for rnd in s.rounds:
                assert len(rnd.records) == 3
