"""Regenerate the bundled fixture corpora and replay files.

The replay files are recorded by running the real pipeline against
``FactSheetBackend`` behind a ``RecordingBackend``. Every configuration the
test suite replays must be listed in ``RECORDINGS`` below.

    python scripts/build_fixtures.py            # all fixtures
    python scripts/build_fixtures.py --only tiny
"""

from __future__ import annotations

import argparse
import json
import logging
import random
from pathlib import Path

from memloop.ama import AmaConfig, run_corpus
from memloop.dialogue import load_corpus
from memloop.embedding import LocalEmbedder
from memloop.evaluation import answer_benchmark
from memloop.gateway import Gateway, RecordingBackend
from memloop.testing import FactSheetBackend

DATA = Path(__file__).resolve().parents[1] / "src" / "memloop" / "data"
REFUSAL = "I cannot answer this question based on the available memory."

# ---------------------------------------------------------------- synthetic corpus

NAMES = ["Alice", "Ben", "Chloe", "Dev", "Elena", "Farid", "Grace", "Hugo", "Iris", "Jonas",
         "Kira", "Luis", "Mina", "Noah", "Olga", "Priya", "Quinn", "Rosa", "Theo", "Uma"]
PETS = [("parrot", "Mango"), ("beagle", "Biscuit"), ("tortoise", "Atlas"), ("rabbit", "Clover"),
        ("kitten", "Juniper"), ("hamster", "Pretzel"), ("goldfish", "Comet"), ("ferret", "Noodle")]
CITIES = ["Oslo", "Nairobi", "Montreal", "Kyoto", "Valparaiso", "Tbilisi", "Lyon", "Hobart", "Porto", "Cusco"]
INSTRUMENTS = ["cello", "banjo", "harmonica", "ukulele", "oboe", "accordion", "mandolin", "clarinet"]
JOBS = [("librarian", "university library"), ("paramedic", "county hospital"), ("barista", "harbour cafe"),
        ("surveyor", "mapping agency"), ("florist", "flower market"), ("welder", "shipyard")]
DATES = ["June 14", "July 2", "August 19", "September 7", "October 23", "November 11"]
BOOKS = ["The Left Hand of Darkness", "Pachinko", "The Remains of the Day", "Station Eleven",
         "Things Fall Apart", "The Name of the Rose", "Persepolis", "Never Let Me Go"]
RACES = [("Berlin", "three hours and twelve minutes"), ("Boston", "three hours and forty minutes"),
         ("Chicago", "four hours and five minutes"), ("Tokyo", "three hours and fifty-one minutes")]
DISHES = ["mushroom risotto", "lamb tagine", "vegetable paella", "chicken pho", "spinach lasagna", "fish curry"]
PLANTS = ["sunflowers", "tomato seedlings", "lavender", "blueberry bushes", "dahlias", "runner beans"]
SESSION_DATES = ["9:00 am on 5 May, 2023", "7:15 pm on 19 May, 2023", "1:30 pm on 2 June, 2023"]

# (turn template, summary template, keywords, probe, gold, evidence, benchmark question, benchmark
#  prediction, category); {a} and {b} are the two speakers, {x}/{y} the sampled slot values.
FACTS = [
    ("{a}: I finally adopted a {x} and named it {y}.", "{a} adopted a {x} named {y}.", ["{x}", "{y}", "adoption"],
     "What did {a} name the {x} they adopted?", "{y}.", "{y}",
     "What is the name of the {x} that {a} adopted?", "The {x} is called {y}.", "single_hop"),
    ("{a}: Next month I'm flying to {x} for a conference.", "{a} is flying to {x} next month for a conference.",
     ["{x}", "conference", "travel"],
     "Where is {a} flying next month for a conference?", "{x}.", "{x}",
     "Which city will {a} visit for a conference?", "{a} is going to {x}.", "single_hop"),
    ("{b}: I've been learning to play the {x} on weekends.", "{b} is learning to play the {x} on weekends.",
     ["{x}", "music", "weekends"],
     "Which instrument is {b} learning to play on weekends?", "The {x}.", "{x}",
     "What instrument does {b} practise on weekends?", "{b} practises the {x}.", "single_hop"),
    ("{a}: I started a new job as a {x} at the {y}.", "{a} started working as a {x} at the {y}.",
     ["{x}", "{y}", "new job"],
     "What job has {a} started working as?", "{a} works as a {x} at the {y}.", "{x} at the {y}",
     "What might {a}'s daily work involve now?", "Working as a {x} at the {y}.", "open_domain"),
    ("{b}: My sister's wedding is on {x}.", "{b}'s sister is getting married on {x}.", ["wedding", "sister", "{x}"],
     "When is {b}'s sister getting married?", "{x}.", "{x}",
     "On what date is the wedding of {b}'s sister?", "The wedding is on {x}.", "temporal"),
    ("{a}: I just finished reading {x}. It was wonderful.", "{a} just finished reading {x} and loved it.",
     ["{x}", "reading"],
     "What book did {a} just finish reading?", "{x}.", "{x}",
     "Which book did {a} recently read?", "{a} read {x}.", "single_hop"),
    ("{b}: I ran the {x} marathon and my time was {y}.", "{b} ran the {x} marathon in {y}.",
     ["{x} marathon", "race time"],
     "How long did {b} take to run the {x} marathon?", "{y}.", "{y}",
     "What was {b}'s finishing time in the {x} marathon?", "{b} finished in {y}.", "multi_hop"),
    ("{a}: I cooked {x} for my parents last night.", "{a} cooked {x} for their parents.",
     ["{x}", "cooking", "parents"],
     "What did {a} cook for their parents?", "{x}.", "{x}",
     "What dish did {a} prepare for their parents?", "{a} made {x} for them.", "single_hop"),
    ("{b}: I planted {x} in the backyard garden.", "{b} planted {x} in the backyard garden.",
     ["{x}", "garden"],
     "What did {b} plant in the backyard garden?", "{x}.", "{x}",
     "What did {b} put in the backyard after talking about gardening?", "{b} planted {x}.", "multi_hop"),
]
SLOTS = [PETS, CITIES, INSTRUMENTS, JOBS, DATES, BOOKS, RACES, DISHES, PLANTS]
FILLER = [("{a}: Hi {b}, it's been a while! How have you been?", "{b}: Good to hear from you, {a}. Busy as usual."),
          ("{b}: Hey {a}, got a minute to catch up?", "{a}: Always. So much has happened."),
          ("{a}: {b}! I have news.", "{b}: Tell me everything.")]
GAP_DIALOGUES = range(7)


def synthetic(seed: int = 20230505, n: int = 10) -> tuple[dict, dict]:
    """A seeded corpus with one planted gap in each of the first seven dialogues."""
    rng = random.Random(seed)
    dialogues, questions = [], {}
    sheet = {
        "refusal": REFUSAL,
        "improve_instruction": "Record every new activity, plan, purchase or date a speaker mentions, "
                               "even when it is said in passing.",
        "sessions": {},
        "facts": {},
    }
    # every speaker appears in one dialogue only, so probe questions never collide across dialogues
    speakers = rng.sample(NAMES, 2 * n)
    for d in range(n):
        a, b = speakers[2 * d], speakers[2 * d + 1]
        did = f"syn-{d:02d}"
        gap_fact = rng.randrange(len(FACTS)) if d in GAP_DIALOGUES else None
        order = list(range(len(FACTS)))
        rng.shuffle(order)
        sessions, qs = [], []
        for s in range(3):
            greet, reply = FILLER[rng.randrange(len(FILLER))]
            turns = [greet.format(a=a, b=b), reply.format(a=a, b=b)]
            summaries, probes = [], []
            for f in order[3 * s: 3 * s + 3]:
                turn, summary, kws, probe, gold, evidence, bq, bpred, cat = FACTS[f]
                value = rng.choice(SLOTS[f])
                x, y = value if isinstance(value, tuple) else (value, "")
                fill = dict(a=a, b=b, x=x, y=y)
                turns.append(turn.format(**fill))
                summary_text = summary.format(**fill)
                summaries.append({"summary": summary_text, "keywords": [k.format(**fill).lower() for k in kws],
                                  "needs_amendment": f == gap_fact})
                probe_q = probe.format(**fill)
                probes.append(probe_q)
                ev = evidence.format(**fill)
                assert probe_q not in sheet["facts"], probe_q
                sheet["facts"][probe_q] = {"gold": gold.format(**fill), "evidence": ev,
                                           "supplement": f"{summary_text[:-1]}, as stated in the conversation."}
                bq_text = bq.format(**fill)
                assert bq_text not in sheet["facts"], bq_text
                sheet["facts"][bq_text] = {"gold": gold.format(**fill), "evidence": ev,
                                           "predicted": bpred.format(**fill)}
                qs.append({"question": bq_text, "gold_answer": gold.format(**fill), "category": cat,
                           "evidence_ids": [f"D{s + 1}:{len(turns)}"]})
            turns.append(f"{b}: Talk soon, {a}!")
            sessions.append({
                "session_index": s + 1,
                "date_label": SESSION_DATES[s],
                "turns": [{"turn_id": f"D{s + 1}:{i}", "speaker": t.split(": ", 1)[0], "text": t.split(": ", 1)[1]}
                          for i, t in enumerate(turns, 1)],
            })
            summaries.append({"summary": f"{a} and {b} caught up on {SESSION_DATES[s].split(' on ')[1]}.",
                              "keywords": ["catch up"]})
            sheet["sessions"][f"{did}#{s + 1}"] = {"summaries": summaries, "probes": probes}
        dialogues.append({"dialogue_id": did, "sessions": sessions})
        questions[did] = qs
    return {"dialogues": dialogues, "questions": questions}, sheet


# ---------------------------------------------------------------- recording

DEFAULT = AmaConfig()
RECORDINGS = {
    "demo": [AmaConfig(max_rounds=2), DEFAULT, AmaConfig(reconstruction_pass_threshold=1.0),
             AmaConfig(enable_content_update=False), AmaConfig(enable_strategy_update=False)],
    "tiny": [DEFAULT, AmaConfig(qa_per_session=0), AmaConfig(qa_per_session=1), AmaConfig(qa_per_session=10),
             AmaConfig(enable_content_update=False), AmaConfig(enable_strategy_update=False),
             AmaConfig(guided_questions=False), AmaConfig(shared_strategy=True), AmaConfig(max_rounds=2)],
    "synthetic10": [DEFAULT, AmaConfig(qa_per_session=0), AmaConfig(qa_per_session=1),
                    AmaConfig(qa_per_session=10), AmaConfig(enable_content_update=False),
                    AmaConfig(enable_strategy_update=False), AmaConfig(guided_questions=False)],
}
# fixtures whose default run is also evaluated, and whether the LLM judge is recorded
EVALS = {"tiny": [False], "synthetic10": [False, True]}


def check(name: str, run) -> None:
    """Refuse to write a fixture whose default run misses the planted outcomes."""
    gaps = {"synthetic10": {f"syn-{d:02d}" for d in GAP_DIALOGUES}, "tiny": {"tiny-a"}, "demo": {"jon-gina"}}[name]
    for did, art in run.dialogues.items():
        pre, post = art.pre_pass_rate, art.post_pass_rate
        ok = pre < post == 1.0 if did in gaps else pre == post == 1.0
        if not ok:
            raise SystemExit(f"{name}/{did}: unexpected pass rates {pre} -> {post}")


def record(name: str) -> None:
    corpus_path = DATA / f"{name}.corpus.json"
    corpus = load_corpus(corpus_path)
    sheet = json.loads((DATA / f"{name}.facts.json").read_text(encoding="utf-8"))
    replay = DATA / f"{name}.replay.jsonl"
    replay.unlink(missing_ok=True)
    gateway = Gateway(RecordingBackend(FactSheetBackend(corpus, sheet), replay))
    embedder = LocalEmbedder()
    for config in RECORDINGS[name]:
        run = run_corpus(corpus, config, gateway, embedder)
        failed = {d: a.error for d, a in run.dialogues.items() if a.error}
        if failed:
            raise SystemExit(f"{name}: dialogues failed while recording: {failed}")
        rates = {d: (a.pre_pass_rate, a.post_pass_rate) for d, a in run.dialogues.items()}
        logging.info("%s %s -> %s", name, config, rates)
        if config == DEFAULT:
            check(name, run)
            for judge in EVALS.get(name, []):
                answer_benchmark(run, corpus, gateway, embedder, judge=judge)
    logging.info("%s: wrote %s", name, replay)


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--only", choices=sorted(RECORDINGS))
    args = parser.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(message)s")
    corpus, sheet = synthetic()
    (DATA / "synthetic10.corpus.json").write_text(json.dumps(corpus, indent=2, ensure_ascii=False) + "\n",
                                                  encoding="utf-8")
    (DATA / "synthetic10.facts.json").write_text(json.dumps(sheet, indent=2, ensure_ascii=False) + "\n",
                                                 encoding="utf-8")
    for name in [args.only] if args.only else sorted(RECORDINGS):
        record(name)


if __name__ == "__main__":
    main()
