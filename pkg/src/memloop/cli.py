"""Command line entry point: ``memloop <subcommand>``.

Exit codes: 0 success, 1 partial failure, 2 usage or IO error.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from datetime import datetime, timezone
from importlib import resources
from pathlib import Path
from typing import Optional

from . import ama
from .dialogue import CATEGORIES, Corpus, CorpusError, corpus_digest, load_corpus, write_native
from .embedding import DEFAULT_HASH_SEED, LocalEmbedder, RemoteEmbedder
from .evaluation import answer_benchmark, report_from_answers
from .gateway import DEFAULT_MODEL, Gateway, GatewayError, RecordingBackend, RemoteBackend, ReplayBackend
from .metrics import MetricReport, format_table
from .persistence import MANIFEST, PersistenceError, canonical_json, load_manifest, load_state, run_id_for, save_state
from .prompts import load_prompts

logger = logging.getLogger("memloop")

EXIT_OK, EXIT_PARTIAL, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


def data_path(name: str) -> Path:
    return Path(str(resources.files("memloop").joinpath(f"data/{name}")))


def frozen_clock() -> str:
    epoch = int(os.environ.get("SOURCE_DATE_EPOCH", "0"))
    return datetime.fromtimestamp(epoch, timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")


# ---------------------------------------------------------------- argument parsing

def _backend_parent() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    g = p.add_argument_group("model backend")
    g.add_argument("--backend", choices=("remote", "replay", "record"), default="remote",
                   help="remote: call MEMLOOP_BASE_URL; replay: answer from --replay; "
                        "record: call remote and append to --replay (default: remote)")
    g.add_argument("--replay", type=Path, help="replay file (JSON lines) for replay/record backends")
    g.add_argument("--model", default=DEFAULT_MODEL, help=f"chat model name (default: {DEFAULT_MODEL})")
    g.add_argument("--embedder", choices=("local", "remote"), default="local",
                   help="local hashed bag-of-words or remote /embeddings (default: local)")
    g.add_argument("--embedding-model", default="text-embedding-3-small", help="remote embedding model")
    g.add_argument("--seed", type=int, default=DEFAULT_HASH_SEED,
                   help="hash seed of the local embedder (default: %(default)s)")
    g.add_argument("--max-in-flight", type=int, default=4, help="concurrent model calls (default: 4)")
    g.add_argument("--prompts", type=Path, help="alternative prompt file (JSON)")
    g.add_argument("-v", "--verbose", action="count", default=0, help="more logging (-vv for debug)")
    return p


def _adapt_flags(p: argparse.ArgumentParser, *, build_only: bool = False) -> None:
    p.add_argument("corpus", type=Path, help="corpus file")
    p.add_argument("run_dir", type=Path, help="output run directory")
    p.add_argument("--format", choices=("native", "locomo"), default="native", help="corpus format")
    p.add_argument("--config", type=Path, help="JSON config file shaped like run.json's config_snapshot")
    p.add_argument("--parallel", type=int, default=1, help="dialogues processed concurrently (default: 1)")
    p.add_argument("--retrieval-k", type=int, help="entries retrieved per question (default: 10)")
    p.add_argument("--dup-threshold", type=float, help="cosine at which new entries are dropped (default: 0.95)")
    p.add_argument("--link-threshold", type=float, help="cosine needed to link entries (default: 0.60)")
    if build_only:
        return
    p.add_argument("--qa-per-session", type=int, help="probe QA pairs per session, k (default: 3)")
    p.add_argument("--max-rounds", type=int, help="adaptation rounds per session (default: 1)")
    p.add_argument("--no-content-update", action="store_true", help="ablation: never add memory supplements")
    p.add_argument("--no-strategy-update", action="store_true", help="ablation: never amend the strategy")
    p.add_argument("--unguided-questions", action="store_true", help="ablation: minimal challenger prompt")
    p.add_argument("--reconstruct-below", type=float,
                   help="rebuild a session's memory when its pass rate is below this (default: off)")
    p.add_argument("--shared-strategy", action="store_true", help="carry one strategy across dialogues")
    p.add_argument("--no-followup", action="store_true", help="skip re-asking probes after an update")
    p.add_argument("--audit-gold", action="store_true", help="log probe answers weakly supported by the session")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="memloop", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    backend = _backend_parent()

    p = sub.add_parser("ingest", help="convert a corpus to native JSON and print category counts")
    p.add_argument("input", type=Path, help="source corpus file")
    p.add_argument("--format", choices=("native", "locomo"), default="locomo", help="source format")
    p.add_argument("--output", type=Path, required=True, help="native corpus JSON to write")
    p.add_argument("-v", "--verbose", action="count", default=0)

    p = sub.add_parser("build", parents=[backend], help="construct memory only (no adaptation)")
    _adapt_flags(p, build_only=True)

    p = sub.add_parser("adapt", parents=[backend], help="construct memory and run adversarial adaptation")
    _adapt_flags(p)

    p = sub.add_parser("eval", parents=[backend], help="answer benchmark questions from a run and score them")
    p.add_argument("run_dir", type=Path)
    p.add_argument("corpus", type=Path)
    p.add_argument("--format", choices=("native", "locomo"), default="native")
    p.add_argument("--judge", action="store_true", help="also score answers with the LLM judge")
    p.add_argument("--retrieval-k", type=int, help="override the run's retrieval depth")
    p.add_argument("--out", type=Path, help="report directory (default: RUN_DIR/eval)")

    p = sub.add_parser("report", help="print the pass-rate evolution and any saved evaluation")
    p.add_argument("run_dir", type=Path)
    p.add_argument("-v", "--verbose", action="count", default=0)

    p = sub.add_parser("demo", help="replay the bundled Jon/Gina case study end to end")
    p.add_argument("-v", "--verbose", action="count", default=0)
    return parser


# ---------------------------------------------------------------- helpers

def _setup_logging(verbosity: int) -> None:
    level = logging.WARNING if verbosity == 0 else logging.INFO if verbosity == 1 else logging.DEBUG
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr, force=True)


def _make_gateway(args) -> Gateway:
    if args.backend in ("replay", "record") and args.replay is None:
        raise UsageError(f"--backend {args.backend} needs --replay")
    if args.backend == "replay":
        if not args.replay.is_file():
            raise UsageError(f"replay file not found: {args.replay}")
        backend = ReplayBackend.from_file(args.replay)
    elif args.backend == "record":
        backend = RecordingBackend(RemoteBackend.from_env(args.model), args.replay)
    else:
        backend = RemoteBackend.from_env(args.model)
    return Gateway(backend, max_in_flight=args.max_in_flight)


def _make_embedder(args):
    if args.embedder == "remote":
        return RemoteEmbedder.from_env(args.embedding_model)
    return LocalEmbedder(seed=args.seed)


def _load(path: Path, fmt: str) -> Corpus:
    if not path.is_file():
        raise UsageError(f"corpus file not found: {path}")
    return load_corpus(path, fmt)


def _config_from_args(args, *, build_only: bool) -> ama.AmaConfig:
    base = {}
    if getattr(args, "config", None):
        doc = json.loads(args.config.read_text(encoding="utf-8"))
        base = dict(doc.get("ama", doc))
    overrides = {
        "retrieval_k": args.retrieval_k,
        "dup_threshold": args.dup_threshold,
        "link_threshold": args.link_threshold,
    }
    if build_only:
        overrides["qa_per_session"] = 0
    else:
        overrides.update({
            "qa_per_session": args.qa_per_session,
            "max_rounds": args.max_rounds,
            "reconstruction_pass_threshold": args.reconstruct_below,
        })
        for flag, key in (("no_content_update", "enable_content_update"),
                          ("no_strategy_update", "enable_strategy_update"),
                          ("unguided_questions", "guided_questions"),
                          ("no_followup", "followup_check")):
            if getattr(args, flag):
                overrides[key] = False
        if args.shared_strategy:
            overrides["shared_strategy"] = True
        if args.audit_gold:
            overrides["audit_gold"] = True
    base.update({k: v for k, v in overrides.items() if v is not None})
    return ama.AmaConfig.from_dict(base)


def _fmt_rate(x: Optional[float]) -> str:
    return "-" if x is None else f"{100 * x:.1f}%"


def evolution_table(run: ama.RunArtifacts) -> str:
    header = ("dialogue", "questions", "pre_pass", "post_pass", "supplements", "strategy_v", "status")
    rows = []
    for did, art in run.dialogues.items():
        supplements = sum(1 for e in art.store.entries if e.provenance == "adapter_supplement")
        rows.append((did, str(art.question_count), _fmt_rate(art.pre_pass_rate), _fmt_rate(art.post_pass_rate),
                     str(supplements), str(art.strategy.version), "failed" if art.error else "ok"))
    widths = [max(len(r[i]) for r in [header, *rows]) for i in range(len(header))]
    lines = ["  ".join(c.ljust(w) for c, w in zip(r, widths)).rstrip() for r in [header, *rows]]
    return "\n".join(lines) + "\n"


def _resumable(run_dir: Path, snapshot: dict, digest: str) -> dict:
    if not (run_dir / MANIFEST).is_file():
        return {}
    try:
        manifest = load_manifest(run_dir)
    except PersistenceError:
        return {}
    if manifest.run_id != run_id_for(snapshot, digest):
        logger.warning("%s holds a different run (config or corpus changed); recomputing", run_dir)
        return {}
    previous = load_state(run_dir)
    done = {did: art for did, art in previous.dialogues.items() if art.error is None}
    if done:
        logger.info("resuming: %d dialogue(s) already complete", len(done))
    return done


# ---------------------------------------------------------------- subcommands

def cmd_ingest(args) -> int:
    corpus = _load(args.input, args.format)
    write_native(corpus, args.output)
    counts = corpus.category_counts()
    print(" ".join(f"{c}={counts[c]}" for c in CATEGORIES[:4]))
    if counts["other"]:
        print(f"other={counts['other']}")
    return EXIT_OK


def _run(args, *, build_only: bool) -> int:
    corpus = _load(args.corpus, args.format)
    config = _config_from_args(args, build_only=build_only)
    gateway = _make_gateway(args)
    embedder = _make_embedder(args)
    prompts = load_prompts(args.prompts)
    clock = frozen_clock if args.backend == "replay" else ama.utc_now
    extra = {"model": args.model}
    snapshot = ama.config_snapshot(config, gateway, embedder, prompts, extra)
    skip = _resumable(args.run_dir, snapshot, corpus_digest(corpus))
    run = ama.run_corpus(corpus, config, gateway, embedder, parallel=args.parallel, prompts=prompts,
                         clock=clock, snapshot_extra=extra, skip=skip)
    save_state(args.run_dir, run)
    print(evolution_table(run), end="")
    failed = [d for d, a in run.dialogues.items() if a.error]
    for did in failed:
        print(f"dialogue {did} failed: {run.dialogues[did].error}", file=sys.stderr)
    if failed and len(failed) == len(run.dialogues):
        return EXIT_PARTIAL
    return EXIT_OK


def cmd_build(args) -> int:
    return _run(args, build_only=True)


def cmd_adapt(args) -> int:
    return _run(args, build_only=False)


def cmd_eval(args) -> int:
    if not (args.run_dir / MANIFEST).is_file():
        raise UsageError(f"{args.run_dir}: not a run directory")
    run = load_state(args.run_dir)
    corpus = _load(args.corpus, args.format)
    if corpus_digest(corpus) != run.corpus_digest:
        logger.warning("corpus differs from the one used for %s", args.run_dir)
    gateway = _make_gateway(args)
    embedder = _make_embedder(args)
    rows = answer_benchmark(run, corpus, gateway, embedder, retrieval_k=args.retrieval_k, judge=args.judge,
                            prompts=load_prompts(args.prompts))
    report = report_from_answers(rows)
    if args.judge and report.overall.judge_mean is None:
        print("warning: no LLM judge scores available; judge column omitted", file=sys.stderr)
    out = args.out or args.run_dir / "eval"
    out.mkdir(parents=True, exist_ok=True)
    doc = {"version": "1.0", "report": report.to_dict(),
           "answers": [r.__dict__ for r in rows]}
    (out / "report.json").write_text(canonical_json(doc) + "\n", encoding="utf-8")
    table = format_table(report)
    (out / "report.txt").write_text(table, encoding="utf-8")
    print(table, end="")
    return EXIT_PARTIAL if any(r.error for r in rows) else EXIT_OK


def cmd_report(args) -> int:
    if not (args.run_dir / MANIFEST).is_file():
        raise UsageError(f"{args.run_dir}: not a run directory")
    run = load_state(args.run_dir)
    print(evolution_table(run), end="")
    saved = args.run_dir / "eval" / "report.json"
    if saved.is_file():
        doc = json.loads(saved.read_text(encoding="utf-8"))
        print()
        print(format_table(MetricReport.from_dict(doc["report"])), end="")
    return EXIT_OK


DEMO_CONFIG = ama.AmaConfig(qa_per_session=3, max_rounds=2)


def cmd_demo(args) -> int:
    corpus = load_corpus(data_path("demo.corpus.json"))
    gateway = Gateway(ReplayBackend.from_file(data_path("demo.replay.jsonl")))
    run = ama.run_corpus(corpus, DEMO_CONFIG, gateway, LocalEmbedder(), clock=frozen_clock)
    for did, art in run.dialogues.items():
        if art.error:
            print(f"dialogue {did} failed: {art.error}", file=sys.stderr)
            return EXIT_PARTIAL
        for report in art.sessions:
            print(f"== {did} session {report.session_index}")
            for rnd in report.rounds:
                print(f"-- round {rnd.round_index}: pass rate {rnd.pass_rate:.3f}")
                for i, rec in enumerate(rnd.records, 1):
                    mark = "PASS" if rec.correct else "FAIL"
                    print(f"QA {i} [{mark}] Q: {rec.question}")
                    print(f"    gold: {rec.gold_answer}")
                    print(f"    memory: {rec.predicted}")
                    if rec.defect:
                        print(f"    defect: {rec.defect}")
                for s in rnd.supplements_inserted:
                    print(f"Missing summary: {s}")
                if rnd.amendment_applied:
                    print(f"Improve instruction: {rnd.amendment_applied}")
        print(f"strategy version {art.strategy.version}; memory entries {len(art.store)}")
    return EXIT_OK


COMMANDS = {
    "ingest": cmd_ingest,
    "build": cmd_build,
    "adapt": cmd_adapt,
    "eval": cmd_eval,
    "report": cmd_report,
    "demo": cmd_demo,
}


def main(argv: Optional[list[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    _setup_logging(getattr(args, "verbose", 0))
    try:
        return COMMANDS[args.command](args)
    except (UsageError, FileNotFoundError, CorpusError, PersistenceError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except GatewayError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PARTIAL


if __name__ == "__main__":
    sys.exit(main())
