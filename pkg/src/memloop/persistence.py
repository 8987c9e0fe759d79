"""Versioned, byte-stable serialization of run directories.

Layout of a run directory::

    run.json                      manifest: config snapshot, corpus digest, per-dialogue status
    <dialogue_id>.memstore.jsonl  header line + one memory entry per line
    <dialogue_id>.strategy.json   extraction strategy
    <dialogue_id>.sessions.json   per-session adaptation reports
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Union

from .ama import AmaConfig, DialogueArtifacts, RunArtifacts, SessionReport
from .store import MemoryEntry, MemoryStore
from .strategy import ExtractionStrategy

logger = logging.getLogger(__name__)

SCHEMA_VERSION = "1.0"
MANIFEST = "run.json"


class PersistenceError(RuntimeError):
    pass


def _canonical(obj: Any) -> Any:
    if isinstance(obj, float):
        if not math.isfinite(obj):
            raise PersistenceError(f"non-finite float {obj!r} cannot be serialized")
        return float(f"{obj:.9g}")
    if isinstance(obj, dict):
        return {str(k): _canonical(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_canonical(v) for v in obj]
    return obj


def canonical_json(obj: Any, *, indent: int | None = 2) -> str:
    """Sorted keys, floats at 9 significant digits, UTF-8 text."""
    seps = (",", ":") if indent is None else (",", ": ")
    return json.dumps(_canonical(obj), sort_keys=True, ensure_ascii=False, indent=indent, separators=seps)


def _check_version(version: Any, where: str) -> None:
    try:
        major, minor = (int(p) for p in str(version).split(".", 1))
    except ValueError as exc:
        raise PersistenceError(f"{where}: malformed version {version!r}") from exc
    cur_major, cur_minor = (int(p) for p in SCHEMA_VERSION.split("."))
    if major != cur_major:
        raise PersistenceError(f"{where}: unsupported major version {version}")
    if minor > cur_minor:
        logger.warning("%s: written by newer minor version %s; reading as %s", where, version, SCHEMA_VERSION)


def _write(path: Path, text: str) -> None:
    try:
        path.write_text(text, encoding="utf-8")
    except OSError as exc:
        raise PersistenceError(f"cannot write {path}: {exc}") from exc


def _read_json(path: Path) -> Any:
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise PersistenceError(f"cannot read {path}: {exc}") from exc
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise PersistenceError(f"{path}:{exc.lineno}: corrupt JSON: {exc.msg}") from exc


def store_to_text(store: MemoryStore) -> str:
    header = {"version": SCHEMA_VERSION, "next_seq": store.next_seq, "dialogue_id": store.dialogue_id,
              "dup_threshold": store.dup_threshold, "link_threshold": store.link_threshold,
              "max_links": store.max_links}
    lines = [canonical_json(header, indent=None)]
    lines.extend(canonical_json(e.to_dict(), indent=None) for e in store.entries)
    return "\n".join(lines) + "\n"


def save_store(store: MemoryStore, path: Union[str, Path]) -> None:
    _write(Path(path), store_to_text(store))


def load_store(path: Union[str, Path]) -> MemoryStore:
    path = Path(path)
    try:
        lines = path.read_text(encoding="utf-8").split("\n")
    except OSError as exc:
        raise PersistenceError(f"cannot read {path}: {exc}") from exc
    if not lines:
        raise PersistenceError(f"{path}:1: empty store file")
    records = []
    for lineno, line in enumerate(lines, 1):
        if not line.strip():
            continue
        try:
            records.append((lineno, json.loads(line)))
        except json.JSONDecodeError as exc:
            raise PersistenceError(f"{path}:{lineno}: corrupt JSON: {exc.msg}") from exc
    _, header = records[0]
    _check_version(header.get("version"), str(path))
    store = MemoryStore(
        header.get("dialogue_id", ""),
        dup_threshold=header.get("dup_threshold", 0.95),
        link_threshold=header.get("link_threshold", 0.60),
        max_links=header.get("max_links", 3),
    )
    for lineno, rec in records[1:]:
        try:
            store.entries.append(MemoryEntry.from_dict(rec))
        except (KeyError, TypeError, ValueError) as exc:
            raise PersistenceError(f"{path}:{lineno}: malformed memory entry: {exc}") from exc
    store.next_seq = int(header["next_seq"])
    if store.entries and store.next_seq <= max(e.created_seq for e in store.entries):
        raise PersistenceError(f"{path}:1: next_seq {store.next_seq} not above stored sequence numbers")
    return store


@dataclass
class RunManifest:
    run_id: str
    config_snapshot: dict
    corpus_digest: str
    started_at: str
    finished_at: str
    artifact_paths: list[str] = field(default_factory=list)
    dialogues: list[dict] = field(default_factory=list)
    version: str = SCHEMA_VERSION

    def to_dict(self) -> dict:
        return {
            "version": self.version,
            "run_id": self.run_id,
            "config_snapshot": self.config_snapshot,
            "corpus_digest": self.corpus_digest,
            "started_at": self.started_at,
            "finished_at": self.finished_at,
            "artifact_paths": list(self.artifact_paths),
            "dialogues": list(self.dialogues),
        }


def run_id_for(config_snapshot: dict, corpus_digest: str) -> str:
    blob = canonical_json({"config": config_snapshot, "corpus": corpus_digest}, indent=None)
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:16]


def _dialogue_files(dialogue_id: str) -> tuple[str, str, str]:
    if not dialogue_id or "/" in dialogue_id or "\\" in dialogue_id or dialogue_id.startswith("."):
        raise PersistenceError(f"dialogue id {dialogue_id!r} is not usable as a file name")
    return (f"{dialogue_id}.memstore.jsonl", f"{dialogue_id}.strategy.json", f"{dialogue_id}.sessions.json")


def save_dialogue(run_dir: Path, art: DialogueArtifacts) -> list[str]:
    store_name, strategy_name, sessions_name = _dialogue_files(art.dialogue_id)
    save_store(art.store, run_dir / store_name)
    _write(run_dir / strategy_name, canonical_json({"version": SCHEMA_VERSION, "strategy": art.strategy.to_dict()}) + "\n")
    sessions = {"version": SCHEMA_VERSION, "dialogue_id": art.dialogue_id,
                "sessions": [s.to_dict() for s in art.sessions]}
    _write(run_dir / sessions_name, canonical_json(sessions) + "\n")
    return [store_name, strategy_name, sessions_name]


def save_state(run_dir: Union[str, Path], artifacts: RunArtifacts) -> RunManifest:
    run_dir = Path(run_dir)
    try:
        run_dir.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise PersistenceError(f"cannot create {run_dir}: {exc}") from exc
    paths, statuses = [], []
    for did, art in artifacts.dialogues.items():
        paths.extend(save_dialogue(run_dir, art))
        statuses.append({
            "dialogue_id": did,
            "status": "failed" if art.error else "ok",
            "error": art.error,
            "pre_pass_rate": art.pre_pass_rate,
            "post_pass_rate": art.post_pass_rate,
        })
    manifest = RunManifest(
        run_id=run_id_for(artifacts.config_snapshot, artifacts.corpus_digest),
        config_snapshot=artifacts.config_snapshot,
        corpus_digest=artifacts.corpus_digest,
        started_at=artifacts.started_at,
        finished_at=artifacts.finished_at,
        artifact_paths=paths,
        dialogues=statuses,
    )
    _write(run_dir / MANIFEST, canonical_json(manifest.to_dict()) + "\n")
    return manifest


def load_manifest(run_dir: Union[str, Path]) -> RunManifest:
    path = Path(run_dir) / MANIFEST
    if not path.is_file():
        raise PersistenceError(f"{run_dir}: not a run directory (no {MANIFEST})")
    doc = _read_json(path)
    _check_version(doc.get("version"), str(path))
    try:
        return RunManifest(
            run_id=doc["run_id"], config_snapshot=doc["config_snapshot"], corpus_digest=doc["corpus_digest"],
            started_at=doc["started_at"], finished_at=doc["finished_at"],
            artifact_paths=list(doc.get("artifact_paths", [])), dialogues=list(doc.get("dialogues", [])),
            version=doc["version"],
        )
    except KeyError as exc:
        raise PersistenceError(f"{path}: missing key {exc}") from exc


def load_dialogue(run_dir: Path, dialogue_id: str, error: str | None = None) -> DialogueArtifacts:
    store_name, strategy_name, sessions_name = _dialogue_files(dialogue_id)
    store = load_store(run_dir / store_name)
    sdoc = _read_json(run_dir / strategy_name)
    _check_version(sdoc.get("version"), str(run_dir / strategy_name))
    try:
        strategy = ExtractionStrategy.from_dict(sdoc["strategy"])
    except (KeyError, TypeError, ValueError) as exc:
        raise PersistenceError(f"{run_dir / strategy_name}: {exc}") from exc
    rdoc = _read_json(run_dir / sessions_name)
    _check_version(rdoc.get("version"), str(run_dir / sessions_name))
    try:
        sessions = [SessionReport.from_dict(s) for s in rdoc["sessions"]]
    except (KeyError, TypeError) as exc:
        raise PersistenceError(f"{run_dir / sessions_name}: malformed session report: {exc}") from exc
    return DialogueArtifacts(dialogue_id, store, strategy, sessions, error)


def load_state(run_dir: Union[str, Path]) -> RunArtifacts:
    run_dir = Path(run_dir)
    manifest = load_manifest(run_dir)
    config = AmaConfig.from_dict(manifest.config_snapshot.get("ama", {}))
    run = RunArtifacts(config, manifest.config_snapshot, manifest.corpus_digest,
                       started_at=manifest.started_at, finished_at=manifest.finished_at)
    for status in manifest.dialogues:
        did = status["dialogue_id"]
        run.dialogues[did] = load_dialogue(run_dir, did, status.get("error"))
    return run
