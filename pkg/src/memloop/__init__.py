"""Adversarial memory adaptation for long-term dialogue memory."""

from .ama import AmaConfig, run_corpus, run_session
from .dialogue import Corpus, load_corpus
from .embedding import LocalEmbedder, cosine
from .gateway import Gateway, ReplayBackend
from .metrics import bleu1, f1_score
from .store import MemoryStore, retrieve, update_store
from .strategy import ExtractionStrategy

__version__ = "0.1.0"

__all__ = [
    "AdversarialMemoryAdapter",
    "AmaConfig",
    "Corpus",
    "ExtractionStrategy",
    "Gateway",
    "LocalEmbedder",
    "MemoryStore",
    "ReplayBackend",
    "bleu1",
    "cosine",
    "f1_score",
    "load_corpus",
    "retrieve",
    "run_corpus",
    "run_session",
    "update_store",
]


def __getattr__(name):
    # the estimator pulls in scikit-learn, which is slow to import; load it on demand
    if name == "AdversarialMemoryAdapter":
        from .estimator import AdversarialMemoryAdapter

        return AdversarialMemoryAdapter
    raise AttributeError(f"module 'memloop' has no attribute {name!r}")
