"""scikit-learn style wrapper around the adaptation loop.

``fit`` builds and adapts one memory store per dialogue, ``predict`` answers
``(dialogue_id, question)`` pairs from those stores and ``score`` returns the
mean token F1 against reference answers. Hyperparameters mirror
:class:`~memloop.ama.AmaConfig` so ``get_params``/``set_params`` and
``sklearn.base.clone`` work as usual.
"""

from __future__ import annotations

from typing import Optional

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .ama import AmaConfig, RunArtifacts, answer_with_memory, run_corpus
from .dialogue import Corpus
from .embedding import LocalEmbedder
from .metrics import f1_score


class AdversarialMemoryAdapter(BaseEstimator):
    def __init__(
        self,
        gateway=None,
        embedder=None,
        qa_per_session: int = 3,
        retrieval_k: int = 10,
        guided_questions: bool = True,
        enable_content_update: bool = True,
        enable_strategy_update: bool = True,
        max_rounds: int = 1,
        reconstruction_pass_threshold: float = 0.0,
        shared_strategy: bool = False,
        parallel: int = 1,
    ):
        self.gateway = gateway
        self.embedder = embedder
        self.qa_per_session = qa_per_session
        self.retrieval_k = retrieval_k
        self.guided_questions = guided_questions
        self.enable_content_update = enable_content_update
        self.enable_strategy_update = enable_strategy_update
        self.max_rounds = max_rounds
        self.reconstruction_pass_threshold = reconstruction_pass_threshold
        self.shared_strategy = shared_strategy
        self.parallel = parallel

    def _config(self) -> AmaConfig:
        return AmaConfig(
            qa_per_session=self.qa_per_session,
            retrieval_k=self.retrieval_k,
            guided_questions=self.guided_questions,
            enable_content_update=self.enable_content_update,
            enable_strategy_update=self.enable_strategy_update,
            max_rounds=self.max_rounds,
            reconstruction_pass_threshold=self.reconstruction_pass_threshold,
            shared_strategy=self.shared_strategy,
        )

    def fit(self, X: Corpus, y=None) -> "AdversarialMemoryAdapter":
        """Construct and adapt memory for every dialogue in ``X``."""
        if self.gateway is None:
            raise ValueError("a gateway is required to fit")
        self.embedder_ = self.embedder if self.embedder is not None else LocalEmbedder()
        self.run_: RunArtifacts = run_corpus(X, self._config(), self.gateway, self.embedder_,
                                             parallel=self.parallel)
        self.pass_rates_ = {did: (a.pre_pass_rate, a.post_pass_rate) for did, a in self.run_.dialogues.items()}
        return self

    def predict(self, X) -> list[str]:
        """Answer each ``(dialogue_id, question)`` pair from its adapted store."""
        check_is_fitted(self, "run_")
        out = []
        for dialogue_id, question in X:
            store = self.run_.dialogues[dialogue_id].store
            out.append(answer_with_memory(store, question, self.retrieval_k, self.gateway, self.embedder_))
        return out

    def score(self, X, y, sample_weight: Optional[np.ndarray] = None) -> float:
        scores = [f1_score(p, g) for p, g in zip(self.predict(X), y)]
        return float(np.average(scores, weights=sample_weight))
