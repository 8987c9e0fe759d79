"""Text embeddings and cosine similarity.

The local embedder is a hashed bag of words: every normalized token is hashed
into one of ``dim`` buckets, counts are accumulated and the vector is scaled to
unit length. Text without tokens embeds to the zero vector.
"""

from __future__ import annotations

import hashlib
import os
import time
from typing import Callable, Optional

import httpx
import numpy as np

from .gateway import API_KEY_ENV, BASE_URL_ENV, GatewayError, post_with_retry
from .metrics import normalize_text

DEFAULT_DIM = 256
DEFAULT_HASH_SEED = 1729


def _quantize(v: np.ndarray) -> np.ndarray:
    # 9 significant digits so persisted vectors round-trip exactly.
    return np.array([float(f"{x:.9g}") for x in v], dtype=np.float64)


def finalize(values) -> np.ndarray:
    """L2-normalize and quantize; the zero vector stays zero."""
    v = np.asarray(values, dtype=np.float64)
    norm = float(np.linalg.norm(v))
    if norm == 0.0:
        return np.zeros_like(v)
    return _quantize(v / norm)


def is_zero(v: np.ndarray) -> bool:
    return not np.any(v)


def cosine(a: np.ndarray, b: np.ndarray) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"dimension mismatch: {a.shape} vs {b.shape}")
    na = float(np.linalg.norm(a))
    nb = float(np.linalg.norm(b))
    if na == 0.0 or nb == 0.0:
        return 0.0
    value = float(np.dot(a, b)) / (na * nb)
    return min(1.0, max(-1.0, value))


class LocalEmbedder:
    def __init__(self, dim: int = DEFAULT_DIM, seed: int = DEFAULT_HASH_SEED):
        if dim < 1:
            raise ValueError("dim must be positive")
        self.dim = dim
        self.seed = seed
        self._key = int(seed).to_bytes(8, "little", signed=True)
        self._bucket_cache: dict[str, int] = {}

    def bucket(self, token: str) -> int:
        b = self._bucket_cache.get(token)
        if b is None:
            h = hashlib.blake2b(token.encode("utf-8"), digest_size=8, key=self._key).digest()
            b = int.from_bytes(h, "little") % self.dim
            self._bucket_cache[token] = b
        return b

    def embed(self, text: str) -> np.ndarray:
        counts = np.zeros(self.dim, dtype=np.float64)
        for tok in normalize_text(text):
            counts[self.bucket(tok)] += 1.0
        return finalize(counts)

    def describe(self) -> dict:
        return {"kind": "local", "dim": self.dim, "seed": self.seed}


class RemoteEmbedder:
    def __init__(
        self,
        base_url: str,
        api_key: str,
        model: str = "text-embedding-3-small",
        *,
        timeout: float = 60.0,
        attempts: int = 3,
        client: Optional[httpx.Client] = None,
        sleep: Callable[[float], None] = time.sleep,
    ):
        if not base_url or not api_key:
            raise GatewayError(f"remote embedder needs {BASE_URL_ENV} and {API_KEY_ENV}")
        self.base_url = base_url.rstrip("/")
        self.api_key = api_key
        self.model = model
        self.attempts = attempts
        self._sleep = sleep
        self._client = client or httpx.Client(timeout=timeout)
        self.dim: Optional[int] = None

    @classmethod
    def from_env(cls, model: str = "text-embedding-3-small", **kwargs) -> "RemoteEmbedder":
        return cls(os.environ.get(BASE_URL_ENV, ""), os.environ.get(API_KEY_ENV, ""), model, **kwargs)

    def embed(self, text: str) -> np.ndarray:
        if not normalize_text(text):
            if self.dim is None:
                raise GatewayError("cannot embed empty text before the provider dimension is known")
            return np.zeros(self.dim)
        data = post_with_retry(
            self._client, f"{self.base_url}/embeddings", {"model": self.model, "input": text},
            {"Authorization": f"Bearer {self.api_key}"}, attempts=self.attempts, sleep=self._sleep,
        )
        try:
            vec = finalize(data["data"][0]["embedding"])
        except (KeyError, IndexError, TypeError) as exc:
            raise GatewayError(f"malformed embedding payload: {str(data)[:200]}") from exc
        self.dim = len(vec)
        return vec

    def describe(self) -> dict:
        return {"kind": "remote", "model": self.model}
