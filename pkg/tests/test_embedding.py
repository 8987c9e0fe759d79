import hashlib
import json
import math
from collections import Counter

import httpx
import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from memloop.embedding import LocalEmbedder, RemoteEmbedder, cosine, finalize, is_zero
from memloop.gateway import GatewayError
from memloop.metrics import normalize_text


def ref_bow_cosine(a, b, dim=256, seed=1729):
    """Sparse reference: bucket counts via the same keyed hash, cosine by dict arithmetic."""
    key = seed.to_bytes(8, "little", signed=True)

    def buckets(text):
        return Counter(int.from_bytes(hashlib.blake2b(t.encode(), digest_size=8, key=key).digest(), "little") % dim
                       for t in normalize_text(text))

    x, y = buckets(a), buckets(b)
    dot = sum(x[k] * y[k] for k in x)
    nx = math.sqrt(sum(v * v for v in x.values()))
    ny = math.sqrt(sum(v * v for v in y.values()))
    return 0.0 if nx == 0 or ny == 0 else dot / (nx * ny)


def test_empty_text_is_zero_vector(embedder):
    v = embedder.embed("")
    assert v.shape == (256,) and is_zero(v)
    assert is_zero(embedder.embed("the a an !!"))


def test_deterministic(embedder):
    assert np.array_equal(embedder.embed("dance studio"), LocalEmbedder().embed("dance studio"))


def test_seed_changes_buckets():
    assert not np.array_equal(LocalEmbedder(seed=1).embed("dance studio plans"),
                              LocalEmbedder(seed=2).embed("dance studio plans"))


def test_similarity_ordering_matches_reference(embedder):
    near = cosine(embedder.embed("dance studio plans"), embedder.embed("dance studio"))
    far = cosine(embedder.embed("dance studio plans"), embedder.embed("quarterly tax filing"))
    assert near > far
    assert near == pytest.approx(ref_bow_cosine("dance studio plans", "dance studio"), abs=1e-8)
    assert far == pytest.approx(ref_bow_cosine("dance studio plans", "quarterly tax filing"), abs=1e-8)


def test_cosine_examples():
    v = finalize([3.0, 4.0])
    assert cosine(v, v) == pytest.approx(1.0)
    assert cosine(v, np.zeros(2)) == 0.0
    assert cosine(np.array([1.0, 0.0]), np.array([0.0, 1.0])) == 0.0
    with pytest.raises(ValueError):
        cosine(np.zeros(2), np.zeros(3))


vectors = st.lists(st.floats(-1e3, 1e3, allow_nan=False), min_size=4, max_size=4).map(np.array)


@given(vectors, vectors)
def test_cosine_symmetric_and_bounded(a, b):
    assert cosine(a, b) == cosine(b, a)
    assert abs(cosine(a, b)) <= 1 + 1e-9


words = st.lists(st.sampled_from(["dance", "studio", "tax", "jon", "gina", "plans", "Plans!"]), max_size=8)


@given(words, st.randoms())
def test_bag_of_words_permutation(ws, rnd):
    shuffled = list(ws)
    rnd.shuffle(shuffled)
    e = LocalEmbedder()
    assert np.array_equal(e.embed(" ".join(ws)), e.embed(" ".join(shuffled)))


@given(words)
def test_unit_norm_or_zero(ws):
    v = LocalEmbedder().embed(" ".join(ws))
    assert is_zero(v) or abs(np.linalg.norm(v) - 1.0) < 1e-8


def test_quantized_values_round_trip_through_json(embedder):
    v = embedder.embed("Jon has been rehearsing hard and working on business plans")
    again = np.array(json.loads(json.dumps([float(x) for x in v])))
    assert np.array_equal(v, again)


def test_remote_embedder():
    def handler(request):
        body = json.loads(request.content)
        assert request.url.path.endswith("/embeddings") and body["model"] == "emb"
        return httpx.Response(200, json={"data": [{"embedding": [0.0, 3.0, 4.0]}]})

    e = RemoteEmbedder("http://x", "k", "emb", client=httpx.Client(transport=httpx.MockTransport(handler)))
    v = e.embed("hello there")
    assert np.allclose(v, [0.0, 0.6, 0.8])
    assert is_zero(e.embed("")) and e.embed("").shape == (3,)


def test_remote_embedder_bad_payload():
    e = RemoteEmbedder("http://x", "k", client=httpx.Client(
        transport=httpx.MockTransport(lambda r: httpx.Response(200, json={"nope": 1}))))
    with pytest.raises(GatewayError):
        e.embed("hello")
