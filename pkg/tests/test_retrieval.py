import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import brute_force_search
from ragtuner.errors import ConflictError, InputError, SchemaError, ShapeError
from ragtuner.numkit import RngStream
from ragtuner.retrieval import Chunk, HashEmbedder, VectorIndex, chunk_text


class TestChunkText:
    def test_250_words_make_three_chunks(self):
        text = " ".join(f"w{i}" for i in range(250))
        chunks = chunk_text("doc", text)
        assert [len(c.text.split()) for c in chunks] == [100, 100, 50]

    def test_word_count_preserved(self):
        text = " ".join(f"w{i}" for i in range(321))
        chunks = chunk_text("doc", text, max_words=37)
        assert sum(len(c.text.split()) for c in chunks) == 321

    def test_order_and_ids(self):
        chunks = chunk_text("doc", "a b c d e", max_words=2, start_id=10)
        assert [c.chunk_id for c in chunks] == [10, 11, 12]
        assert [c.text for c in chunks] == ["a b", "c d", "e"]
        assert all(c.doc_id == "doc" for c in chunks)

    def test_short_document_is_one_chunk(self):
        assert len(chunk_text("doc", "just a few words")) == 1

    def test_empty_document_rejected(self):
        with pytest.raises(InputError):
            chunk_text("doc", "   ")

    def test_bad_max_words(self):
        with pytest.raises(InputError):
            chunk_text("doc", "a b", max_words=0)

    def test_chunk_text_must_be_nonempty(self):
        with pytest.raises(InputError):
            Chunk(chunk_id=0, doc_id="d", text="")


def _filled_index(n=20, dim=8, seed=0):
    rng = RngStream(seed)
    index = VectorIndex(dim=dim)
    vectors = rng.uniform(-1, 1, (n, dim))
    for i in range(n):
        index.insert(Chunk(chunk_id=i, doc_id="d", text=f"chunk {i}"), vectors[i])
    return index, vectors


class TestVectorIndex:
    def test_insert_and_lookup(self):
        index, _ = _filled_index(3)
        assert len(index) == 3
        assert index.chunk(1).text == "chunk 1"

    def test_duplicate_id_rejected(self):
        index, vectors = _filled_index(2)
        with pytest.raises(ConflictError, match="1"):
            index.insert(Chunk(chunk_id=1, doc_id="d", text="again"), vectors[0])

    def test_dimension_checked_on_insert(self):
        index = VectorIndex(dim=4)
        with pytest.raises(ShapeError):
            index.insert(Chunk(chunk_id=0, doc_id="d", text="x"), np.ones(3))

    def test_unknown_chunk_id(self):
        index, _ = _filled_index(2)
        with pytest.raises(InputError):
            index.chunk(99)

    def test_search_empty_index(self):
        assert VectorIndex(dim=4).search(np.zeros(4), k=3) == []

    def test_search_query_dim_checked(self):
        index, _ = _filled_index(2, dim=8)
        with pytest.raises(ShapeError):
            index.search(np.zeros(4), k=1)

    def test_search_k_validated(self):
        index, _ = _filled_index(2)
        with pytest.raises(InputError):
            index.search(np.zeros(8), k=0)

    def test_k_larger_than_index_returns_all(self):
        index, _ = _filled_index(3)
        assert len(index.search(np.zeros(8), k=50)) == 3

    def test_results_sorted_by_distance(self):
        index, vectors = _filled_index(20)
        hits = index.search(np.zeros(8), k=20)
        distances = [d for _, d in hits]
        assert distances == sorted(distances)

    def test_exact_match_has_zero_distance(self):
        index, vectors = _filled_index(5)
        hits = index.search(vectors[3], k=1)
        assert hits[0][0] == 3
        assert hits[0][1] == pytest.approx(0.0, abs=1e-12)

    def test_ties_broken_by_ascending_chunk_id(self):
        index = VectorIndex(dim=2)
        # Insert out of id order; both points are distance 1 from the origin.
        index.insert(Chunk(chunk_id=5, doc_id="d", text="five"), np.array([1.0, 0.0]))
        index.insert(Chunk(chunk_id=2, doc_id="d", text="two"), np.array([0.0, 1.0]))
        assert [cid for cid, _ in index.search(np.zeros(2), k=2)] == [2, 5]

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.integers(1, 15))
    def test_matches_brute_force_oracle(self, seed, k):
        index, vectors = _filled_index(15, dim=4, seed=seed)
        query = RngStream(seed ^ 0xABCDEF).uniform(-1, 1, 4)
        got = index.search(query, k=k)
        want = brute_force_search(
            list(range(15)), vectors.tolist(), query.tolist(), k
        )
        assert [cid for cid, _ in got] == [cid for cid, _ in want]
        np.testing.assert_allclose(
            [d for _, d in got], [d for _, d in want], rtol=1e-12
        )


class TestIndexPersistence:
    def test_round_trip(self, tmp_path):
        index, vectors = _filled_index(6)
        path = tmp_path / "index.json"
        index.save(path)
        loaded = VectorIndex.load(path)
        assert len(loaded) == 6
        assert loaded.dim == index.dim
        assert loaded.chunk(2) == index.chunk(2)
        query = RngStream(5).uniform(-1, 1, 8)
        assert loaded.search(query, k=6) == index.search(query, k=6)

    def test_saved_file_is_byte_stable(self, tmp_path):
        index, _ = _filled_index(4)
        p1, p2 = tmp_path / "a.json", tmp_path / "b.json"
        index.save(p1)
        index.save(p2)
        assert p1.read_bytes() == p2.read_bytes()

    def test_schema_tag_present(self, tmp_path):
        index, _ = _filled_index(1)
        path = tmp_path / "index.json"
        index.save(path)
        doc = json.loads(path.read_text(encoding="utf-8"))
        assert doc["schema"] == "ragtuner.index/1"
        assert doc["metric"] == "euclidean"

    def test_wrong_schema_rejected(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text('{"schema": "other/1"}', encoding="utf-8")
        with pytest.raises(SchemaError):
            VectorIndex.load(path)

    def test_count_mismatch_rejected(self, tmp_path):
        index, _ = _filled_index(3)
        path = tmp_path / "index.json"
        index.save(path)
        doc = json.loads(path.read_text(encoding="utf-8"))
        doc["count"] = 7
        path.write_text(json.dumps(doc), encoding="utf-8")
        with pytest.raises(SchemaError, match="count"):
            VectorIndex.load(path)


class TestHashEmbedder:
    def test_same_text_same_vector(self):
        emb = HashEmbedder(dim=16)
        np.testing.assert_array_equal(emb.embed("hello world"), emb.embed("hello world"))

    def test_unit_norm(self):
        emb = HashEmbedder(dim=16)
        for text in ("one", "two words here", "The CAT!", "..."):
            assert np.linalg.norm(emb.embed(text)) == pytest.approx(1.0, abs=1e-12)

    def test_different_texts_differ(self):
        emb = HashEmbedder(dim=32)
        assert not np.array_equal(emb.embed("alpha"), emb.embed("omega"))

    def test_token_order_is_ignored(self):
        # Bag-of-words average: permuting tokens cannot change the vector.
        emb = HashEmbedder(dim=32)
        np.testing.assert_allclose(
            emb.embed("cat dog bird"), emb.embed("bird cat dog"), atol=1e-15
        )

    def test_case_and_punctuation_normalized(self):
        emb = HashEmbedder(dim=32)
        np.testing.assert_allclose(emb.embed("Moon!"), emb.embed("moon"), atol=1e-15)

    def test_transform_stacks_embeddings(self):
        emb = HashEmbedder(dim=8)
        out = emb.fit(["a"]).transform(["a", "b c"])
        assert out.shape == (2, 8)
        np.testing.assert_array_equal(out[0], emb.embed("a"))

    def test_get_params_round_trip(self):
        emb = HashEmbedder(dim=8)
        assert emb.get_params() == {"dim": 8}
        emb.set_params(dim=4)
        assert emb.embed("x").shape == (4,)
