import sys
from pathlib import Path

import pytest

from ragtuner.retrieval import Chunk, HashEmbedder, VectorIndex, chunk_text

# Make the oracle helpers importable as a plain module from every test file.
sys.path.insert(0, str(Path(__file__).parent))


@pytest.fixture()
def embedder():
    return HashEmbedder(dim=32)


@pytest.fixture()
def tide_index(embedder):
    """Tiny three-document index used by pipeline and CLI tests."""
    texts = [
        "the moon orbits the earth once every month",
        "bread is baked from flour water and yeast in a hot oven",
        "the tides of the ocean follow the pull of the moon",
    ]
    index = VectorIndex(dim=32)
    next_id = 0
    for doc, text in enumerate(texts):
        for chunk in chunk_text(f"doc{doc}", text, start_id=next_id):
            index.insert(chunk, embedder.embed(chunk.text))
            next_id += 1
    return index
