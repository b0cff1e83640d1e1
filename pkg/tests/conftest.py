import numpy as np
import pytest

from stylekit.store import EmbeddingMatrix, TokenVocabulary


def unit_rows(arr) -> np.ndarray:
    arr = np.asarray(arr, dtype=np.float64)
    return (arr / np.linalg.norm(arr, axis=1)[:, None]).astype(np.float32)


def unit_matrix(arr, role=None) -> EmbeddingMatrix:
    return EmbeddingMatrix(unit_rows(arr), normalized=True, role=role)


def random_unit_matrix(rng, rows, dim, role=None) -> EmbeddingMatrix:
    return unit_matrix(rng.standard_normal((rows, dim)), role=role)


@pytest.fixture
def rng():
    return np.random.default_rng(20240811)


def make_vocab(tokens, embeddings=None) -> TokenVocabulary:
    mat = None
    if embeddings is not None:
        mat = EmbeddingMatrix(np.asarray(embeddings, dtype=np.float32))
    return TokenVocabulary.from_ranked_tokens(tokens, mat)
