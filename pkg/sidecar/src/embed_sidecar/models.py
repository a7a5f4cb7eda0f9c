"""Embedding model backends.

The service is model-agnostic: anything with an ``embed(texts, language)``
method returning unit-norm vectors of a fixed dimension can be served.
The default backend is a deterministic character-trigram feature hasher
(no ML runtime, bit-identical across processes); a sentence-transformers
backend loads by model name when that package is installed.
"""

from __future__ import annotations

import hashlib

import numpy as np


class ModelError(Exception):
    pass


class HashTrigramModel:
    """Signed char-trigram hashing into a fixed number of buckets.

    blake2b keeps bucket assignment identical across platforms and
    processes, so the same text always yields the same vector.
    """

    def __init__(self, dim: int = 256):
        if dim < 16:
            raise ModelError(f"dim must be >= 16, got {dim}")
        self.dim = dim
        self.model_id = f"hash-trigram-{dim}"

    def embed(self, texts: list[str], language: str | None = None) -> np.ndarray:
        out = np.zeros((len(texts), self.dim), dtype=np.float64)
        for row, text in enumerate(texts):
            grams = ([text[i:i + 3] for i in range(len(text) - 2)]
                     if len(text) >= 3 else [text])
            for gram in grams:
                h = int.from_bytes(
                    hashlib.blake2b(gram.encode("utf-8"), digest_size=8).digest(), "big")
                sign = 1.0 if h & 1 else -1.0
                out[row, (h >> 1) % self.dim] += sign
            norm = np.linalg.norm(out[row])
            if norm < 1e-12:
                for gram in grams:
                    h = int.from_bytes(
                        hashlib.blake2b(gram.encode("utf-8"), digest_size=8).digest(),
                        "big")
                    out[row, (h >> 1) % self.dim] += 1.0
                norm = np.linalg.norm(out[row])
            out[row] /= norm
        return out


class SentenceTransformerModel:
    """Wraps a sentence-transformers checkpoint in evaluation mode."""

    def __init__(self, name: str):
        try:
            from sentence_transformers import SentenceTransformer
        except ImportError as exc:
            raise ModelError(
                "sentence-transformers is not installed; use the hash backend "
                "or install the 'transformers' extra") from exc
        self._model = SentenceTransformer(name)
        self._model.eval()
        self.model_id = name
        self.dim = int(self._model.get_sentence_embedding_dimension())

    def embed(self, texts: list[str], language: str | None = None) -> np.ndarray:
        vectors = self._model.encode(texts, convert_to_numpy=True,
                                     normalize_embeddings=True, show_progress_bar=False)
        return np.asarray(vectors, dtype=np.float64)


def load_model(spec: str):
    """'hash' or 'hash:<dim>' for the builtin; anything else is a
    sentence-transformers model name."""
    if spec == "hash":
        return HashTrigramModel()
    if spec.startswith("hash:"):
        return HashTrigramModel(dim=int(spec.split(":", 1)[1]))
    return SentenceTransformerModel(spec)
