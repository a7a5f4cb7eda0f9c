"""Sentence embedding providers for the LAS strategy.

The builtin provider is a deterministic character-trigram feature hasher,
so the whole pipeline runs with no model runtime; an HTTP provider speaks
the sidecar protocol (POST /embed) for real multilingual models. Both
return unit-norm vectors, and both may canonicalize tokens through a
pivot lexicon first so that cross-language cosines are meaningful.
"""

from __future__ import annotations

import hashlib
import logging
import unicodedata
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

logger = logging.getLogger(__name__)

MIN_DIM = 16
DEFAULT_DIM = 256


class EmbeddingError(Exception):
    pass


@dataclass(frozen=True)
class EmbeddingVector:
    components: np.ndarray = field(compare=False)
    dim: int
    provider_id: str

    def __post_init__(self):
        if self.components.shape != (self.dim,):
            raise EmbeddingError(f"vector shape {self.components.shape} != dim {self.dim}")


@dataclass(frozen=True)
class PivotLexicon:
    """Source-token -> pivot-token(s) map, keys NFC-normalized and casefolded."""

    language: str
    entries: dict[str, frozenset[str]] = field(compare=False)

    def lookup(self, token: str) -> frozenset[str]:
        return self.entries.get(normalize_token(token), frozenset())

    def __len__(self) -> int:
        return len(self.entries)


def normalize_token(token: str) -> str:
    return unicodedata.normalize("NFC", token).casefold()


def load_lexicon(path: str | Path, language: str) -> PivotLexicon:
    """Load a TSV lexicon: source_token<TAB>pivot_token, one pair per line."""
    entries: dict[str, set[str]] = {}
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split("\t")
        if len(parts) != 2:
            raise EmbeddingError(f"{path}:{lineno}: expected source<TAB>pivot, got {line!r}")
        src, pivot = parts
        entries.setdefault(normalize_token(src), set()).add(normalize_token(pivot))
    return PivotLexicon(language=language,
                        entries={k: frozenset(v) for k, v in entries.items()})


def save_lexicon(pairs: list[tuple[str, str]], path: str | Path):
    lines = [f"{src}\t{pivot}" for src, pivot in pairs]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


# --- feature hashing ----------------------------------------------------------

def _gram_hash(gram: str) -> int:
    return int.from_bytes(hashlib.blake2b(gram.encode("utf-8"), digest_size=8).digest(), "big")


def hash_embed(text: str, dim: int = DEFAULT_DIM) -> EmbeddingVector:
    """Deterministic character-trigram hashing embedding, unit L2 norm.

    Signed-hash counts over all contiguous 3-grams of the NFC text (the
    whole text when shorter than 3), identical across platforms thanks to
    blake2b.
    """
    if dim < MIN_DIM:
        raise EmbeddingError(f"dim must be >= {MIN_DIM}, got {dim}")
    normalized = unicodedata.normalize("NFC", text)
    if not normalized.strip():
        raise EmbeddingError("cannot embed empty text")
    grams = ([normalized[i:i + 3] for i in range(len(normalized) - 2)]
             if len(normalized) >= 3 else [normalized])
    acc = np.zeros(dim, dtype=np.float64)
    for gram in grams:
        h = _gram_hash(gram)
        sign = 1.0 if h & 1 else -1.0
        acc[(h >> 1) % dim] += sign
    norm = np.linalg.norm(acc)
    if norm < 1e-12:
        # opposing signs can cancel; fall back to an unsigned count vector
        for gram in grams:
            h = _gram_hash(gram)
            acc[(h >> 1) % dim] += 1.0
        norm = np.linalg.norm(acc)
    return EmbeddingVector(components=acc / norm, dim=dim, provider_id="hash-trigram-v1")


def cosine(a: EmbeddingVector | np.ndarray, b: EmbeddingVector | np.ndarray) -> float:
    va = a.components if isinstance(a, EmbeddingVector) else a
    vb = b.components if isinstance(b, EmbeddingVector) else b
    return float(np.dot(va, vb))


# --- providers ----------------------------------------------------------------

class HashEmbeddingProvider:
    """In-process fallback provider, optionally lexicon-canonicalized.

    When a lexicon is registered for a language, each token is replaced
    by its first (sorted) pivot translation before hashing, so true
    translations land on near-identical canonical strings.
    """

    def __init__(self, dim: int = DEFAULT_DIM,
                 lexicons: dict[str, PivotLexicon] | None = None):
        if dim < MIN_DIM:
            raise EmbeddingError(f"dim must be >= {MIN_DIM}, got {dim}")
        self.dim = dim
        self.lexicons = lexicons or {}
        self.provider_id = "hash-trigram-v1"

    def _canonical(self, text: str, language: str | None) -> str:
        lex = self.lexicons.get(language or "")
        if lex is None:
            return text
        from .sentence_map import tokenize
        mapped = []
        for token in tokenize(text):
            pivots = lex.lookup(token)
            mapped.append(sorted(pivots)[0] if pivots else normalize_token(token))
        return " ".join(mapped) if mapped else text

    def embed(self, texts: list[str], language: str | None = None) -> list[np.ndarray]:
        return [hash_embed(self._canonical(t, language), self.dim).components
                for t in texts]


class StubEmbeddingProvider:
    """Maps exact texts to fixed vectors; analytic-cosine tests."""

    def __init__(self, mapping: dict[str, list[float]]):
        self.mapping = {k: np.asarray(v, dtype=np.float64) for k, v in mapping.items()}
        dims = {v.size for v in self.mapping.values()}
        if len(dims) != 1:
            raise EmbeddingError("stub vectors must share one dimension")
        self.dim = dims.pop()
        self.provider_id = "stub"

    def embed(self, texts: list[str], language: str | None = None) -> list[np.ndarray]:
        out = []
        for t in texts:
            if t not in self.mapping:
                raise EmbeddingError(f"stub has no vector for {t!r}")
            out.append(self.mapping[t])
        return out


class HttpEmbeddingProvider:
    """Speaks the sidecar protocol: POST {url}/embed with a JSON batch."""

    def __init__(self, url: str, batch_size: int = 64, timeout: float = 30.0):
        self.url = url.rstrip("/")
        self.batch_size = batch_size
        self.timeout = timeout
        self.provider_id = url
        self.dim: int | None = None

    def embed(self, texts: list[str], language: str | None = None) -> list[np.ndarray]:
        import requests

        out: list[np.ndarray] = []
        for start in range(0, len(texts), self.batch_size):
            chunk = texts[start:start + self.batch_size]
            try:
                resp = requests.post(f"{self.url}/embed",
                                     json={"texts": chunk, "language": language},
                                     timeout=self.timeout)
                resp.raise_for_status()
                payload = resp.json()
            except Exception as exc:
                raise EmbeddingError(f"embedding service at {self.url} failed: {exc}") from exc
            vectors = payload.get("vectors")
            if vectors is None or len(vectors) != len(chunk):
                raise EmbeddingError(
                    f"embedding service returned {0 if vectors is None else len(vectors)} "
                    f"vectors for a batch of {len(chunk)}")
            dim = int(payload.get("dim", len(vectors[0]) if vectors else 0))
            if self.dim is None:
                self.dim = dim
            elif self.dim != dim:
                raise EmbeddingError(f"service dim changed from {self.dim} to {dim}")
            for vec in vectors:
                arr = np.asarray(vec, dtype=np.float64)
                norm = np.linalg.norm(arr)
                if abs(norm - 1.0) > 1e-5:
                    raise EmbeddingError(f"service returned non-unit vector (norm {norm})")
                out.append(arr)
        return out


def make_provider(spec: str, dim: int = DEFAULT_DIM,
                  lexicons: dict[str, PivotLexicon] | None = None):
    """'builtin' -> hash provider; anything with :// -> HTTP provider."""
    if spec == "builtin":
        return HashEmbeddingProvider(dim=dim, lexicons=lexicons)
    if "://" in spec:
        return HttpEmbeddingProvider(spec)
    raise EmbeddingError(f"unknown provider spec {spec!r} (use 'builtin' or an http URL)")
