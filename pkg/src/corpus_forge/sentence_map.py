"""Sentence segmentation and cross-language sentence alignment.

Three interchangeable similarity strategies align the sentences of a
mapped article pair:

* LAS  - cosine between language-agnostic sentence embeddings,
* SLAS - length-based dynamic programming over alignment beads
         (1-1, 1-0, 0-1, 2-1, 1-2), Gale-Church style,
* LO   - lexical-overlap F1 over pivot-language translations.

LAS and LO score every cross combination inside one ROI stream
(headlines with headlines, content with content, captions with captions)
and keep a greedy one-to-one assignment above the strategy threshold;
SLAS returns the minimum-cost bead path directly.
"""

from __future__ import annotations

import logging
import math
import unicodedata
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Sequence

from .embedding import EmbeddingError, PivotLexicon, cosine
from .layout import ArticleRecord, RoiKind

logger = logging.getLogger(__name__)

DELIMITERS = ("।", "॥", ".", "?", "!")  # danda, double danda, . ? !
ABBREVIATIONS = {"mr", "mrs", "dr", "prof", "no", "vol", "st"}


class Strategy(str, Enum):
    LAS = "las"
    SLAS = "slas"
    LO = "lo"


SCORE_RANGES = {Strategy.LAS: (-1.0, 1.0), Strategy.SLAS: (0.0, 1.0), Strategy.LO: (0.0, 1.0)}


class AlignmentError(Exception):
    pass


@dataclass(frozen=True)
class Sentence:
    text: str
    index: int
    word_count: int
    roi_kind: RoiKind = RoiKind.CONTENT
    article_id: str | None = None
    language: str | None = None

    def __post_init__(self):
        if not self.text.strip():
            raise AlignmentError("sentence text must be non-empty")
        if self.word_count < 1:
            raise AlignmentError("sentence must contain at least one word")


@dataclass(frozen=True)
class Provenance:
    date: str
    page_ids: tuple[str, str]
    article_ids: tuple[str, str]
    roi_kind: str = RoiKind.CONTENT.value
    article_len: int = 0

    def as_dict(self) -> dict:
        return {"date": self.date, "page_ids": list(self.page_ids),
                "article_ids": list(self.article_ids), "roi": self.roi_kind,
                "article_len": self.article_len}


@dataclass(frozen=True)
class SentencePair:
    left: Sentence
    right: Sentence
    score: float
    strategy: Strategy
    provenance: Provenance

    def __post_init__(self):
        lo, hi = SCORE_RANGES[self.strategy]
        if not (lo - 1e-9 <= self.score <= hi + 1e-9):
            raise AlignmentError(
                f"{self.strategy.value} score {self.score} outside [{lo}, {hi}]")
        if (self.left.language and self.right.language
                and self.left.language == self.right.language):
            raise AlignmentError("sentence pair sides must differ in language")


def tokenize(text: str) -> list[str]:
    """NFC-normalize, strip punctuation-class marks, split on whitespace."""
    normalized = unicodedata.normalize("NFC", text)
    chars = [" " if unicodedata.category(ch).startswith("P") else ch for ch in normalized]
    return "".join(chars).split()


def _is_abbreviation(text: str, dot_pos: int) -> bool:
    i = dot_pos - 1
    word = []
    while i >= 0 and (text[i].isalpha()):
        word.append(text[i])
        i -= 1
    word = "".join(reversed(word))
    if not word:
        return False
    return len(word) == 1 or word.casefold() in ABBREVIATIONS


def split_sentences(text: str, language: str | None = None,
                    roi_kind: RoiKind = RoiKind.CONTENT,
                    article_id: str | None = None) -> list[Sentence]:
    """Split on sentence delimiters followed by whitespace or end of text.

    Delimiters stay with the preceding sentence. A '.' after a
    single-letter word or a known abbreviation is not a boundary.
    Fragments with no word tokens are dropped.
    """
    if not text or not text.strip():
        return []
    pieces: list[str] = []
    start = 0
    i = 0
    n = len(text)
    while i < n:
        ch = text[i]
        if ch in DELIMITERS:
            j = i
            while j + 1 < n and text[j + 1] in DELIMITERS:
                j += 1
            at_end = j + 1 >= n
            followed_by_space = not at_end and text[j + 1].isspace()
            if (at_end or followed_by_space) and not (
                    ch == "." and i == j and _is_abbreviation(text, i)):
                pieces.append(text[start:j + 1])
                start = j + 1
            i = j + 1
        else:
            i += 1
    if start < n:
        pieces.append(text[start:])

    out: list[Sentence] = []
    for piece in pieces:
        stripped = piece.strip()
        if not stripped:
            continue
        words = tokenize(stripped)
        if not words:
            continue
        out.append(Sentence(text=stripped, index=len(out), word_count=len(words),
                            roi_kind=roi_kind, article_id=article_id, language=language))
    return out


# --- LAS ---------------------------------------------------------------------

def las_score(a: Sentence, b: Sentence, provider) -> float:
    """Cosine similarity of the two sentence embeddings, in [-1, 1]."""
    try:
        va = provider.embed([a.text], language=a.language)[0]
        vb = provider.embed([b.text], language=b.language)[0]
    except EmbeddingError:
        raise
    except Exception as exc:
        raise EmbeddingError(f"embedding provider failed: {exc}") from exc
    return cosine(va, vb)


# --- LO ----------------------------------------------------------------------

def _pivot_multiset(sentence: Sentence, lexicon: PivotLexicon) -> dict[str, int]:
    counts: dict[str, int] = {}
    for token in tokenize(sentence.text):
        pivots = lexicon.lookup(token)
        if not pivots:
            logger.debug("no lexicon entry for %r (%s)", token, lexicon.language)
            continue
        for p in pivots:
            counts[p] = counts.get(p, 0) + 1
    return counts


def lo_score(a: Sentence, b: Sentence, lex_a: PivotLexicon, lex_b: PivotLexicon) -> float:
    """Lexical-overlap F1 over pivot translations; 0 when nothing translates."""
    ca = _pivot_multiset(a, lex_a)
    cb = _pivot_multiset(b, lex_b)
    total_a = sum(ca.values())
    total_b = sum(cb.values())
    if total_a == 0 or total_b == 0:
        return 0.0
    common = sum(min(n, cb.get(tok, 0)) for tok, n in ca.items())
    precision = common / total_a
    recall = common / total_b
    if precision + recall == 0:
        return 0.0
    return 2 * precision * recall / (precision + recall)


# --- SLAS (Gale-Church style DP) ------------------------------------------------

BEADS = ((1, 1), (1, 0), (0, 1), (2, 1), (1, 2))
BEAD_PRIORS = {(1, 1): 0.89, (1, 0): 0.0099, (0, 1): 0.0099, (2, 1): 0.089, (1, 2): 0.089}
MAX_LENGTH_COST = 25.0


@dataclass(frozen=True)
class SlasParams:
    length_ratio: float | None = None   # mean right/left words; estimated when None
    variance: float = 6.8
    threshold: float = 0.5

    @classmethod
    def from_dict(cls, d: dict) -> "SlasParams":
        known = {k: v for k, v in d.items() if k in cls.__dataclass_fields__}
        return cls(**known)


def _norm_cdf(z: float) -> float:
    return 0.5 * (1.0 + math.erf(z / math.sqrt(2.0)))


def length_cost(len_left: int, len_right: int, ratio: float, variance: float) -> float:
    """-log of the two-sided tail probability of the length deviation."""
    if len_left == 0 and len_right == 0:
        return 0.0
    mean = (len_left + len_right / ratio) / 2.0
    if mean <= 0:
        return MAX_LENGTH_COST
    z = (len_right - len_left * ratio) / math.sqrt(mean * variance)
    pd = 2.0 * (1.0 - _norm_cdf(abs(z)))
    if pd > 0:
        return min(-math.log(pd), MAX_LENGTH_COST)
    return MAX_LENGTH_COST


def bead_cost(len_left: int, len_right: int, bead: tuple[int, int],
              ratio: float, variance: float) -> float:
    return -math.log(BEAD_PRIORS[bead]) + length_cost(len_left, len_right, ratio, variance)


def estimate_length_ratio(left: Sequence[Sentence], right: Sequence[Sentence]) -> float:
    lw = sum(s.word_count for s in left)
    rw = sum(s.word_count for s in right)
    if lw == 0 or rw == 0:
        return 1.0
    return rw / lw


def slas_path(left_counts: Sequence[int], right_counts: Sequence[int],
              ratio: float, variance: float) -> tuple[list[tuple[int, int]], float]:
    """Minimum-cost bead path over the two word-count sequences.

    Returns the bead sequence and the total path cost; exact DP, no
    search-band approximation (article pairs are small).
    """
    m, n = len(left_counts), len(right_counts)
    cum_l = [0] * (m + 1)
    for i, c in enumerate(left_counts):
        cum_l[i + 1] = cum_l[i] + c
    cum_r = [0] * (n + 1)
    for j, c in enumerate(right_counts):
        cum_r[j + 1] = cum_r[j] + c

    inf = math.inf
    cost = [[inf] * (n + 1) for _ in range(m + 1)]
    back: list[list[tuple[int, int] | None]] = [[None] * (n + 1) for _ in range(m + 1)]
    cost[0][0] = 0.0
    for i in range(m + 1):
        for j in range(n + 1):
            if i == 0 and j == 0:
                continue
            best, best_bead = inf, None
            for bead in BEADS:
                bi, bj = bead
                pi, pj = i - bi, j - bj
                if pi < 0 or pj < 0 or cost[pi][pj] == inf:
                    continue
                step = bead_cost(cum_l[i] - cum_l[pi], cum_r[j] - cum_r[pj],
                                 bead, ratio, variance)
                total = cost[pi][pj] + step
                if total < best - 1e-12:
                    best, best_bead = total, bead
            cost[i][j] = best
            back[i][j] = best_bead

    if cost[m][n] == inf:
        raise AlignmentError("no alignment path found")
    beads: list[tuple[int, int]] = []
    i, j = m, n
    while i > 0 or j > 0:
        bead = back[i][j]
        beads.append(bead)
        i -= bead[0]
        j -= bead[1]
    beads.reverse()
    return beads, cost[m][n]


def _merge_sentences(sentences: list[Sentence]) -> Sentence:
    return Sentence(text=" ".join(s.text for s in sentences),
                    index=sentences[0].index,
                    word_count=sum(s.word_count for s in sentences),
                    roi_kind=sentences[0].roi_kind,
                    article_id=sentences[0].article_id,
                    language=sentences[0].language)


def slas_align(left: Sequence[Sentence], right: Sequence[Sentence],
               params: SlasParams | None = None,
               provenance: Provenance | None = None) -> list[SentencePair]:
    """Length-based DP alignment; emits the 1-1, 2-1 and 1-2 beads.

    A 2-1 or 1-2 bead yields one pair with the two same-side sentences
    concatenated, keeping the output one-to-one. The pair score is the
    bead's two-sided length p-value mapped to [0, 1].
    """
    params = params or SlasParams()
    if not left or not right:
        return []
    ratio = params.length_ratio or estimate_length_ratio(left, right)
    lc = [s.word_count for s in left]
    rc = [s.word_count for s in right]
    beads, _ = slas_path(lc, rc, ratio, params.variance)

    prov = provenance or Provenance(date="", page_ids=("", ""), article_ids=("", ""))
    pairs: list[SentencePair] = []
    i = j = 0
    for bi, bj in beads:
        if bi > 0 and bj > 0:
            lsen = list(left[i:i + bi])
            rsen = list(right[j:j + bj])
            score = math.exp(-length_cost(sum(s.word_count for s in lsen),
                                          sum(s.word_count for s in rsen),
                                          ratio, params.variance))
            if score >= params.threshold:
                pairs.append(SentencePair(
                    left=lsen[0] if len(lsen) == 1 else _merge_sentences(lsen),
                    right=rsen[0] if len(rsen) == 1 else _merge_sentences(rsen),
                    score=min(score, 1.0), strategy=Strategy.SLAS,
                    provenance=replace(prov, roi_kind=lsen[0].roi_kind.value),
                ))
        i += bi
        j += bj
    return pairs


# --- shared greedy assignment ------------------------------------------------------

def greedy_one_to_one(scores: dict[tuple[int, int], float],
                      threshold: float) -> list[tuple[int, int, float]]:
    """Descending-score greedy matching; ties break on (left, right) index."""
    ranked = sorted(scores.items(), key=lambda kv: (-kv[1], kv[0][0], kv[0][1]))
    used_l: set[int] = set()
    used_r: set[int] = set()
    out = []
    for (i, j), s in ranked:
        if s < threshold or i in used_l or j in used_r:
            continue
        used_l.add(i)
        used_r.add(j)
        out.append((i, j, s))
    return out


# --- full article-pair alignment -----------------------------------------------------

@dataclass(frozen=True)
class AlignParams:
    las_threshold: float = 0.6
    lo_threshold: float = 0.5
    slas: SlasParams = field(default_factory=SlasParams)
    embed_dim: int = 256

    @classmethod
    def from_dict(cls, d: dict) -> "AlignParams":
        slas = SlasParams.from_dict(d.get("slas", d))
        known = {k: v for k, v in d.items()
                 if k in cls.__dataclass_fields__ and k != "slas"}
        return cls(slas=slas, **known)


STREAM_KINDS = (RoiKind.HEADLINE, RoiKind.CONTENT, RoiKind.CAPTION)


def article_sentences(article: ArticleRecord, kind: RoiKind,
                      language: str | None = None) -> list[Sentence]:
    """Sentences of one ROI stream, indexed in reading order."""
    out: list[Sentence] = []
    for roi in sorted(article.rois_of(kind), key=lambda r: (r.seq_index, r.sub_index or 0)):
        text = article.texts.get(roi.key)
        if not text:
            continue
        for s in split_sentences(text, language=language, roi_kind=kind,
                                 article_id=article.article_id):
            out.append(replace(s, index=len(out)))
    return out


def total_sentences(article: ArticleRecord, language: str | None = None) -> int:
    return sum(len(article_sentences(article, k, language)) for k in STREAM_KINDS)


def align_sentences(pair, strategy: Strategy, params: AlignParams | None = None,
                    provider=None,
                    lexicons: tuple[PivotLexicon, PivotLexicon] | None = None
                    ) -> list[SentencePair]:
    """Align one mapped article pair with the chosen strategy.

    Scoring never crosses ROI streams: headlines pair with headlines,
    content with content, captions with captions. Every output pair
    carries provenance (date, pages, articles, ROI kind, article length).
    """
    params = params or AlignParams()
    strategy = Strategy(strategy)
    if strategy is Strategy.LAS and provider is None:
        raise AlignmentError("LAS needs an embedding provider")
    if strategy is Strategy.LO and lexicons is None:
        raise AlignmentError("LO needs pivot lexicons for both languages")

    left_lang = getattr(pair, "left_language", None)
    right_lang = getattr(pair, "right_language", None)
    prov = Provenance(
        date=getattr(pair, "date", ""),
        page_ids=(pair.left.page_id, pair.right.page_id),
        article_ids=(pair.left.article_id, pair.right.article_id),
        article_len=total_sentences(pair.left, left_lang),
    )

    out: list[SentencePair] = []
    for kind in STREAM_KINDS:
        left = article_sentences(pair.left, kind, left_lang)
        right = article_sentences(pair.right, kind, right_lang)
        if not left or not right:
            continue
        kind_prov = replace(prov, roi_kind=kind.value)
        if strategy is Strategy.SLAS:
            out.extend(slas_align(left, right, params.slas, kind_prov))
            continue
        if strategy is Strategy.LAS:
            lv = provider.embed([s.text for s in left], language=left_lang)
            rv = provider.embed([s.text for s in right], language=right_lang)
            scores = {(i, j): cosine(lv[i], rv[j])
                      for i in range(len(left)) for j in range(len(right))}
            threshold = params.las_threshold
        else:
            lex_a, lex_b = lexicons
            scores = {(i, j): lo_score(left[i], right[j], lex_a, lex_b)
                      for i in range(len(left)) for j in range(len(right))}
            threshold = params.lo_threshold
        for i, j, s in greedy_one_to_one(scores, threshold):
            out.append(SentencePair(left=left[i], right=right[j], score=s,
                                    strategy=strategy, provenance=kind_prov))
    return out
