"""Cross-language article mapping via shared photographs.

Every cross-language image pair for one date is scored with the
feature-match similarity; articles whose best image pair clears the
threshold become candidates, and a greedy descending-score pass makes
the assignment one-to-one (an article never appears in two pairs).
Embedded articles are mapped afterwards by headline similarity.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable, Mapping, Sequence

import numpy as np

from .features import FeatureMatchParams, describe_image, match_descriptors
from .layout import ArticleRecord, RoiKind

logger = logging.getLogger(__name__)


class MappingError(Exception):
    pass


@dataclass(frozen=True)
class ArticlePair:
    """One mapped cross-language article tuple with its image evidence."""

    left: ArticleRecord
    right: ArticleRecord
    date: str
    left_language: str
    right_language: str
    image_evidence: tuple[tuple[tuple, tuple, float], ...] = ()
    pair_score: float = 0.0
    origin: str = "image_pivot"
    parent_pair: tuple[str, str] | None = None

    def __post_init__(self):
        if self.left_language == self.right_language:
            raise MappingError("pair sides must differ in language")
        if self.origin not in ("image_pivot", "headline_pivot"):
            raise MappingError(f"unknown origin {self.origin!r}")


@dataclass(frozen=True)
class MapperParams:
    similarity_threshold: float = 0.25
    headline_threshold: float = 0.6

    @classmethod
    def from_dict(cls, d: dict) -> "MapperParams":
        known = {k: v for k, v in d.items() if k in cls.__dataclass_fields__}
        return cls(**known)


ImageLookup = Mapping[str, Sequence[tuple[tuple, np.ndarray]]]
"""article_id -> [(roi_key, grayscale raster), ...] for its Image ROIs."""


def map_articles(left_articles: Sequence[ArticleRecord],
                 right_articles: Sequence[ArticleRecord],
                 date: str,
                 left_images: ImageLookup,
                 right_images: ImageLookup,
                 languages: tuple[str, str],
                 params: MapperParams | None = None,
                 feature_params: FeatureMatchParams | None = None,
                 workers: int = 1) -> list[ArticlePair]:
    """Eq.-2 style mapping: one-to-one article pairs from image similarity.

    Descriptors are computed once per image; similarities are evaluated
    for every cross-language image pair of the same date. Articles
    without Image ROIs are never image-pivot paired.
    """
    params = params or MapperParams()
    feature_params = feature_params or FeatureMatchParams()

    left_top = [a for a in left_articles if a.parent is None]
    right_top = [a for a in right_articles if a.parent is None]

    def descriptor_sets(articles, images):
        out = []
        items = []
        for art in articles:
            for key, raster in images.get(art.article_id, ()):
                items.append((art.article_id, key, raster))
        rasters = [it[2] for it in items]
        if workers > 1 and len(rasters) > 1:
            from concurrent.futures import ThreadPoolExecutor
            with ThreadPoolExecutor(max_workers=workers) as pool:
                descs = list(pool.map(lambda r: describe_image(r, feature_params), rasters))
        else:
            descs = [describe_image(r, feature_params) for r in rasters]
        for (art_id, key, _), d in zip(items, descs):
            out.append((art_id, key, d))
        return out

    left_descs = descriptor_sets(left_top, left_images)
    right_descs = descriptor_sets(right_top, right_images)

    # evidence per candidate article pair: image pairs at/above threshold
    evidence: dict[tuple[str, str], list[tuple[tuple, tuple, float]]] = {}
    for l_art, l_key, l_d in left_descs:
        for r_art, r_key, r_d in right_descs:
            sim = match_descriptors(l_d, r_d, feature_params.ratio).score
            if sim >= params.similarity_threshold:
                evidence.setdefault((l_art, r_art), []).append((l_key, r_key, sim))

    by_id_l = {a.article_id: a for a in left_top}
    by_id_r = {a.article_id: a for a in right_top}
    candidates = []
    for (l_art, r_art), ev in evidence.items():
        score = max(s for _, _, s in ev)
        candidates.append((score, l_art, r_art, tuple(sorted(ev, key=lambda e: -e[2]))))
    candidates.sort(key=lambda c: (-c[0], c[1], c[2]))

    used_l: set[str] = set()
    used_r: set[str] = set()
    pairs: list[ArticlePair] = []
    for score, l_art, r_art, ev in candidates:
        if l_art in used_l or r_art in used_r:
            continue
        used_l.add(l_art)
        used_r.add(r_art)
        pairs.append(ArticlePair(
            left=by_id_l[l_art], right=by_id_r[r_art], date=date,
            left_language=languages[0], right_language=languages[1],
            image_evidence=ev, pair_score=score, origin="image_pivot"))
    return pairs


def map_embedded(pair: ArticlePair,
                 left_children: Sequence[ArticleRecord],
                 right_children: Sequence[ArticleRecord],
                 delta: Callable[[str, str], float],
                 threshold: float = 0.6) -> list[ArticlePair]:
    """Map embedded children of an established pair by headline similarity.

    ``delta`` scores two headline texts (one of the sentence-mapper
    strategies; LAS by default in the pipeline). Children without
    headline text are skipped with a warning.
    """
    def headline_of(rec: ArticleRecord) -> str | None:
        text = rec.text_of(RoiKind.HEADLINE)
        return text if text else None

    lefts = []
    for rec in sorted(left_children, key=lambda r: r.article_id):
        h = headline_of(rec)
        if h is None:
            logger.warning("embedded article %s has no headline text, skipped",
                           rec.article_id)
            continue
        lefts.append((rec, h))
    rights = []
    for rec in sorted(right_children, key=lambda r: r.article_id):
        h = headline_of(rec)
        if h is None:
            logger.warning("embedded article %s has no headline text, skipped",
                           rec.article_id)
            continue
        rights.append((rec, h))
    if not lefts or not rights:
        return []

    scored = []
    for i, (lrec, lh) in enumerate(lefts):
        for j, (rrec, rh) in enumerate(rights):
            scored.append((delta(lh, rh), i, j))
    scored.sort(key=lambda t: (-t[0], lefts[t[1]][0].article_id, rights[t[2]][0].article_id))

    used_l: set[int] = set()
    used_r: set[int] = set()
    out: list[ArticlePair] = []
    for score, i, j in scored:
        if score < threshold or i in used_l or j in used_r:
            continue
        used_l.add(i)
        used_r.add(j)
        out.append(ArticlePair(
            left=lefts[i][0], right=rights[j][0], date=pair.date,
            left_language=pair.left_language, right_language=pair.right_language,
            pair_score=float(score), origin="headline_pivot",
            parent_pair=(pair.left.article_id, pair.right.article_id)))
    return out
