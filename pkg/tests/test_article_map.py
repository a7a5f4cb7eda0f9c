import itertools
import json

import numpy as np
import pytest

from conftest import extract_all, ingest, mock_engines, segment_all
from corpus_forge import sentence_map
from corpus_forge.article_map import ArticlePair, MapperParams, map_articles, map_embedded
from corpus_forge.embedding import HashEmbeddingProvider, load_lexicon
from corpus_forge.features import FeatureMatchParams
from corpus_forge.fixtures import (FixtureSpec, _perturbed, _texture,
                                   article_pair_metrics, match_records_to_truth)
from corpus_forge.layout import ArticleRecord, Box, Roi, RoiKind
from corpus_forge.pipeline import _article_images


def _stub_article(article_id, page_id="p1"):
    return ArticleRecord(article_id=article_id, page_id=page_id,
                         rois=[Roi(RoiKind.UNCLASSIFIED, Box(0, 0, 10, 10))])


def test_fixture_bundle_pairs_exact(small_bundle):
    ps = ingest(small_bundle)
    records = segment_all(ps)
    lang_l, lang_r = small_bundle.spec.languages
    pl = {p.page_id for p in ps.pages if p.language == lang_l}
    left = [r for r in records if r.page_id in pl]
    right = [r for r in records if r.page_id not in pl]
    pairs = map_articles(left, right, small_bundle.spec.date,
                         _article_images(left, ps), _article_images(right, ps),
                         (lang_l, lang_r), MapperParams(), FeatureMatchParams())
    metrics = article_pair_metrics(pairs, records, small_bundle)
    assert metrics["precision"] == 1.0
    assert metrics["recall"] == 1.0
    assert metrics["expected"] == 3
    for p in pairs:
        assert p.pair_score >= MapperParams().similarity_threshold
        assert p.image_evidence


def test_articles_without_images_never_pair():
    left = [_stub_article("l1a")]
    right = [_stub_article("l2a")]
    pairs = map_articles(left, right, "2024-03-01", {}, {}, ("l1", "l2"),
                         MapperParams(), FeatureMatchParams())
    assert pairs == []


def test_duplicate_stock_photo_keeps_higher_scoring_pair():
    rng = np.random.default_rng(21)
    tex = _texture(rng, 190)
    near = _perturbed(tex, FixtureSpec(scale=0.9, brightness=10, shift=4),
                      np.random.default_rng(1))
    far = _perturbed(tex, FixtureSpec(scale=0.5, brightness=40, shift=10),
                     np.random.default_rng(2))
    left = [_stub_article("L")]
    right = [_stub_article("R-near"), _stub_article("R-far")]
    key = ("image", 1, -1)
    pairs = map_articles(left, right, "2024-03-01",
                         {"L": [(key, tex)]},
                         {"R-near": [(key, near)], "R-far": [(key, far)]},
                         ("l1", "l2"), MapperParams(similarity_threshold=0.05),
                         FeatureMatchParams())
    assert len(pairs) == 1
    assert pairs[0].right.article_id == "R-near"


def test_one_to_one_and_threshold_monotonicity(small_bundle):
    ps = ingest(small_bundle)
    records = segment_all(ps)
    lang_l, lang_r = small_bundle.spec.languages
    pl = {p.page_id for p in ps.pages if p.language == lang_l}
    left = [r for r in records if r.page_id in pl]
    right = [r for r in records if r.page_id not in pl]
    li, ri = _article_images(left, ps), _article_images(right, ps)

    def pairs_at(threshold):
        return map_articles(left, right, small_bundle.spec.date, li, ri,
                            (lang_l, lang_r), MapperParams(similarity_threshold=threshold),
                            FeatureMatchParams())

    low = pairs_at(0.1)
    ids = [(p.left.article_id, p.right.article_id) for p in low]
    assert len({l for l, _ in ids}) == len(ids)
    assert len({r for _, r in ids}) == len(ids)
    high = pairs_at(0.4)
    assert {(p.left.article_id, p.right.article_id) for p in high} <= set(ids)
    again = pairs_at(0.1)
    assert [(p.left.article_id, p.right.article_id, p.pair_score) for p in again] == \
        [(p.left.article_id, p.right.article_id, p.pair_score) for p in low]


def _exhaustive_best_assignment(matrix, threshold):
    """Independent oracle: best one-to-one assignment by total score."""
    n_l, n_r = len(matrix), len(matrix[0]) if matrix else 0
    best_total, best_set = -1.0, set()
    rights = list(range(n_r))
    for k in range(0, min(n_l, n_r) + 1):
        for lefts in itertools.combinations(range(n_l), k):
            for perm in itertools.permutations(rights, k):
                if any(matrix[i][j] < threshold for i, j in zip(lefts, perm)):
                    continue
                total = sum(matrix[i][j] for i, j in zip(lefts, perm))
                if total > best_total:
                    best_total = total
                    best_set = set(zip(lefts, perm))
    return best_total, best_set


def test_greedy_matches_exhaustive_oracle_on_separated_matrices():
    # fixture-like separation: true pairs high, others low; on such
    # matrices greedy and the optimal assignment agree (design decision)
    rng = np.random.default_rng(3)
    for trial in range(30):
        n = int(rng.integers(2, 6))
        m = int(rng.integers(2, 6))
        k = min(n, m)
        matrix = (rng.uniform(0.0, 0.15, size=(n, m))).tolist()
        perm = rng.permutation(m)[:k]
        for i in range(k):
            matrix[i][perm[i]] = float(rng.uniform(0.5, 1.0))
        threshold = 0.25
        scores = {(i, j): matrix[i][j] for i in range(n) for j in range(m)}
        greedy = {(i, j) for i, j, _ in
                  sentence_map.greedy_one_to_one(scores, threshold)}
        _, oracle = _exhaustive_best_assignment(matrix, threshold)
        assert greedy == oracle


# --- embedded article mapping ---------------------------------------------------

def _delta_from_matrix(matrix, left_heads, right_heads):
    def delta(a, b):
        return matrix[left_heads.index(a)][right_heads.index(b)]
    return delta


def _child(article_id, parent, headline_text):
    roi = Roi(RoiKind.HEADLINE, Box(0, 0, 100, 20), seq_index=2, sub_index=0,
              embed_level=1)
    rec = ArticleRecord(article_id=article_id, page_id="p", rois=[roi],
                        parent=parent, embed_level=1, embed_ordinal=1)
    rec.texts[roi.key] = headline_text
    return rec


def _parent_pair():
    return ArticlePair(left=_stub_article("L", "pl"), right=_stub_article("R", "pr"),
                       date="2024-03-01", left_language="l1", right_language="l2")


def test_map_embedded_on_fixture_translations(bundle_factory):
    bundle = bundle_factory(13, articles_left=4, articles_right=4, shared_images=4,
                            embedded_prob=1.0)
    ps = ingest(bundle)
    records = segment_all(ps)
    extract_all(records, ps, mock_engines(bundle))
    lang_l, lang_r = bundle.spec.languages
    pl = {p.page_id for p in ps.pages if p.language == lang_l}
    left = [r for r in records if r.page_id in pl]
    right = [r for r in records if r.page_id not in pl]
    pairs = map_articles(left, right, bundle.spec.date,
                         _article_images(left, ps), _article_images(right, ps),
                         (lang_l, lang_r), MapperParams(), FeatureMatchParams())
    lexicons = {lang: load_lexicon(p, lang) for lang, p in bundle.lexicons.items()}
    provider = HashEmbeddingProvider(lexicons=lexicons)

    def delta(a, b):
        va = provider.embed([a], language=lang_l)[0]
        vb = provider.embed([b], language=lang_r)[0]
        return float(va @ vb)

    total = []
    for pair in pairs:
        kids_l = [r for r in left if r.parent == pair.left.article_id]
        kids_r = [r for r in right if r.parent == pair.right.article_id]
        total.extend(map_embedded(pair, kids_l, kids_r, delta, threshold=0.6))
    assert len(total) == len(bundle.embedded_pairs)
    for ep in total:
        assert ep.origin == "headline_pivot"
        assert ep.parent_pair is not None


def test_map_embedded_empty_side():
    pair = _parent_pair()
    kids_l = [_child("cl", "L", "some headline")]
    assert map_embedded(pair, kids_l, [], lambda a, b: 1.0) == []


def test_map_embedded_missing_headline_skipped(caplog):
    pair = _parent_pair()
    no_head = ArticleRecord(article_id="cl", page_id="p",
                            rois=[Roi(RoiKind.CONTENT, Box(0, 0, 10, 10), seq_index=2,
                                      embed_level=1)],
                            parent="L", embed_level=1, embed_ordinal=1)
    kids_r = [_child("cr", "R", "head")]
    assert map_embedded(pair, [no_head], kids_r, lambda a, b: 1.0) == []


def test_map_embedded_crossed_matrix_greedy():
    # hand-built 2x2: (l0,r1)=0.9 wins first, leaving (l1,r0)=0.7
    left_heads = ["lh0", "lh1"]
    right_heads = ["rh0", "rh1"]
    matrix = [[0.8, 0.9], [0.7, 0.85]]
    pair = _parent_pair()
    kids_l = [_child("cl0", "L", "lh0"), _child("cl1", "L", "lh1")]
    kids_r = [_child("cr0", "R", "rh0"), _child("cr1", "R", "rh1")]
    out = map_embedded(pair, kids_l, kids_r,
                       _delta_from_matrix(matrix, left_heads, right_heads),
                       threshold=0.6)
    got = {(p.left.article_id, p.right.article_id, round(p.pair_score, 2)) for p in out}
    assert got == {("cl0", "cr1", 0.9), ("cl1", "cr0", 0.7)}
