"""align_sentences over whole article pairs: streams, thresholds, edges."""

import pytest

from corpus_forge.article_map import ArticlePair
from corpus_forge.embedding import HashEmbeddingProvider, PivotLexicon
from corpus_forge.layout import ArticleRecord, Box, Roi, RoiKind
from corpus_forge.sentence_map import (AlignParams, AlignmentError, Strategy,
                                       align_sentences)


def article(article_id, page_id, headline=None, content=None, caption=None,
            with_image=False):
    rois, texts = [], {}
    y = 10
    if headline is not None:
        roi = Roi(RoiKind.HEADLINE, Box(10, y, 200, 20), seq_index=1, sub_index=0)
        rois.append(roi)
        texts[roi.key] = headline
        y += 30
    if with_image:
        rois.append(Roi(RoiKind.IMAGE, Box(10, y, 100, 100), seq_index=1))
        y += 110
    if caption is not None:
        roi = Roi(RoiKind.CAPTION, Box(10, y, 100, 12), seq_index=1)
        rois.append(roi)
        texts[roi.key] = caption
        y += 20
    if content is not None:
        roi = Roi(RoiKind.CONTENT, Box(10, y, 200, 100), seq_index=1)
        rois.append(roi)
        texts[roi.key] = content
    rec = ArticleRecord(article_id=article_id, page_id=page_id, rois=rois)
    rec.texts = texts
    return rec


def make_pair(left, right):
    return ArticlePair(left=left, right=right, date="2024-03-01",
                       left_language="l1", right_language="l2")


LEX = {
    "l1": PivotLexicon("l1", {"ghar": frozenset({"house"}), "pani": frozenset({"water"}),
                              "mota": frozenset({"big"}), "zad": frozenset({"tree"}),
                              "heda": frozenset({"title"})}),
    "l2": PivotLexicon("l2", {"haus": frozenset({"house"}), "wasser": frozenset({"water"}),
                              "gross": frozenset({"big"}), "baum": frozenset({"tree"}),
                              "titel": frozenset({"title"})}),
}


def test_las_alignment_respects_streams_and_threshold():
    provider = HashEmbeddingProvider(lexicons=LEX)
    left = article("al", "pl", headline="heda ghar", content="ghar pani mota। zad pani।",
                   caption="pani zad", with_image=True)
    right = article("ar", "pr", headline="titel haus", content="haus wasser gross. baum wasser.",
                    caption="wasser baum", with_image=True)
    pairs = align_sentences(make_pair(left, right), Strategy.LAS, AlignParams(),
                            provider=provider)
    by_kind = {}
    for p in pairs:
        by_kind.setdefault(p.provenance.roi_kind, []).append(p)
        assert p.left.roi_kind == p.right.roi_kind  # never crosses streams
        assert p.provenance.article_ids == ("al", "ar")
        assert p.provenance.article_len == 4  # headline + 2 content + caption
    assert len(by_kind["headline"]) == 1
    assert len(by_kind["content"]) == 2
    assert len(by_kind["caption"]) == 1
    assert [(p.left.index, p.right.index) for p in by_kind["content"]] == [(0, 0), (1, 1)]


def test_empty_content_side_yields_nothing_for_that_stream():
    provider = HashEmbeddingProvider(lexicons=LEX)
    left = article("al", "pl", headline="heda ghar", content="ghar pani।")
    right = article("ar", "pr", headline="titel haus")
    pairs = align_sentences(make_pair(left, right), Strategy.LAS, AlignParams(),
                            provider=provider)
    assert {p.provenance.roi_kind for p in pairs} == {"headline"}


def test_completely_empty_pair():
    provider = HashEmbeddingProvider(lexicons=LEX)
    left = article("al", "pl")
    right = article("ar", "pr", headline="titel haus")
    assert align_sentences(make_pair(left, right), Strategy.LAS, AlignParams(),
                           provider=provider) == []


def test_strategy_dependencies_enforced():
    pair = make_pair(article("al", "pl", content="ghar।"),
                     article("ar", "pr", content="haus."))
    with pytest.raises(AlignmentError, match="provider"):
        align_sentences(pair, Strategy.LAS, AlignParams())
    with pytest.raises(AlignmentError, match="lexicons"):
        align_sentences(pair, Strategy.LO, AlignParams())


def test_lo_alignment_over_articles():
    left = article("al", "pl", content="ghar pani। mota zad।")
    right = article("ar", "pr", content="haus wasser. gross baum.")
    pairs = align_sentences(make_pair(left, right), Strategy.LO, AlignParams(),
                            lexicons=(LEX["l1"], LEX["l2"]))
    assert [(p.left.index, p.right.index) for p in pairs] == [(0, 0), (1, 1)]
    for p in pairs:
        assert p.score == 1.0
        assert p.strategy is Strategy.LO


def test_one_to_one_across_duplicate_scores():
    provider = HashEmbeddingProvider(lexicons=LEX)
    left = article("al", "pl", content="ghar pani। ghar pani mota।")
    right = article("ar", "pr", content="haus wasser. haus wasser gross.")
    pairs = align_sentences(make_pair(left, right), Strategy.LAS, AlignParams(),
                            provider=provider)
    lefts = [p.left.index for p in pairs]
    rights = [p.right.index for p in pairs]
    assert len(lefts) == len(set(lefts))
    assert len(rights) == len(set(rights))


def test_threshold_monotonicity_over_articles():
    provider = HashEmbeddingProvider(lexicons=LEX)
    left = article("al", "pl", content="ghar pani। mota zad pani।")
    right = article("ar", "pr", content="haus wasser. gross baum wasser.")
    pair = make_pair(left, right)

    def keys(threshold):
        out = align_sentences(pair, Strategy.LAS, AlignParams(las_threshold=threshold),
                              provider=provider)
        return {(p.left.index, p.right.index) for p in out}

    assert keys(0.9) <= keys(0.5) <= keys(0.1)
