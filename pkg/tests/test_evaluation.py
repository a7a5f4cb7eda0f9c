import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from corpus_forge.evaluation import (EvalError, aggregate_sts, bleu, build_corpus,
                                     load_corpus_tsv, sample_sts, save_corpus_tsv,
                                     save_sheet_csv)
from corpus_forge.layout import RoiKind
from corpus_forge.sentence_map import Provenance, Sentence, SentencePair, Strategy


def make_pair(left, right, strategy=Strategy.LAS, score=0.9, article_len=3,
              roi="content", date="2024-03-01"):
    lt = Sentence(text=left, index=0, word_count=len(left.split()), language="l1")
    rt = Sentence(text=right, index=0, word_count=len(right.split()), language="l2")
    prov = Provenance(date=date, page_ids=("pl", "pr"), article_ids=("al", "ar"),
                      roi_kind=roi, article_len=article_len)
    return SentencePair(left=lt, right=rt, score=score, strategy=strategy,
                        provenance=prov)


# --- corpus -------------------------------------------------------------------

def test_dedup_exact_duplicates():
    pairs = [make_pair("a b", "x y"), make_pair("a b", "x y"), make_pair("c d", "z w")]
    corpus = build_corpus(pairs)
    assert len(corpus.pairs) == 2
    assert corpus.stats["total"] == 2


def test_empty_corpus():
    corpus = build_corpus([])
    assert corpus.pairs == ()
    assert corpus.stats["total"] == 0
    assert corpus.stats["by_strategy"] == {}


def test_dedup_idempotence():
    pairs = [make_pair("a b", "x y"), make_pair("a b", "x y"),
             make_pair("e f", "u v", strategy=Strategy.LO, score=0.7)]
    once = build_corpus(pairs)
    twice = build_corpus(once.pairs)
    assert twice == once
    assert [p.pair_id for p in twice.pairs] == [p.pair_id for p in once.pairs]


def test_normalization_collapses_whitespace_and_nfc():
    pairs = [make_pair("a  b\t c", "x é y"),
             make_pair("a b c", "x é y")]
    corpus = build_corpus(pairs)
    assert len(corpus.pairs) == 1


def test_tsv_roundtrip(tmp_path):
    pairs = [make_pair("a b", "x y"), make_pair("cap text", "cap right", roi="caption")]
    corpus = build_corpus(pairs)
    main = tmp_path / "corpus.tsv"
    caps = tmp_path / "captions.tsv"
    save_corpus_tsv(corpus, main, caption_split=caps)
    loaded = load_corpus_tsv(main)
    assert len(loaded.pairs) == 1          # caption row went to the held-out split
    assert loaded.pairs[0].left_text == "a b"
    assert caps.read_text(encoding="utf-8").count("\n") == 1


# --- sampling -----------------------------------------------------------------

def _length_spread_corpus():
    pairs = []
    for i in range(30):
        n_words = 5 if i < 10 else (15 if i < 20 else 22)
        left = " ".join(f"w{i}t{k}" for k in range(n_words))
        pairs.append(make_pair(left, f"right {i}"))
    return build_corpus(pairs)


def test_sample_is_stratified_and_deterministic():
    corpus = _length_spread_corpus()
    sheet1 = sample_sts(corpus, 5, seed=42)
    sheet2 = sample_sts(corpus, 5, seed=42)
    assert sheet1.rows == sheet2.rows
    assert sheet1.stratum_counts == {"1-10": 5, "11-19": 5, "20+": 5}
    assert not sheet1.shortfalls
    sheet3 = sample_sts(corpus, 5, seed=43)
    assert sheet3.rows != sheet1.rows


def test_sample_shortfall_recorded():
    corpus = _length_spread_corpus()
    sheet = sample_sts(corpus, 15, seed=1)
    assert sheet.stratum_counts == {"1-10": 10, "11-19": 10, "20+": 10}
    assert sheet.shortfalls == {"1-10": 5, "11-19": 5, "20+": 5}


def test_sample_empty_corpus_rejected():
    with pytest.raises(EvalError):
        sample_sts(build_corpus([]), 5)


def test_sheet_csv_format(tmp_path):
    corpus = _length_spread_corpus()
    sheet = sample_sts(corpus, 2, seed=0)
    out = tmp_path / "sheet.csv"
    save_sheet_csv(sheet, out)
    lines = out.read_text(encoding="utf-8").strip().splitlines()
    assert lines[0] == "pair_id,left_text,right_text,score"
    assert len(lines) == 1 + len(sheet.rows)


# --- aggregation -----------------------------------------------------------------

def test_aggregate_paper_shaped_mean():
    # ten pairs scored {4,4,3,4,4,3,4,4,4,3}: mean 3.7, strictly-above-3 0.7
    pairs = [make_pair(f"left {i} words", f"right {i}") for i in range(10)]
    corpus = build_corpus(pairs)
    scores = [4, 4, 3, 4, 4, 3, 4, 4, 4, 3]
    anns = [{"pair_id": p.pair_id, "score": str(s), "annotator_id": "a1"}
            for p, s in zip(corpus.pairs, scores)]
    report = aggregate_sts(corpus, anns)
    assert report.mean_sts == pytest.approx(3.7, abs=1e-9)
    assert report.frac_above_3 == pytest.approx(0.7, abs=1e-12)
    assert report.n_pairs == 10


def test_aggregate_all_fives():
    pairs = [make_pair(f"l {i}", f"r {i}") for i in range(4)]
    corpus = build_corpus(pairs)
    anns = [{"pair_id": p.pair_id, "score": "5", "annotator_id": "a"} for p in corpus.pairs]
    report = aggregate_sts(corpus, anns)
    assert report.mean_sts == 5.0
    assert report.frac_above_3 == 1.0


def test_aggregate_averages_annotators_first():
    pairs = [make_pair("only left", "only right")]
    corpus = build_corpus(pairs)
    pid = corpus.pairs[0].pair_id
    anns = [{"pair_id": pid, "score": "2", "annotator_id": "a"},
            {"pair_id": pid, "score": "5", "annotator_id": "b"}]
    report = aggregate_sts(corpus, anns)
    assert report.mean_sts == pytest.approx(3.5)
    assert report.frac_above_3 == pytest.approx(1.0)  # 3.5 > 3


def test_aggregate_bad_rows_reported_not_fatal():
    pairs = [make_pair("l a", "r a"), make_pair("l b", "r b")]
    corpus = build_corpus(pairs)
    anns = [{"pair_id": corpus.pairs[0].pair_id, "score": "4", "annotator_id": "a"},
            {"pair_id": "nonexistent", "score": "4", "annotator_id": "a"},
            {"pair_id": corpus.pairs[1].pair_id, "score": "9", "annotator_id": "a"},
            {"pair_id": corpus.pairs[1].pair_id, "score": "x", "annotator_id": "a"}]
    report = aggregate_sts(corpus, anns)
    assert report.n_pairs == 1
    assert len(report.row_errors) == 3


def _bucket_fixture_corpus_and_annotations():
    """Cells solving both Table-1 marginals exactly, worked out by hand.

    LAS: counts [[4,3,3],[3,4,3],[3,3,4]] with fours [[4,2,2],[2,3,2],[2,3,3]]
         -> sentence bins 3.8/3.7/3.8, article bins 3.8/3.8/3.7
    LO:  counts [[1,4,5],[3,4,3],[1,2,2]] with per-cell scores below
         -> sentence bins 2.9/3.0/2.6, article bins 2.8/2.9/2.9
    """
    sent_words = [5, 15, 22]          # bins 1-10, 11-19, 20+
    art_lens = [3, 10, 20]            # bins 1-5, 6-15, 16+

    las_counts = [[4, 3, 3], [3, 4, 3], [3, 3, 4]]
    las_fours = [[4, 2, 2], [2, 3, 2], [2, 3, 3]]
    lo_scores = {
        (0, 0): [3], (0, 1): [3, 3, 3, 3], (0, 2): [3, 3, 3, 3, 2],
        (1, 0): [3, 3, 3], (1, 1): [3, 3, 3, 3], (1, 2): [3, 3, 3],
        (2, 0): [2], (2, 1): [3, 2], (2, 2): [3, 3],
    }

    pairs = []
    scores = []
    uid = 0
    for i in range(3):
        for j in range(3):
            cell_scores = [4] * las_fours[i][j] + [3] * (las_counts[i][j] - las_fours[i][j])
            for s in cell_scores:
                left = " ".join(f"las{uid}w{k}" for k in range(sent_words[i]))
                pairs.append(make_pair(left, f"las right {uid}",
                                       strategy=Strategy.LAS, article_len=art_lens[j]))
                scores.append(s)
                uid += 1
            for s in lo_scores[(i, j)]:
                left = " ".join(f"lo{uid}w{k}" for k in range(sent_words[i]))
                pairs.append(make_pair(left, f"lo right {uid}",
                                       strategy=Strategy.LO, score=0.7,
                                       article_len=art_lens[j]))
                scores.append(s)
                uid += 1
    corpus = build_corpus(pairs)
    assert len(corpus.pairs) == len(pairs)
    by_key = {(p.left_text, p.right_text): p.pair_id for p in corpus.pairs}
    anns = []
    for pair, s in zip(pairs, scores):
        pid = by_key[(pair.left.text, pair.right.text)]
        anns.append({"pair_id": pid, "score": str(s), "annotator_id": "a1"})
    return corpus, anns


def test_bucket_matrix_reproduces_table_values():
    corpus, anns = _bucket_fixture_corpus_and_annotations()
    report = aggregate_sts(corpus, anns)
    assert report.buckets["las"]["sentence_bins"] == [3.8, 3.7, 3.8]
    assert report.buckets["las"]["article_bins"] == [3.8, 3.8, 3.7]
    assert report.buckets["lo"]["sentence_bins"] == [2.9, 3.0, 2.6]
    assert report.buckets["lo"]["article_bins"] == [2.8, 2.9, 2.9]


# --- BLEU ------------------------------------------------------------------------

def test_bleu_perfect_match_is_exactly_100():
    hyps = ["the cat sat on the mat", "another example sentence here"]
    assert bleu(hyps, [[h] for h in hyps]) == 100.0


def test_bleu_null_overlap_near_zero():
    hyps = ["aaa bbb ccc ddd eee fff ggg hhh iii jjj"] * 3
    refs = [["xxx yyy zzz www vvv uuu ttt sss rrr qqq"]] * 3
    score = bleu(hyps, refs)
    # derived by hand: p_n = 0.1/total_n over totals 30/27/24/21
    expected = 100.0 * (0.1 ** 4 / (30 * 27 * 24 * 21)) ** 0.25
    assert score == pytest.approx(expected, abs=1e-9)
    assert score < 0.5


def test_bleu_hand_oracle_short_hypothesis():
    # hyp "the cat sat" vs ref "the cat sat down", derived by hand from the
    # definition: p1=3/3, p2=2/2, p3=1/1; order 4 has no hypothesis 4-grams
    # so it is excluded; BP=exp(1-4/3).
    expected = 100.0 * math.exp(1.0 - 4.0 / 3.0) * 1.0
    got = bleu(["the cat sat"], [["the cat sat down"]])
    assert got == pytest.approx(expected, abs=1e-9)
    assert got == pytest.approx(71.65313106, abs=1e-6)


def test_bleu_multi_reference_uses_best_clip_and_closest_length():
    hyp = ["the cat"]
    refs = [["the cat sat", "a cat"]]
    # p1 = 2/2, p2 = 1/1; BP uses the closest reference length (2) -> 1.0
    assert bleu(hyp, refs) == pytest.approx(100.0, abs=1e-9)
    # with only the longer reference the brevity penalty kicks in
    assert bleu(hyp, [["the cat sat"]]) == \
        pytest.approx(100.0 * math.exp(1.0 - 3.0 / 2.0), abs=1e-9)


def test_bleu_reordering_invariance():
    hyps = ["a b c", "d e f g", "h i"]
    refs = [["a b c x"], ["d e f"], ["h i j"]]
    base = bleu(hyps, refs)
    perm = [2, 0, 1]
    assert bleu([hyps[i] for i in perm], [refs[i] for i in perm]) == \
        pytest.approx(base, abs=1e-12)


def test_bleu_empty_hypotheses_rejected():
    with pytest.raises(EvalError):
        bleu([], [])


def test_bleu_mismatched_lengths_rejected():
    with pytest.raises(EvalError):
        bleu(["a"], [["a"], ["b"]])


@settings(max_examples=60, deadline=None)
@given(st.lists(st.text(alphabet="abcde ", min_size=1, max_size=20), min_size=1,
                max_size=5))
def test_bleu_self_is_100_property(lines):
    lines = [ln if ln.split() else "x" for ln in lines]
    assert bleu(lines, [[ln] for ln in lines]) == 100.0
