"""Corpus assembly and evaluation tooling.

Builds the deduplicated bilingual corpus with provenance, draws
stratified STS annotation samples, aggregates imported annotation sheets
into the bucket report (mean STS by sentence-length and article-length
bins, per strategy), and computes corpus-level BLEU for the downstream
MT check.
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import math
import random
import unicodedata
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

from .sentence_map import SentencePair, tokenize

logger = logging.getLogger(__name__)

SENTENCE_BINS = ((1, 10), (11, 19), (20, None))
ARTICLE_BINS = ((1, 5), (6, 15), (16, None))


class EvalError(Exception):
    pass


def _clean(text: str) -> str:
    return " ".join(unicodedata.normalize("NFC", text).split())


@dataclass(frozen=True)
class CorpusPair:
    pair_id: str
    left_text: str
    right_text: str
    score: float
    strategy: str
    provenance: dict = field(compare=False)

    @property
    def left_words(self) -> int:
        return len(tokenize(self.left_text))

    @property
    def article_len(self) -> int:
        return int(self.provenance.get("article_len", 0))

    @property
    def roi_kind(self) -> str:
        return self.provenance.get("roi", "content")


@dataclass(frozen=True)
class BilingualCorpus:
    pairs: tuple[CorpusPair, ...]
    languages: tuple[str, str]
    stats: dict = field(compare=False)

    def by_id(self, pair_id: str) -> CorpusPair:
        for p in self.pairs:
            if p.pair_id == pair_id:
                return p
        raise KeyError(pair_id)


def _pair_id(left: str, right: str, strategy: str, provenance: dict) -> str:
    raw = json.dumps([left, right, strategy, provenance], sort_keys=True, ensure_ascii=False)
    return hashlib.sha256(raw.encode()).hexdigest()[:16]


def _corpus_stats(pairs: Sequence[CorpusPair]) -> dict:
    by_strategy = Counter(p.strategy for p in pairs)
    by_roi = Counter(p.roi_kind for p in pairs)
    return {"total": len(pairs),
            "by_strategy": dict(sorted(by_strategy.items())),
            "by_roi": dict(sorted(by_roi.items()))}


def build_corpus(pairs: Iterable[SentencePair | CorpusPair],
                 languages: tuple[str, str] = ("l1", "l2")) -> BilingualCorpus:
    """Normalize, dedup exact text pairs, order deterministically.

    Accepts SentencePair objects or existing corpus rows, so rebuilding a
    corpus from its own pairs is the identity (dedup idempotence).
    """
    rows: list[CorpusPair] = []
    for sp in pairs:
        if isinstance(sp, CorpusPair):
            prov = sp.provenance
            left, right = _clean(sp.left_text), _clean(sp.right_text)
            strategy, score = sp.strategy, sp.score
        else:
            prov = sp.provenance.as_dict()
            left, right = _clean(sp.left.text), _clean(sp.right.text)
            strategy, score = sp.strategy.value, float(sp.score)
        if not left or not right:
            continue
        rows.append(CorpusPair(
            pair_id=_pair_id(left, right, strategy, prov),
            left_text=left, right_text=right,
            score=score, strategy=strategy, provenance=prov))

    def sort_key(p: CorpusPair):
        prov = p.provenance
        return (prov.get("date", ""), tuple(prov.get("page_ids", [])),
                tuple(prov.get("article_ids", [])), prov.get("roi", ""),
                p.left_text, p.right_text)

    rows.sort(key=sort_key)
    seen: set[tuple[str, str]] = set()
    unique: list[CorpusPair] = []
    for p in rows:
        key = (p.left_text, p.right_text)
        if key in seen:
            continue
        seen.add(key)
        unique.append(p)
    return BilingualCorpus(pairs=tuple(unique), languages=languages,
                           stats=_corpus_stats(unique))


# --- corpus files ------------------------------------------------------------

def save_corpus_tsv(corpus: BilingualCorpus, path: str | Path,
                    caption_split: str | Path | None = None):
    """TSV: left<TAB>right<TAB>score<TAB>strategy<TAB>provenance_json.

    Caption pairs go to the held-out split file when one is given,
    otherwise they stay inline.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    main_lines, caption_lines = [], []
    for p in corpus.pairs:
        prov = json.dumps(p.provenance, sort_keys=True, ensure_ascii=False)
        line = f"{p.left_text}\t{p.right_text}\t{p.score:.6f}\t{p.strategy}\t{prov}"
        if caption_split is not None and p.roi_kind == "caption":
            caption_lines.append(line)
        else:
            main_lines.append(line)
    path.write_text("\n".join(main_lines) + ("\n" if main_lines else ""), encoding="utf-8")
    if caption_split is not None:
        cap = Path(caption_split)
        cap.write_text("\n".join(caption_lines) + ("\n" if caption_lines else ""),
                       encoding="utf-8")


def save_corpus_jsonl(corpus: BilingualCorpus, path: str | Path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as fh:
        for p in corpus.pairs:
            fh.write(json.dumps({
                "pair_id": p.pair_id, "left": p.left_text, "right": p.right_text,
                "score": p.score, "strategy": p.strategy, "provenance": p.provenance,
            }, sort_keys=True, ensure_ascii=False) + "\n")


def load_corpus_tsv(path: str | Path,
                    languages: tuple[str, str] = ("l1", "l2")) -> BilingualCorpus:
    rows = []
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != 5:
            raise EvalError(f"{path}:{lineno}: expected 5 tab-separated fields")
        left, right, score, strategy, prov_json = parts
        prov = json.loads(prov_json)
        rows.append(CorpusPair(
            pair_id=_pair_id(left, right, strategy, prov),
            left_text=left, right_text=right, score=float(score),
            strategy=strategy, provenance=prov))
    return BilingualCorpus(pairs=tuple(rows), languages=languages,
                           stats=_corpus_stats(rows))


# --- STS sampling ---------------------------------------------------------------

@dataclass(frozen=True)
class AnnotationSheet:
    rows: tuple[tuple[str, str, str], ...]   # (pair_id, left, right)
    stratum_counts: dict = field(compare=False)
    shortfalls: dict = field(compare=False)


def _bin_index(value: int, bins) -> int | None:
    for i, (lo, hi) in enumerate(bins):
        if value >= lo and (hi is None or value <= hi):
            return i
    return None


def _bin_label(bins, i: int) -> str:
    lo, hi = bins[i]
    return f"{lo}-{hi}" if hi is not None else f"{lo}+"


def sample_sts(corpus: BilingualCorpus, n_per_stratum: int,
               strata=SENTENCE_BINS, seed: int = 0) -> AnnotationSheet:
    """Stratified sample by sentence-length bins, shuffled with the seed.

    A stratum smaller than the request contributes everything it has and
    records the shortfall instead of failing.
    """
    if not corpus.pairs:
        raise EvalError("cannot sample from an empty corpus")
    rng = random.Random(seed)
    buckets: dict[int, list[CorpusPair]] = {i: [] for i in range(len(strata))}
    for p in corpus.pairs:
        b = _bin_index(p.left_words, strata)
        if b is not None:
            buckets[b].append(p)

    chosen: list[CorpusPair] = []
    counts, shortfalls = {}, {}
    for i in range(len(strata)):
        label = _bin_label(strata, i)
        pool = buckets[i]
        if len(pool) <= n_per_stratum:
            take = list(pool)
            if len(pool) < n_per_stratum:
                shortfalls[label] = n_per_stratum - len(pool)
        else:
            take = rng.sample(pool, n_per_stratum)
        counts[label] = len(take)
        chosen.extend(take)
    rng.shuffle(chosen)
    return AnnotationSheet(
        rows=tuple((p.pair_id, p.left_text, p.right_text) for p in chosen),
        stratum_counts=counts, shortfalls=shortfalls)


def save_sheet_csv(sheet: AnnotationSheet, path: str | Path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["pair_id", "left_text", "right_text", "score"])
        for pair_id, left, right in sheet.rows:
            writer.writerow([pair_id, left, right, ""])


# --- STS aggregation --------------------------------------------------------------

@dataclass(frozen=True)
class StsAnnotation:
    pair_id: str
    score: int
    annotator_id: str

    def __post_init__(self):
        if self.score not in (0, 1, 2, 3, 4, 5):
            raise EvalError(f"STS score must be an integer 0..5, got {self.score}")


@dataclass(frozen=True)
class StsReport:
    mean_sts: float
    frac_above_3: float
    n_pairs: int
    buckets: dict = field(compare=False)
    row_errors: tuple[str, ...] = ()


def load_annotations_csv(path: str | Path, annotator_id: str | None = None) -> list[dict]:
    """Read one filled annotation sheet as raw rows; blank scores are skipped.

    Validation happens in aggregate_sts so bad rows become per-row
    errors instead of a load failure.
    """
    path = Path(path)
    annotator = annotator_id or path.stem
    out = []
    with path.open("r", encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        for row in reader:
            raw = (row.get("score") or "").strip()
            if not raw:
                continue
            out.append({"pair_id": (row.get("pair_id") or "").strip(),
                        "score": raw, "annotator_id": annotator})
    return out


def aggregate_sts(corpus: BilingualCorpus,
                  annotations: Sequence[StsAnnotation | dict]) -> StsReport:
    """Mean STS, strict fraction above 3, and the bucket matrix.

    Multiple annotators for one pair are averaged first; rows with an
    unresolvable pair_id or an out-of-range score are skipped and
    reported.
    """
    per_pair: dict[str, list[int]] = {}
    errors: list[str] = []
    known = {p.pair_id: p for p in corpus.pairs}
    for ann in annotations:
        if isinstance(ann, dict):
            pair_id = ann.get("pair_id", "")
            raw = str(ann.get("score", "")).strip()
            annotator = ann.get("annotator_id", "?")
            try:
                score = int(raw)
            except ValueError:
                errors.append(f"{annotator}: non-integer score {raw!r} for {pair_id}")
                continue
            if score not in (0, 1, 2, 3, 4, 5):
                errors.append(f"{annotator}: score {score} outside 0..5 for {pair_id}")
                continue
            ann = StsAnnotation(pair_id=pair_id, score=score, annotator_id=annotator)
        meta = known.get(ann.pair_id)
        if meta is None:
            errors.append(f"unknown pair_id {ann.pair_id!r}")
            continue
        per_pair.setdefault(ann.pair_id, []).append(ann.score)

    if not per_pair:
        raise EvalError("no resolvable annotations")

    pair_means = {pid: sum(v) / len(v) for pid, v in per_pair.items()}
    values = list(pair_means.values())
    mean = sum(values) / len(values)
    frac = sum(1 for v in values if v > 3) / len(values)

    buckets: dict[str, dict[str, list]] = {}
    acc: dict[tuple[str, str, int], list[float]] = {}
    for pid, value in pair_means.items():
        meta = known[pid]
        sbin = _bin_index(meta.left_words, SENTENCE_BINS)
        abin = _bin_index(meta.article_len, ARTICLE_BINS)
        if sbin is not None:
            acc.setdefault((meta.strategy, "sentence", sbin), []).append(value)
        if abin is not None:
            acc.setdefault((meta.strategy, "article", abin), []).append(value)
    strategies = sorted({k[0] for k in acc})
    for strat in strategies:
        buckets[strat] = {
            "sentence_bins": [
                (round(sum(v) / len(v), 10) if (v := acc.get((strat, "sentence", i))) else None)
                for i in range(len(SENTENCE_BINS))],
            "article_bins": [
                (round(sum(v) / len(v), 10) if (v := acc.get((strat, "article", i))) else None)
                for i in range(len(ARTICLE_BINS))],
        }
    return StsReport(mean_sts=mean, frac_above_3=frac, n_pairs=len(values),
                     buckets=buckets, row_errors=tuple(errors))


# --- BLEU ---------------------------------------------------------------------------

BLEU_EPSILON = 0.1


def _ngrams(tokens: list[str], n: int) -> Counter:
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def bleu(hypotheses: Sequence[str], references: Sequence[Sequence[str]],
         max_n: int = 4) -> float:
    """Corpus-level BLEU in [0, 100].

    Geometric mean of modified n-gram precisions up to ``max_n`` with the
    brevity penalty; zero matched counts are smoothed to 0.1 on the
    numerator. Orders where the whole hypothesis stream has no n-grams at
    all are excluded from the mean (otherwise a short verbatim match
    could not score exactly 100). Whitespace tokenization.
    """
    if not hypotheses:
        raise EvalError("empty hypothesis list")
    if len(hypotheses) != len(references):
        raise EvalError(f"{len(hypotheses)} hypotheses vs {len(references)} reference rows")
    if max_n < 1:
        raise EvalError("max_n must be >= 1")

    matched = [0] * max_n
    total = [0] * max_n
    hyp_len = 0
    ref_len = 0
    for hyp, refs in zip(hypotheses, references):
        if isinstance(refs, str):
            refs = [refs]
        if not refs:
            raise EvalError("every hypothesis needs at least one reference")
        hyp_tokens = hyp.split()
        ref_tokens = [r.split() for r in refs]
        hyp_len += len(hyp_tokens)
        # closest reference length; ties go to the shorter
        ref_len += min((abs(len(r) - len(hyp_tokens)), len(r)) for r in ref_tokens)[1]
        for n in range(1, max_n + 1):
            hyp_counts = _ngrams(hyp_tokens, n)
            if not hyp_counts:
                continue
            max_ref = Counter()
            for r in ref_tokens:
                for gram, count in _ngrams(r, n).items():
                    if count > max_ref[gram]:
                        max_ref[gram] = count
            total[n - 1] += sum(hyp_counts.values())
            matched[n - 1] += sum(min(c, max_ref[g]) for g, c in hyp_counts.items())

    log_sum = 0.0
    effective = 0
    for n in range(max_n):
        if total[n] == 0:
            continue
        numer = matched[n] if matched[n] > 0 else BLEU_EPSILON
        log_sum += math.log(numer / total[n])
        effective += 1
    if hyp_len == 0 or effective == 0:
        return 0.0
    geo_mean = math.exp(log_sum / effective)
    bp = 1.0 if hyp_len >= ref_len else math.exp(1.0 - ref_len / hyp_len)
    return 100.0 * bp * geo_mean
