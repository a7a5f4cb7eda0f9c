"""Pipeline orchestration: configuration, staged execution, caching.

Stages run in order (ingest -> segment -> ocr -> map -> align -> corpus)
with per-stage caching keyed by input digests plus parameters, so an
unchanged rerun is all cache hits and a changed parameter invalidates
exactly the stages downstream of it. All stage outputs are immutable
files; the run report mirrors the corpus summary heads (mapped articles,
mapped sentences).
"""

from __future__ import annotations

import hashlib
import json
import logging
import shutil
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from . import article_map, evaluation, layout, ocr, pages, sentence_map
from .article_map import ArticlePair, MapperParams
from .embedding import PivotLexicon, load_lexicon, make_provider
from .features import FeatureMatchParams
from .layout import ArticleRecord, RoiKind, SegmentationParams
from .sentence_map import AlignParams, Provenance, Sentence, SentencePair, Strategy

logger = logging.getLogger(__name__)


class ConfigError(Exception):
    pass


class StageError(Exception):
    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"stage {stage!r} failed: {cause}")
        self.stage = stage
        self.cause = cause


@dataclass
class PipelineConfig:
    languages: tuple[str, str]
    manifest: Path
    cache_dir: Path
    workers: int = 1
    date: str | None = None
    annotations: Path | None = None
    seg_params: SegmentationParams = field(default_factory=SegmentationParams)
    engines: list[dict] = field(default_factory=list)
    feature_params: FeatureMatchParams = field(default_factory=FeatureMatchParams)
    mapper_params: MapperParams = field(default_factory=MapperParams)
    strategy: Strategy = Strategy.LAS
    align_params: AlignParams = field(default_factory=AlignParams)
    provider_spec: str = "builtin"
    lexicon_paths: dict[str, Path] = field(default_factory=dict)

    def validate(self):
        if len(set(self.languages)) != 2:
            raise ConfigError(f"exactly two distinct languages required, got {self.languages}")
        if not self.manifest.is_file():
            raise ConfigError(f"manifest not found: {self.manifest}")
        if self.annotations is not None and not self.annotations.is_file():
            raise ConfigError(f"annotations file not found: {self.annotations}")
        if not (0.0 <= self.mapper_params.similarity_threshold <= 1.0):
            raise ConfigError("article_mapper.similarity_threshold must be in [0,1]")
        if not (-1.0 <= self.align_params.las_threshold <= 1.0):
            raise ConfigError("sentence_mapper.las_threshold must be in [-1,1]")
        if not (0.0 <= self.align_params.lo_threshold <= 1.0):
            raise ConfigError("sentence_mapper.lo_threshold must be in [0,1]")
        if not (0.0 <= self.align_params.slas.threshold <= 1.0):
            raise ConfigError("sentence_mapper.slas threshold must be in [0,1]")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")
        for lang, path in self.lexicon_paths.items():
            if not Path(path).is_file():
                raise ConfigError(f"lexicon for {lang!r} not found: {path}")
        for eng in self.engines:
            if "command" not in eng and "mock_truth" not in eng:
                raise ConfigError(f"engine {eng.get('engine_id')} needs command or mock_truth")
            if "mock_truth" in eng and not Path(eng["mock_truth"]).is_file():
                raise ConfigError(f"mock truth sidecar not found: {eng['mock_truth']}")

    @classmethod
    def from_toml(cls, path: str | Path) -> "PipelineConfig":
        path = Path(path)
        try:
            raw = tomllib.loads(path.read_text(encoding="utf-8"))
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"{path}: bad TOML: {exc}") from exc
        base = path.parent

        def respath(p) -> Path:
            p = Path(p)
            return p if p.is_absolute() else base / p

        run = raw.get("run", {})
        langs = run.get("languages")
        if not langs or len(langs) != 2:
            raise ConfigError("[run].languages must list exactly two codes")
        ingest = raw.get("ingest", {})
        if "manifest" not in ingest:
            raise ConfigError("[ingest].manifest is required")
        seg_raw = dict(raw.get("segmentation", {}))
        annotations = seg_raw.pop("annotations", None)
        engines = list(raw.get("ocr", {}).get("engines", []))
        for eng in engines:
            if "mock_truth" in eng:
                eng["mock_truth"] = str(respath(eng["mock_truth"]))
        sm = dict(raw.get("sentence_mapper", {}))
        lex = sm.pop("lexicons", {})
        strategy = Strategy(sm.pop("strategy", "las"))
        provider_spec = sm.pop("provider", "builtin")
        cfg = cls(
            languages=(langs[0], langs[1]),
            manifest=respath(ingest["manifest"]),
            cache_dir=respath(run.get("cache_dir", ".cache")),
            workers=int(run.get("workers", 1)),
            date=run.get("date"),
            annotations=respath(annotations) if annotations else None,
            seg_params=SegmentationParams.from_dict(seg_raw),
            engines=engines,
            feature_params=FeatureMatchParams.from_dict(raw.get("feature_match", {})),
            mapper_params=MapperParams.from_dict(raw.get("article_mapper", {})),
            strategy=strategy,
            align_params=AlignParams.from_dict(sm),
            provider_spec=provider_spec,
            lexicon_paths={k: respath(v) for k, v in lex.items()},
        )
        cfg.validate()
        return cfg

    def engines_built(self) -> list[ocr.OcrEngineAdapter]:
        built = []
        for eng in self.engines:
            if "command" in eng:
                built.append(ocr.OcrEngineAdapter(
                    engine_id=eng["engine_id"], priority=int(eng["priority"]),
                    command=eng["command"]))
            else:
                truth = json.loads(Path(eng["mock_truth"]).read_text(encoding="utf-8"))
                built.append(ocr.make_mock_engine(
                    eng["engine_id"], int(eng["priority"]), truth,
                    corrupt_rate=float(eng.get("corrupt_rate", 0.0)),
                    seed=int(eng.get("seed", 0))))
        return built

    def lexicons_built(self) -> dict[str, PivotLexicon]:
        return {lang: load_lexicon(path, lang) for lang, path in self.lexicon_paths.items()}


@dataclass
class RunReport:
    stages: dict = field(default_factory=dict)
    counts: dict = field(default_factory=dict)
    outputs: dict = field(default_factory=dict)
    status: str = "ok"
    failed_stage: str | None = None

    def as_dict(self) -> dict:
        return {"status": self.status, "failed_stage": self.failed_stage,
                "stages": self.stages, "counts": self.counts, "outputs": self.outputs}


def _digest(*parts) -> str:
    h = hashlib.sha256()
    for part in parts:
        if isinstance(part, bytes):
            h.update(part)
        elif isinstance(part, Path):
            h.update(Path(part).read_bytes())
        else:
            h.update(json.dumps(part, sort_keys=True, default=str).encode())
        h.update(b"\x00")
    return h.hexdigest()


def _params_dict(obj) -> dict:
    from dataclasses import asdict, is_dataclass
    return asdict(obj) if is_dataclass(obj) else dict(obj)


class _Stages:
    """Cache-aware stage runner; each stage writes into its keyed directory."""

    def __init__(self, config: PipelineConfig, report: RunReport):
        self.config = config
        self.report = report
        self.cache_root = Path(config.cache_dir)
        self.cache_root.mkdir(parents=True, exist_ok=True)

    def run(self, name: str, key: str, builder) -> Path:
        stage_dir = self.cache_root / f"{name}-{key[:16]}"
        done = stage_dir / ".done"
        start = time.monotonic()
        if done.is_file():
            self.report.stages[name] = {"status": "ok", "cache_hit": True,
                                        "seconds": 0.0, "dir": str(stage_dir)}
            return stage_dir
        if stage_dir.exists():
            shutil.rmtree(stage_dir)
        stage_dir.mkdir(parents=True)
        try:
            builder(stage_dir)
        except Exception as exc:
            shutil.rmtree(stage_dir, ignore_errors=True)
            self.report.stages[name] = {"status": "failed", "cache_hit": False,
                                        "error": str(exc)}
            self.report.status = "failed"
            self.report.failed_stage = name
            raise StageError(name, exc) from exc
        done.write_text("ok", encoding="utf-8")
        self.report.stages[name] = {"status": "ok", "cache_hit": False,
                                    "seconds": round(time.monotonic() - start, 3),
                                    "dir": str(stage_dir)}
        return stage_dir


def _save_articles(records: list[ArticleRecord], path: Path):
    layout.save_annotations(records, path)


def _article_images(records: list[ArticleRecord], page_set) -> dict:
    out: dict[str, list] = {}
    for rec in records:
        page = page_set.page(rec.page_id)
        crops = []
        for roi in rec.rois_of(RoiKind.IMAGE):
            b = roi.box
            crops.append((roi.key, page.gray[b.y:b.y2, b.x:b.x2]))
        if crops:
            out[rec.article_id] = crops
    return out


def _pairs_to_jsonl(pairs: list[ArticlePair], path: Path):
    with path.open("w", encoding="utf-8") as fh:
        for p in pairs:
            fh.write(json.dumps({
                "left": layout.articles_to_json([p.left])[0],
                "right": layout.articles_to_json([p.right])[0],
                "date": p.date,
                "left_language": p.left_language,
                "right_language": p.right_language,
                "image_evidence": [[list(l), list(r), s] for l, r, s in p.image_evidence],
                "pair_score": p.pair_score,
                "origin": p.origin,
                "parent_pair": list(p.parent_pair) if p.parent_pair else None,
            }, sort_keys=True, ensure_ascii=False) + "\n")


def _record_from_json(d: dict) -> ArticleRecord:
    recs = _records_from_json([d])
    return recs[0]


def _records_from_json(dicts: list[dict]) -> list[ArticleRecord]:
    records = []
    for d in dicts:
        rois = [layout._roi_from_json(r) for r in d["rois"]]
        bounds = d.get("bounds")
        rec = ArticleRecord(
            article_id=d["article_id"], page_id=d["page_id"], rois=rois,
            parent=d.get("parent"),
            embed_level=d.get("embed_level", 1 if d.get("parent") else 0),
            embed_ordinal=d.get("embed_ordinal", 0),
            bounds=layout.Box(*bounds) if bounds else None,
            texts={layout._key_from_str(k): v for k, v in d.get("texts", {}).items()})
        rec.image_files = {layout._key_from_str(k): v
                           for k, v in d.get("image_files", {}).items()}
        records.append(rec)
    return records


def pairs_from_jsonl(path: str | Path) -> list[ArticlePair]:
    out = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if not line.strip():
            continue
        d = json.loads(line)
        out.append(ArticlePair(
            left=_record_from_json(d["left"]), right=_record_from_json(d["right"]),
            date=d["date"], left_language=d["left_language"],
            right_language=d["right_language"],
            image_evidence=tuple((tuple(l), tuple(r), s)
                                 for l, r, s in d.get("image_evidence", [])),
            pair_score=d.get("pair_score", 0.0), origin=d.get("origin", "image_pivot"),
            parent_pair=tuple(d["parent_pair"]) if d.get("parent_pair") else None))
    return out


def _sentence_to_json(s: Sentence) -> dict:
    return {"text": s.text, "index": s.index, "word_count": s.word_count,
            "roi": s.roi_kind.value, "article": s.article_id, "language": s.language}


def _sentence_from_json(d: dict) -> Sentence:
    return Sentence(text=d["text"], index=d["index"], word_count=d["word_count"],
                    roi_kind=RoiKind(d["roi"]), article_id=d.get("article"),
                    language=d.get("language"))


def save_aligned_jsonl(pairs: list[SentencePair], path: str | Path):
    with Path(path).open("w", encoding="utf-8") as fh:
        for p in pairs:
            fh.write(json.dumps({
                "left": _sentence_to_json(p.left), "right": _sentence_to_json(p.right),
                "score": p.score, "strategy": p.strategy.value,
                "provenance": p.provenance.as_dict(),
            }, sort_keys=True, ensure_ascii=False) + "\n")


def load_aligned_jsonl(path: str | Path) -> list[SentencePair]:
    out = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if not line.strip():
            continue
        d = json.loads(line)
        prov = d["provenance"]
        out.append(SentencePair(
            left=_sentence_from_json(d["left"]), right=_sentence_from_json(d["right"]),
            score=d["score"], strategy=Strategy(d["strategy"]),
            provenance=Provenance(date=prov["date"], page_ids=tuple(prov["page_ids"]),
                                  article_ids=tuple(prov["article_ids"]),
                                  roi_kind=prov.get("roi", "content"),
                                  article_len=prov.get("article_len", 0))))
    return out


# --- stage implementations ------------------------------------------------------------

def run_pipeline(config: PipelineConfig, out_dir: str | Path) -> RunReport:
    """Execute the full pipeline; returns the run report.

    Stage outputs live in the cache keyed by digests; the final corpus
    files and the report are copied into ``out_dir``. A stage failure
    marks the report, preserves prior cache entries, and raises
    StageError.
    """
    config.validate()
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    report = RunReport()
    stages = _Stages(config, report)
    try:
        return _run_pipeline_inner(config, out_dir, report, stages)
    finally:
        (out_dir / "report.json").write_text(
            json.dumps(report.as_dict(), indent=2, sort_keys=True), encoding="utf-8")


def _run_pipeline_inner(config: PipelineConfig, out_dir: Path,
                        report: RunReport, stages: _Stages) -> RunReport:
    # ingest
    ingest_key = _digest("ingest", config.manifest, list(config.languages))

    def build_ingest(stage_dir: Path):
        page_set = pages.ingest_bundle(config.manifest.parent, config.manifest,
                                       config.languages)
        pages.save_store(page_set, stage_dir / "store")

    ingest_dir = stages.run("ingest", ingest_key, build_ingest)
    page_set = pages.load_store(ingest_dir / "store")
    report.counts["pages"] = len(page_set.pages)
    report.counts["ingest_errors"] = len(page_set.errors)

    # segment
    seg_key = _digest("segment", ingest_key, _params_dict(config.seg_params),
                      config.annotations or "none")

    def build_segment(stage_dir: Path):
        if config.annotations is not None:
            records = layout.load_annotations(config.annotations, page_set)
        else:
            records = []
            for page in page_set.pages:
                page_records = layout.segment_page(page, config.seg_params)
                median = layout.page_line_median(page, config.seg_params)
                for rec in page_records:
                    layout.classify_rois(rec, page, config.seg_params,
                                         page_median_line=median)
                layout.finalize_family_indices(page_records)
                records.extend(page_records)
        _save_articles(records, stage_dir / "articles.json")

    seg_dir = stages.run("segment", seg_key, build_segment)
    records = layout.load_annotations(seg_dir / "articles.json", page_set)
    report.counts["articles"] = len(records)

    # ocr
    ocr_key = _digest("ocr", seg_key, config.engines)

    def build_ocr(stage_dir: Path):
        engines = config.engines_built()
        img_dir = stage_dir / "images"
        by_page: dict[str, list[ArticleRecord]] = {}
        for rec in records:
            by_page.setdefault(rec.page_id, []).append(rec)
        extracted = []
        for page in page_set.pages:
            for rec in by_page.get(page.page_id, []):
                extracted.append(ocr.extract_text(rec, page, engines, image_dir=img_dir))
        n_texts = sum(len(rec.texts) for rec in extracted)
        n_errors = sum(len(rec.errors) for rec in extracted)
        if n_errors and n_texts == 0:
            raise ocr.OcrError(
                f"no text extracted: every roi failed across {len(extracted)} articles "
                f"({n_errors} errors)")
        _save_articles(extracted, stage_dir / "articles.json")

    ocr_dir = stages.run("ocr", ocr_key, build_ocr)
    texted = layout.load_annotations(ocr_dir / "articles.json", page_set)
    dates = ([config.date] if config.date
             else [d.isoformat() for d in pages.dates_in(page_set)])

    # map
    map_key = _digest("map", ocr_key, _params_dict(config.feature_params),
                      _params_dict(config.mapper_params), dates)

    def build_map(stage_dir: Path):
        lexicons = config.lexicons_built()
        provider = make_provider(config.provider_spec, dim=config.align_params.embed_dim,
                                 lexicons=lexicons)
        all_pairs: list[ArticlePair] = []
        lang_l, lang_r = config.languages
        for date_str in dates:
            date = pages.Date.fromisoformat(date_str)
            page_ids_l = {p.page_id for p in pages.get_pages(page_set, lang_l, date)}
            page_ids_r = {p.page_id for p in pages.get_pages(page_set, lang_r, date)}
            left = [r for r in texted if r.page_id in page_ids_l]
            right = [r for r in texted if r.page_id in page_ids_r]
            if not left or not right:
                continue
            pairs = article_map.map_articles(
                left, right, date_str,
                _article_images(left, page_set), _article_images(right, page_set),
                (lang_l, lang_r), config.mapper_params, config.feature_params,
                workers=config.workers)
            children_l = {aid: [r for r in left if r.parent == aid]
                          for aid in {p.left.article_id for p in pairs}}
            children_r = {aid: [r for r in right if r.parent == aid]
                          for aid in {p.right.article_id for p in pairs}}

            def delta(a_text: str, b_text: str) -> float:
                va = provider.embed([a_text], language=lang_l)[0]
                vb = provider.embed([b_text], language=lang_r)[0]
                return float(va @ vb)

            embedded = []
            for pair in pairs:
                embedded.extend(article_map.map_embedded(
                    pair, children_l.get(pair.left.article_id, []),
                    children_r.get(pair.right.article_id, []),
                    delta, config.mapper_params.headline_threshold))
            all_pairs.extend(pairs)
            all_pairs.extend(embedded)
        _pairs_to_jsonl(all_pairs, stage_dir / "pairs.jsonl")

    map_dir = stages.run("map", map_key, build_map)
    article_pairs = pairs_from_jsonl(map_dir / "pairs.jsonl")
    report.counts["mapped_articles"] = len(article_pairs)

    # align
    align_key = _digest(
        "align", map_key, config.strategy.value, _params_dict(config.align_params),
        config.provider_spec,
        {k: str(v) for k, v in sorted(config.lexicon_paths.items())},
        *[Path(p) for p in sorted(config.lexicon_paths.values())])

    def build_align(stage_dir: Path):
        lexicons = config.lexicons_built()
        provider = (make_provider(config.provider_spec, dim=config.align_params.embed_dim,
                                  lexicons=lexicons)
                    if config.strategy is Strategy.LAS else None)
        lex_pair = None
        if config.strategy is Strategy.LO:
            lang_l, lang_r = config.languages
            if lang_l not in lexicons or lang_r not in lexicons:
                raise ConfigError("LO strategy needs lexicons for both languages")
            lex_pair = (lexicons[lang_l], lexicons[lang_r])
        align_params = config.align_params
        if (config.strategy is Strategy.SLAS
                and align_params.slas.length_ratio is None):
            lw = rw = 0
            for pair in article_pairs:
                for kind in sentence_map.STREAM_KINDS:
                    lw += sum(s.word_count for s in sentence_map.article_sentences(
                        pair.left, kind, pair.left_language))
                    rw += sum(s.word_count for s in sentence_map.article_sentences(
                        pair.right, kind, pair.right_language))
            if lw and rw:
                from dataclasses import replace as dc_replace
                align_params = dc_replace(
                    align_params, slas=dc_replace(align_params.slas, length_ratio=rw / lw))
        aligned: list[SentencePair] = []
        for pair in article_pairs:
            aligned.extend(sentence_map.align_sentences(
                pair, config.strategy, align_params, provider=provider,
                lexicons=lex_pair))
        save_aligned_jsonl(aligned, stage_dir / "aligned.jsonl")

    align_dir = stages.run("align", align_key, build_align)
    aligned = load_aligned_jsonl(align_dir / "aligned.jsonl")
    report.counts["mapped_sentences"] = len(aligned)

    # corpus
    corpus_key = _digest("corpus", align_key)

    def build_corpus_stage(stage_dir: Path):
        corpus = evaluation.build_corpus(aligned, languages=config.languages)
        evaluation.save_corpus_tsv(corpus, stage_dir / "corpus.tsv",
                                   caption_split=stage_dir / "captions.tsv")
        evaluation.save_corpus_jsonl(corpus, stage_dir / "corpus.jsonl")
        (stage_dir / "stats.json").write_text(
            json.dumps(corpus.stats, indent=2, sort_keys=True), encoding="utf-8")

    corpus_dir = stages.run("corpus", corpus_key, build_corpus_stage)
    stats = json.loads((corpus_dir / "stats.json").read_text(encoding="utf-8"))
    report.counts["corpus_pairs"] = stats["total"]

    for name, label in (("corpus.tsv", "corpus_tsv"), ("corpus.jsonl", "corpus_jsonl"),
                        ("captions.tsv", "captions_tsv"), ("stats.json", "stats")):
        shutil.copyfile(corpus_dir / name, out_dir / name)
        report.outputs[label] = str(out_dir / name)
    return report
