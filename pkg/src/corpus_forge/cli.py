"""corpus-forge command line: one verb per pipeline stage plus `run`.

Exit codes: 0 success, 1 validation problem, 2 stage failure. Logs go to
stderr; machine-readable outputs go to the paths given by flags.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

logger = logging.getLogger("corpus_forge")

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_STAGE = 2


def _cmd_ingest(args) -> int:
    from . import pages

    manifest = Path(args.manifest)
    if not manifest.is_file():
        logger.error("manifest not found: %s", manifest)
        return EXIT_VALIDATION
    page_set = pages.ingest_bundle(manifest.parent, manifest)
    pages.save_store(page_set, args.out)
    logger.info("ingested %d pages (%d errors) into %s",
                len(page_set.pages), len(page_set.errors), args.out)
    return EXIT_OK


def _cmd_segment(args) -> int:
    from . import layout, pages

    page_set = pages.load_store(args.store)
    params = layout.SegmentationParams()
    if args.annotations:
        records = layout.load_annotations(args.annotations, page_set)
    else:
        records = []
        for page in page_set.pages:
            page_records = layout.segment_page(page, params)
            median = layout.page_line_median(page, params)
            for rec in page_records:
                layout.classify_rois(rec, page, params, page_median_line=median)
            layout.finalize_family_indices(page_records)
            records.extend(page_records)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    layout.save_annotations(records, out / "articles.json")
    logger.info("segmented %d articles into %s", len(records), out / "articles.json")
    return EXIT_OK


def _cmd_ocr(args) -> int:
    from . import layout, ocr, pages

    page_set = pages.load_store(args.store)
    articles_dir = Path(args.articles)
    records = layout.load_annotations(articles_dir / "articles.json", page_set)
    engines_cfg = json.loads(Path(args.engines).read_text(encoding="utf-8"))
    engines = []
    for eng in engines_cfg:
        if "command" in eng:
            engines.append(ocr.OcrEngineAdapter(
                engine_id=eng["engine_id"], priority=int(eng["priority"]),
                command=eng["command"]))
        else:
            truth = json.loads(Path(eng["mock_truth"]).read_text(encoding="utf-8"))
            engines.append(ocr.make_mock_engine(
                eng["engine_id"], int(eng["priority"]), truth,
                corrupt_rate=float(eng.get("corrupt_rate", 0.0)),
                seed=int(eng.get("seed", 0))))
    img_dir = articles_dir / "images"
    by_page: dict[str, list] = {}
    for rec in records:
        by_page.setdefault(rec.page_id, []).append(rec)
    for page in page_set.pages:
        for rec in by_page.get(page.page_id, []):
            ocr.extract_text(rec, page, engines, image_dir=img_dir)
    layout.save_annotations(records, articles_dir / "articles.json")
    for rec in records:
        (articles_dir / f"{rec.article_id}.txt").write_text(
            layout.serialize_article(rec), encoding="utf-8")
    logger.info("extracted text for %d articles", len(records))
    return EXIT_OK


def _cmd_match_images(args) -> int:
    import numpy as np
    from PIL import Image

    from .features import FeatureMatchParams, describe_image, match_descriptors

    params = FeatureMatchParams()

    def load_dir(d):
        files = sorted(p for p in Path(d).iterdir()
                       if p.suffix.lower() in (".png", ".jpg", ".jpeg", ".tif", ".tiff"))
        return files, [np.asarray(Image.open(p).convert("L"), dtype=np.uint8)
                       for p in files]

    left_files, left_imgs = load_dir(args.left)
    right_files, right_imgs = load_dir(args.right)
    if not left_files or not right_files:
        logger.error("both --left and --right must contain images")
        return EXIT_VALIDATION
    left_desc = [describe_image(img, params) for img in left_imgs]
    right_desc = [describe_image(img, params) for img in right_imgs]
    lines = ["\t".join(["left\\right"] + [f.name for f in right_files])]
    for lf, ld in zip(left_files, left_desc):
        row = [lf.name]
        for rd in right_desc:
            row.append(f"{match_descriptors(ld, rd, params.ratio).score:.4f}")
        lines.append("\t".join(row))
    Path(args.report).write_text("\n".join(lines) + "\n", encoding="utf-8")
    logger.info("wrote %dx%d similarity matrix to %s",
                len(left_files), len(right_files), args.report)
    return EXIT_OK


def _cmd_map_articles(args) -> int:
    from . import article_map, layout, pages
    from .article_map import MapperParams
    from .features import FeatureMatchParams
    from .pipeline import _article_images, _pairs_to_jsonl

    page_set = pages.load_store(args.store)
    left_records = layout.load_annotations(Path(args.left) / "articles.json", page_set)
    right_records = layout.load_annotations(Path(args.right) / "articles.json", page_set)
    langs = tuple(args.languages.split(",")) if args.languages else page_set.languages
    if len(langs) != 2:
        logger.error("--languages must name two codes")
        return EXIT_VALIDATION
    lang_of = {p.page_id: p.language for p in page_set.pages}
    left_records = [r for r in left_records if lang_of.get(r.page_id) == langs[0]]
    right_records = [r for r in right_records if lang_of.get(r.page_id) == langs[1]]
    params = MapperParams(similarity_threshold=args.threshold)
    pairs = article_map.map_articles(
        left_records, right_records, args.date,
        _article_images(left_records, page_set), _article_images(right_records, page_set),
        (langs[0], langs[1]), params, FeatureMatchParams())
    _pairs_to_jsonl(pairs, Path(args.out))
    logger.info("mapped %d article pairs", len(pairs))
    return EXIT_OK


def _cmd_align(args) -> int:
    from . import sentence_map
    from .embedding import load_lexicon, make_provider
    from .pipeline import load_aligned_jsonl, pairs_from_jsonl, save_aligned_jsonl
    from .sentence_map import AlignParams, Strategy

    pairs = pairs_from_jsonl(args.pairs)
    strategy = Strategy(args.strategy)
    params = AlignParams()
    lexicons = {}
    lex_pair = None
    if args.lexicons:
        if len(args.lexicons) != 2:
            logger.error("--lexicons needs two files (left, right)")
            return EXIT_VALIDATION
        if not pairs:
            logger.warning("no article pairs to align")
        langs = (pairs[0].left_language, pairs[0].right_language) if pairs else ("l1", "l2")
        lexicons = {langs[0]: load_lexicon(args.lexicons[0], langs[0]),
                    langs[1]: load_lexicon(args.lexicons[1], langs[1])}
        lex_pair = (lexicons[langs[0]], lexicons[langs[1]])
    provider = None
    if strategy is Strategy.LAS:
        provider = make_provider(args.provider, lexicons=lexicons)
    aligned = []
    for pair in pairs:
        aligned.extend(sentence_map.align_sentences(
            pair, strategy, params, provider=provider, lexicons=lex_pair))
    save_aligned_jsonl(aligned, args.out)
    logger.info("aligned %d sentence pairs", len(aligned))
    return EXIT_OK


def _cmd_corpus(args) -> int:
    from . import evaluation
    from .pipeline import load_aligned_jsonl

    aligned = load_aligned_jsonl(args.infile)
    corpus = evaluation.build_corpus(aligned)
    out = Path(args.out)
    evaluation.save_corpus_tsv(corpus, out,
                               caption_split=out.with_suffix(".captions.tsv"))
    evaluation.save_corpus_jsonl(corpus, out.with_suffix(".jsonl"))
    logger.info("corpus: %s", json.dumps(corpus.stats))
    return EXIT_OK


def _cmd_sample_sts(args) -> int:
    from . import evaluation

    corpus = evaluation.load_corpus_tsv(args.corpus)
    sheet = evaluation.sample_sts(corpus, args.n_per_stratum, seed=args.seed)
    evaluation.save_sheet_csv(sheet, args.out)
    logger.info("sampled %d rows (per stratum: %s, shortfalls: %s)",
                len(sheet.rows), sheet.stratum_counts, sheet.shortfalls)
    return EXIT_OK


def _cmd_sts_report(args) -> int:
    from . import evaluation

    corpus = evaluation.load_corpus_tsv(args.corpus)
    annotations = []
    for path in args.annotations:
        annotations.extend(evaluation.load_annotations_csv(path))
    report = evaluation.aggregate_sts(corpus, annotations)
    payload = {"mean_sts": report.mean_sts, "frac_above_3": report.frac_above_3,
               "n_pairs": report.n_pairs, "buckets": report.buckets,
               "row_errors": list(report.row_errors)}
    text = json.dumps(payload, indent=2, sort_keys=True)
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    print(text)
    return EXIT_OK


def _cmd_bleu(args) -> int:
    from . import evaluation

    hyp = Path(args.hyp).read_text(encoding="utf-8").splitlines()
    ref = Path(args.ref).read_text(encoding="utf-8").splitlines()
    if len(hyp) != len(ref):
        logger.error("hypothesis and reference line counts differ (%d vs %d)",
                     len(hyp), len(ref))
        return EXIT_VALIDATION
    score = evaluation.bleu(hyp, [[r] for r in ref], max_n=args.max_n)
    print(f"{score:.2f}")
    return EXIT_OK


def _cmd_run(args) -> int:
    from .pipeline import ConfigError, PipelineConfig, StageError, run_pipeline

    try:
        config = PipelineConfig.from_toml(args.config)
    except ConfigError as exc:
        logger.error("config error: %s", exc)
        return EXIT_VALIDATION
    try:
        report = run_pipeline(config, args.out)
    except StageError as exc:
        logger.error("%s", exc)
        return EXIT_STAGE
    print(json.dumps(report.as_dict(), indent=2, sort_keys=True))
    return EXIT_OK


def _cmd_gen_fixture(args) -> int:
    from .fixtures import FixtureError, FixtureSpec, gen_fixture

    spec_dict = {}
    if args.spec:
        spec_dict = json.loads(Path(args.spec).read_text(encoding="utf-8"))
    try:
        spec = FixtureSpec.from_dict(spec_dict)
        bundle = gen_fixture(args.seed, spec, args.out)
    except FixtureError as exc:
        logger.error("fixture spec error: %s", exc)
        return EXIT_VALIDATION
    logger.info("generated bundle at %s: %d articles, %d article pairs",
                bundle.root, len(bundle.articles), len(bundle.article_pairs))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="corpus-forge",
        description="Mine bilingual parallel corpora from dual-language newspaper pages")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="ingest a manifest of page images into a store")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=_cmd_ingest)

    p = sub.add_parser("segment", help="segment store pages into articles and ROIs")
    p.add_argument("--store", required=True)
    p.add_argument("--annotations", help="bypass segmentation with an annotation file")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=_cmd_segment)

    p = sub.add_parser("ocr", help="extract ROI text with an OCR engine ensemble")
    p.add_argument("--store", required=True)
    p.add_argument("--articles", required=True)
    p.add_argument("--engines", required=True, help="JSON list of engine adapters")
    p.set_defaults(fn=_cmd_ocr)

    p = sub.add_parser("match-images", help="similarity matrix between two image dirs")
    p.add_argument("--left", required=True)
    p.add_argument("--right", required=True)
    p.add_argument("--report", required=True)
    p.set_defaults(fn=_cmd_match_images)

    p = sub.add_parser("map-articles", help="pair articles across languages by images")
    p.add_argument("--store", required=True)
    p.add_argument("--left", required=True)
    p.add_argument("--right", required=True)
    p.add_argument("--date", required=True)
    p.add_argument("--threshold", type=float, default=0.25)
    p.add_argument("--languages", help="comma-separated pair, defaults to the store's")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=_cmd_map_articles)

    p = sub.add_parser("align", help="align sentences within mapped article pairs")
    p.add_argument("--pairs", required=True)
    p.add_argument("--strategy", required=True, choices=["las", "slas", "lo"])
    p.add_argument("--provider", default="builtin", help="'builtin' or a sidecar URL")
    p.add_argument("--lexicons", nargs=2, metavar=("LEFT_TSV", "RIGHT_TSV"))
    p.add_argument("--out", required=True)
    p.set_defaults(fn=_cmd_align)

    p = sub.add_parser("corpus", help="build the deduplicated corpus TSV")
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=_cmd_corpus)

    p = sub.add_parser("sample-sts", help="draw a stratified STS annotation sheet")
    p.add_argument("--corpus", required=True)
    p.add_argument("--n-per-stratum", type=int, default=200)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=_cmd_sample_sts)

    p = sub.add_parser("sts-report", help="aggregate filled annotation sheets")
    p.add_argument("--corpus", required=True)
    p.add_argument("--annotations", nargs="+", required=True)
    p.add_argument("--out")
    p.set_defaults(fn=_cmd_sts_report)

    p = sub.add_parser("bleu", help="corpus-level BLEU between two line-aligned files")
    p.add_argument("--hyp", required=True)
    p.add_argument("--ref", required=True)
    p.add_argument("--max-n", type=int, default=4)
    p.set_defaults(fn=_cmd_bleu)

    p = sub.add_parser("run", help="run the full pipeline from a TOML config")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=_cmd_run)

    p = sub.add_parser("gen-fixture", help="generate a synthetic bilingual bundle")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--spec", help="JSON file overriding FixtureSpec fields")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=_cmd_gen_fixture)

    return parser


def main(argv=None) -> int:
    logging.basicConfig(stream=sys.stderr, level=logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except Exception as exc:  # anything unexpected is a stage-level failure
        logger.error("%s", exc)
        return EXIT_STAGE


if __name__ == "__main__":
    sys.exit(main())
