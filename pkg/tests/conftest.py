import json

import pytest

from corpus_forge import layout, ocr, pages
from corpus_forge.fixtures import FixtureSpec, gen_fixture


@pytest.fixture(scope="session")
def bundle_factory(tmp_path_factory):
    """Generate-and-cache fixture bundles shared across test modules."""
    root = tmp_path_factory.mktemp("bundles")
    cache = {}

    def make(seed, **overrides):
        key = (seed, tuple(sorted(overrides.items())))
        if key not in cache:
            spec = FixtureSpec(**overrides)
            name = f"b{seed}-" + "-".join(f"{k}{v}" for k, v in sorted(overrides.items()))
            cache[key] = gen_fixture(seed, spec, root / (name or f"b{seed}"))
        return cache[key]

    return make


@pytest.fixture(scope="session")
def small_bundle(bundle_factory):
    """5+5 articles, 3 shared photos: the cheap end-to-end workhorse."""
    return bundle_factory(7, articles_left=5, articles_right=5, shared_images=3)


def ingest(bundle):
    return pages.ingest_bundle(bundle.root, bundle.manifest_path)


def segment_all(page_set, params=None):
    params = params or layout.SegmentationParams()
    records = []
    for page in page_set.pages:
        recs = layout.segment_page(page, params)
        median = layout.page_line_median(page, params)
        for rec in recs:
            layout.classify_rois(rec, page, params, page_median_line=median)
        layout.finalize_family_indices(recs)
        records.extend(recs)
    return records


def mock_engines(bundle, n=3, corrupt=()):
    truth = json.loads((bundle.truth_dir / "texts.json").read_text(encoding="utf-8"))
    engines = []
    for i in range(1, n + 1):
        rate = corrupt[i - 1] if i - 1 < len(corrupt) else 0.0
        engines.append(ocr.make_mock_engine(f"mock{i}", i, truth,
                                            corrupt_rate=rate, seed=i))
    return engines


def extract_all(records, page_set, engines, image_dir=None):
    by_page = {}
    for rec in records:
        by_page.setdefault(rec.page_id, []).append(rec)
    for page in page_set.pages:
        for rec in by_page.get(page.page_id, []):
            ocr.extract_text(rec, page, engines, image_dir=image_dir)
    return records
