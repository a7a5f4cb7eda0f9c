"""corpus-forge: bilingual parallel-corpus mining from newspaper page images."""

__version__ = "0.1.0"

from .article_map import ArticlePair, MapperParams, map_articles, map_embedded
from .embedding import (EmbeddingVector, HashEmbeddingProvider, HttpEmbeddingProvider,
                        PivotLexicon, hash_embed, load_lexicon)
from .evaluation import (BilingualCorpus, StsReport, aggregate_sts, bleu, build_corpus,
                         sample_sts)
from .features import (Descriptor, FeatureMatchParams, Keypoint, MatchResult,
                       compute_descriptors, detect_keypoints, image_similarity,
                       match_descriptors)
from .fixtures import FixtureBundle, FixtureSpec, gen_fixture
from .layout import (ArticleRecord, Box, Roi, RoiKind, SegmentationParams, classify_rois,
                     load_annotations, segment_page, serialize_article)
from .ocr import OcrCandidate, OcrEngineAdapter, extract_text, run_engines, vote
from .pages import PageImage, PageSet, get_pages, ingest_bundle
from .pipeline import PipelineConfig, RunReport, run_pipeline
from .sentence_map import (AlignParams, Sentence, SentencePair, SlasParams, Strategy,
                           align_sentences, las_score, lo_score, slas_align,
                           split_sentences)
