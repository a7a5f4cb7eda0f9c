"""Synthetic bilingual fixture bundles: the pipeline's test oracle.

A bundle renders two pseudo-language newspaper editions for one date.
Text is drawn from a seeded token inventory with a bijective token map
between the two pseudo-languages, so ground-truth sentence pairs and a
perfect pivot lexicon exist by construction; shared photos are
procedurally generated textures reused across editions under declared
perturbations (scale, brightness, shift). Everything is derived from the
seed alone: regenerating a bundle is bit-identical.

Pages are greeked: words render as filled rectangles with realistic line
metrics, which exercises segmentation and ROI classification honestly
while the mock OCR engine resolves real text from the sidecar.
"""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field
from datetime import date as Date
from pathlib import Path

import cv2
import numpy as np
from PIL import Image

from .layout import ArticleRecord, Box, Roi, RoiKind, save_annotations
from .pages import page_id_for

logger = logging.getLogger(__name__)

INK = 20
PHOTO_BG = 245

# text metrics per roi kind: (char width, fill height, line advance)
METRICS = {
    RoiKind.HEADLINE: (9, 18, 26),
    RoiKind.CONTENT: (6, 9, 14),
    RoiKind.CAPTION: (5, 8, 12),
}

L1_SYLLABLES = ("ka", "ra", "mo", "zi", "ne", "tu", "ba", "so", "le", "vi", "da", "pu")
L2_SYLLABLES = ("ber", "tok", "min", "zul", "gar", "pes", "nov", "lir", "dum", "fex",
                "wos", "hib")
PIVOT_WORDS = (
    "stone", "river", "cloud", "market", "bridge", "garden", "window", "harbor",
    "forest", "meadow", "candle", "bottle", "street", "silver", "copper", "train",
    "paper", "basket", "orchard", "lantern", "saddle", "anchor", "barrel", "hammer",
    "needle", "ribbon", "shadow", "spring", "summer", "winter", "teacher", "doctor",
    "farmer", "sailor", "singer", "writer", "island", "valley", "canyon", "desert",
)


class FixtureError(Exception):
    pass


@dataclass(frozen=True)
class FixtureSpec:
    languages: tuple[str, str] = ("l1", "l2")
    date: str = "2024-03-01"
    articles_left: int = 6
    articles_right: int = 6
    shared_images: int = 4
    sentences_min: int = 4
    sentences_max: int = 7
    sentence_words_min: int = 3
    sentence_words_max: int = 9
    headline_words: int = 4
    caption_words: int = 5
    embedded_prob: float = 0.0
    filler_prob: float = 0.25
    swap_prob: float = 0.08
    scale: float = 0.8
    brightness: int = 20
    shift: int = 10
    page_width: int = 1000
    page_height: int = 1400
    grid_cols: int = 2
    grid_rows: int = 2
    photo_size: int = 190
    inventory_size: int = 260
    stop_tokens: int = 6
    stop_prob: float = 0.3

    def __post_init__(self):
        if self.shared_images > min(self.articles_left, self.articles_right):
            raise FixtureError(
                f"{self.shared_images} shared images exceed the smaller edition "
                f"({min(self.articles_left, self.articles_right)} articles)")
        if not (0.5 <= self.scale <= 1.0):
            raise FixtureError("scale perturbation must be in [0.5, 1]")
        if abs(self.brightness) > 40:
            raise FixtureError("brightness perturbation must be within +/-40")
        if self.headline_words < 3 or self.caption_words < 3:
            raise FixtureError("headline/caption need >= 3 words for stable greeking")

    @classmethod
    def from_dict(cls, d: dict) -> "FixtureSpec":
        d = dict(d)
        if "languages" in d:
            d["languages"] = tuple(d["languages"])
        known = {k: v for k, v in d.items() if k in cls.__dataclass_fields__}
        return cls(**known)


@dataclass
class GtArticle:
    gt_id: str
    language: str
    page_number: int
    frame: Box
    headline: str
    content_sentences: list[str]
    caption: str | None
    texture_id: int | None
    rois: list[tuple[RoiKind, Box, int, int | None, str | None]] = field(default_factory=list)
    # (kind, box, seq, sub, text); image rois carry text=None
    parent: str | None = None
    embed_ordinal: int = 0
    page_id: str = ""


@dataclass
class FixtureBundle:
    root: Path
    seed: int
    spec: FixtureSpec
    page_ids: dict[tuple[str, int], str]              # (language, page_number) -> id
    articles: list[GtArticle]
    article_pairs: list[tuple[str, str]]              # image-pivot ground truth
    embedded_pairs: list[tuple[str, str]]             # headline-pivot ground truth
    sentence_pairs: list[dict]                        # {left, right, roi, origin, ...}
    lexicons: dict[str, str]                          # language -> tsv path
    manifest_path: Path

    @property
    def truth_dir(self) -> Path:
        return self.root / "truth"


# --- token inventories -------------------------------------------------------------

def _make_tokens(rng: np.random.Generator, syllables, n: int) -> list[str]:
    out: list[str] = []
    seen = set()
    while len(out) < n:
        k = int(rng.integers(2, 4))
        tok = "".join(syllables[int(rng.integers(len(syllables)))] for _ in range(k))
        while tok in seen:
            tok += syllables[int(rng.integers(len(syllables)))]
        seen.add(tok)
        out.append(tok)
    return out


def _make_inventory(rng: np.random.Generator, n: int):
    l1 = _make_tokens(rng, L1_SYLLABLES, n)
    l2 = _make_tokens(rng, L2_SYLLABLES, n)
    pivot = [f"{PIVOT_WORDS[i % len(PIVOT_WORDS)]}{i // len(PIVOT_WORDS)}" for i in range(n)]
    return l1, l2, pivot


def _sentence_indices(rng: np.random.Generator, spec: FixtureSpec,
                      n_words: int) -> list[int]:
    idx = []
    for _ in range(n_words):
        if spec.stop_tokens and rng.random() < spec.stop_prob:
            idx.append(int(rng.integers(spec.stop_tokens)))
        else:
            idx.append(int(rng.integers(spec.stop_tokens, spec.inventory_size)))
    return idx


# --- photo textures -------------------------------------------------------------------

def _texture(rng: np.random.Generator, size: int) -> np.ndarray:
    """Photo stand-in: structure at several scales so keypoints are plentiful.

    Gray values stay within [30, 135] so the block reads as solid ink to
    the layout classifier even after the +brightness perturbation.
    """
    low = rng.integers(30, 136, size=(7, 7)).astype(np.uint8)
    img = cv2.resize(low, (size, size), interpolation=cv2.INTER_LINEAR).astype(np.int32)
    n_shapes = max(30, size // 5)
    for _ in range(n_shapes):
        shade = int(rng.integers(30, 136))
        kind = int(rng.integers(3))
        x, y = int(rng.integers(size)), int(rng.integers(size))
        if kind == 0:
            ax, bx = int(rng.integers(4, size // 4)), int(rng.integers(4, size // 4))
            cv2.ellipse(img, (x, y), (ax, bx), float(rng.integers(180)), 0, 360,
                        shade, thickness=-1)
        elif kind == 1:
            w, h = int(rng.integers(6, size // 3)), int(rng.integers(6, size // 3))
            cv2.rectangle(img, (x, y), (min(x + w, size - 1), min(y + h, size - 1)),
                          shade, thickness=-1)
        else:
            x2, y2 = int(rng.integers(size)), int(rng.integers(size))
            cv2.line(img, (x, y), (x2, y2), shade, thickness=int(rng.integers(1, 4)))
    mid_n = max(size // 7, 8)
    mid = cv2.resize(rng.normal(0.0, 16.0, size=(mid_n, mid_n)), (size, size),
                     interpolation=cv2.INTER_LINEAR)
    speckle = rng.normal(0.0, 11.0, size=(size, size))
    img = cv2.GaussianBlur(img.astype(np.float64) + mid + speckle, (0, 0), 0.6)
    return np.clip(img, 30, 135).astype(np.uint8)


def _perturbed(texture: np.ndarray, spec: FixtureSpec,
               rng: np.random.Generator) -> np.ndarray:
    size = texture.shape[0]
    s = max(int(round(size * spec.scale)), 8)
    scaled = cv2.resize(texture, (s, s), interpolation=cv2.INTER_AREA)
    bright = np.clip(scaled.astype(np.int32) + spec.brightness, 0, 255).astype(np.uint8)
    canvas = np.full((size, size), PHOTO_BG, dtype=np.uint8)
    slack = size - s
    cx = slack // 2
    dx = int(np.clip(cx + rng.integers(-spec.shift, spec.shift + 1), 0, slack))
    dy = int(np.clip(cx + rng.integers(-spec.shift, spec.shift + 1), 0, slack))
    canvas[dy:dy + s, dx:dx + s] = bright
    return canvas


# --- greeked text rendering --------------------------------------------------------------

def _render_words(page: np.ndarray, x: int, y: int, width: int,
                  tokens: list[str], kind: RoiKind) -> Box:
    """Draw word rectangles with the kind's metrics; returns the ink bbox."""
    char_w, fill_h, advance = METRICS[kind]
    gap = char_w
    cx, cy = x, y
    max_x = x
    for tok in tokens:
        w = char_w * max(len(tok), 1)
        if cx > x and cx + w > x + width:
            cy += advance
            cx = x
        w = min(w, width)
        page[cy:cy + fill_h, cx:cx + w] = INK
        max_x = max(max_x, cx + w)
        cx += w + gap
    return Box(x, y, max_x - x, cy - y + fill_h)


# --- article assembly ----------------------------------------------------------------------

FRAME_T = 2
PAD = 14
BLOCK_GAP = 10
CAPTION_GAP = 6


def _draw_frame(page: np.ndarray, box: Box):
    page[box.y:box.y + FRAME_T, box.x:box.x2] = INK
    page[box.y2 - FRAME_T:box.y2, box.x:box.x2] = INK
    page[box.y:box.y2, box.x:box.x + FRAME_T] = INK
    page[box.y:box.y2, box.x2 - FRAME_T:box.x2] = INK


def _render_article(page: np.ndarray, origin: tuple[int, int], cell_w: int,
                    art: GtArticle, photo: np.ndarray | None,
                    embedded: GtArticle | None) -> int:
    """Draw one article (frame, headline, photo, caption, content, embedded).

    Fills roi bookkeeping on the GtArticle records; returns total height.
    """
    x0, y0 = origin
    inner_x = x0 + FRAME_T + PAD
    inner_w = cell_w - 2 * (FRAME_T + PAD)
    y = y0 + FRAME_T + PAD

    hbox = _render_words(page, inner_x, y, inner_w, art.headline.split(), RoiKind.HEADLINE)
    art.rois.append((RoiKind.HEADLINE, hbox, 1, 0, art.headline))
    y = hbox.y2 + BLOCK_GAP

    if photo is not None:
        size = photo.shape[0]
        px = inner_x + (inner_w - size) // 2
        page[y:y + size, px:px + size] = photo
        # the perturbed photo's ink can sit shifted inside its canvas; the
        # caption belongs under the visible picture, and ground truth
        # records the ink box the segmenter will actually see
        ink = photo < 160
        rows = np.flatnonzero(ink.any(axis=1))
        cols = np.flatnonzero(ink.any(axis=0))
        ink_box = Box(px + int(cols[0]), y + int(rows[0]),
                      int(cols[-1] - cols[0] + 1), int(rows[-1] - rows[0] + 1))
        art.rois.append((RoiKind.IMAGE, ink_box, 1, None, None))
        cy = ink_box.y2 + CAPTION_GAP
        cbox = _render_words(page, ink_box.x, cy, ink_box.w,
                             art.caption.split(), RoiKind.CAPTION)
        art.rois.append((RoiKind.CAPTION, cbox, 1, None, art.caption))
        y = max(cbox.y2, y + size) + BLOCK_GAP

    if embedded is None:
        content_text = " ".join(art.content_sentences)
        cbox = _render_words(page, inner_x, y, inner_w, content_text.split(),
                             RoiKind.CONTENT)
        art.rois.append((RoiKind.CONTENT, cbox, 1, None, content_text))
        y = cbox.y2 + BLOCK_GAP
    else:
        # parent content wraps around the embedded box so the child stays
        # inside the parent's roi hull
        half = max(1, len(art.content_sentences) // 2)
        first = " ".join(art.content_sentences[:half])
        second = " ".join(art.content_sentences[half:])
        cbox = _render_words(page, inner_x, y, inner_w, first.split(), RoiKind.CONTENT)
        art.rois.append((RoiKind.CONTENT, cbox, 1, None, first))
        y = cbox.y2 + BLOCK_GAP

        ey = y
        e_inner_x = inner_x + FRAME_T + 8
        e_inner_w = inner_w - 2 * (FRAME_T + 8)
        yy = ey + FRAME_T + 8
        ehbox = _render_words(page, e_inner_x, yy, e_inner_w,
                              embedded.headline.split(), RoiKind.HEADLINE)
        embedded.rois.append((RoiKind.HEADLINE, ehbox, 2, 0, embedded.headline))
        yy = ehbox.y2 + 8
        etext = " ".join(embedded.content_sentences)
        ecbox = _render_words(page, e_inner_x, yy, e_inner_w, etext.split(),
                              RoiKind.CONTENT)
        # family numbering: the child's content continues after the parent's
        embedded.rois.append((RoiKind.CONTENT, ecbox, 3, None, etext))
        yy = ecbox.y2 + FRAME_T + 8
        ebox = Box(inner_x, ey, inner_w, yy - ey)
        _draw_frame(page, ebox)
        embedded.frame = ebox
        y = ebox.y2 + BLOCK_GAP

        if second:
            cbox2 = _render_words(page, inner_x, y, inner_w, second.split(),
                                  RoiKind.CONTENT)
            art.rois.append((RoiKind.CONTENT, cbox2, 2, None, second))
            y = cbox2.y2 + BLOCK_GAP

    height = y - BLOCK_GAP + PAD + FRAME_T - y0
    frame = Box(x0, y0, cell_w, height)
    _draw_frame(page, frame)
    art.frame = frame
    return height


# --- bundle generation -----------------------------------------------------------------------

def gen_fixture(seed: int, spec: FixtureSpec, out_dir: str | Path) -> FixtureBundle:
    """Render a bundle under ``out_dir`` and write all ground-truth sidecars."""
    rng = np.random.default_rng(seed)
    out = Path(out_dir)
    (out / "pages").mkdir(parents=True, exist_ok=True)
    truth = out / "truth"
    truth.mkdir(parents=True, exist_ok=True)
    date = Date.fromisoformat(spec.date)
    lang_l, lang_r = spec.languages

    l1_tokens, l2_tokens, pivot_tokens = _make_inventory(rng, spec.inventory_size)

    def l1_text(indices) -> str:
        return " ".join(l1_tokens[i] for i in indices)

    def l2_text(indices) -> str:
        return " ".join(l2_tokens[i] for i in indices)

    # sentence plans per shared pair + decoys
    n_left, n_right = spec.articles_left, spec.articles_right
    n_shared = spec.shared_images
    textures = [_texture(rng, spec.photo_size) for _ in range(max(n_left, n_right) + n_right)]

    left_articles: list[GtArticle] = []
    right_articles: list[GtArticle] = []
    article_pairs: list[tuple[str, str]] = []
    embedded_pairs: list[tuple[str, str]] = []
    sentence_pairs: list[dict] = []
    left_embedded: dict[str, GtArticle] = {}
    right_embedded: dict[str, GtArticle] = {}

    def make_sentences(n: int) -> list[list[int]]:
        # articles repeat their topical words across sentences, which is
        # what makes lexical overlap genuinely confusable within a story
        topics = [int(rng.integers(spec.stop_tokens, spec.inventory_size))
                  for _ in range(2)]
        out = []
        for _ in range(n):
            idx = _sentence_indices(rng, spec, int(rng.integers(
                spec.sentence_words_min, spec.sentence_words_max + 1)))
            for topic in topics:
                if rng.random() < 0.6:
                    pos = int(rng.integers(len(idx) + 1))
                    idx.insert(pos, topic)
            out.append(idx)
        return out

    def delim(i: int) -> tuple[str, str]:
        return ("?", "?") if rng.random() < 0.15 else ("।", ".")

    for i in range(max(n_left, n_right)):
        in_left = i < n_left
        in_right = i < n_right
        shared = i < n_shared
        n_sent = int(rng.integers(spec.sentences_min, spec.sentences_max + 1))
        plans = make_sentences(n_sent)
        delims = [delim(k) for k in range(n_sent)]
        head_plan = _sentence_indices(rng, spec, spec.headline_words)
        cap_plan = _sentence_indices(rng, spec, spec.caption_words)
        texture_id = i

        l_art = r_art = None
        if in_left:
            l_sentences = [l1_text(p) + d[0] for p, d in zip(plans, delims)]
            l_art = GtArticle(
                gt_id=f"gt-{lang_l}-{i:03d}", language=lang_l, page_number=0,
                frame=Box(0, 0, 1, 1), headline=l1_text(head_plan),
                content_sentences=l_sentences,
                caption=l1_text(cap_plan) + delims[0][0],
                texture_id=texture_id)
            left_articles.append(l_art)
        if in_right:
            r_tex = texture_id if shared else max(n_left, n_right) + i
            r_plans = list(plans) if shared else make_sentences(n_sent)
            r_delims = list(delims) if shared else [delim(k) for k in range(len(r_plans))]
            r_head = head_plan if shared else _sentence_indices(rng, spec, spec.headline_words)
            r_cap = cap_plan if shared else _sentence_indices(rng, spec, spec.caption_words)
            r_sentences = [l2_text(p) + d[1] for p, d in zip(r_plans, r_delims)]
            pair_map = list(range(len(r_sentences)))  # position of left j in right list

            if shared:
                if rng.random() < spec.swap_prob and len(r_sentences) >= 2:
                    k = int(rng.integers(len(r_sentences) - 1))
                    r_sentences[k], r_sentences[k + 1] = r_sentences[k + 1], r_sentences[k]
                    pair_map[k], pair_map[k + 1] = pair_map[k + 1], pair_map[k]
                if rng.random() < spec.filler_prob:
                    filler = l2_text(_sentence_indices(rng, spec, int(rng.integers(
                        spec.sentence_words_min, spec.sentence_words_max + 1)))) + "."
                    pos = int(rng.integers(len(r_sentences) + 1))
                    r_sentences.insert(pos, filler)
                    pair_map = [p if p < pos else p + 1 for p in pair_map]

            r_art = GtArticle(
                gt_id=f"gt-{lang_r}-{i:03d}", language=lang_r, page_number=0,
                frame=Box(0, 0, 1, 1), headline=l2_text(r_head),
                content_sentences=r_sentences,
                caption=l2_text(r_cap) + (r_delims[0][1] if r_delims else "."),
                texture_id=r_tex)
            right_articles.append(r_art)

        if shared and in_left and in_right:
            article_pairs.append((l_art.gt_id, r_art.gt_id))
            sentence_pairs.append({
                "left": l_art.headline, "right": r_art.headline,
                "roi": "headline", "origin": "image",
                "left_article": l_art.gt_id, "right_article": r_art.gt_id})
            sentence_pairs.append({
                "left": l_art.caption, "right": r_art.caption,
                "roi": "caption", "origin": "image",
                "left_article": l_art.gt_id, "right_article": r_art.gt_id})
            for j, l_sent in enumerate(l_art.content_sentences):
                sentence_pairs.append({
                    "left": l_sent, "right": r_art.content_sentences[pair_map[j]],
                    "roi": "content", "origin": "image",
                    "left_article": l_art.gt_id, "right_article": r_art.gt_id})
            if rng.random() < spec.embedded_prob:
                e_plan = make_sentences(2)
                e_head = _sentence_indices(rng, spec, spec.headline_words)
                le = GtArticle(gt_id=f"{l_art.gt_id}-e1", language=lang_l, page_number=0,
                               frame=Box(0, 0, 1, 1), headline=l1_text(e_head),
                               content_sentences=[l1_text(p) + "।" for p in e_plan],
                               caption=None, texture_id=None,
                               parent=l_art.gt_id, embed_ordinal=1)
                re = GtArticle(gt_id=f"{r_art.gt_id}-e1", language=lang_r, page_number=0,
                               frame=Box(0, 0, 1, 1), headline=l2_text(e_head),
                               content_sentences=[l2_text(p) + "." for p in e_plan],
                               caption=None, texture_id=None,
                               parent=r_art.gt_id, embed_ordinal=1)
                left_embedded[l_art.gt_id] = le
                right_embedded[r_art.gt_id] = re
                embedded_pairs.append((le.gt_id, re.gt_id))
                sentence_pairs.append({
                    "left": le.headline, "right": re.headline,
                    "roi": "headline", "origin": "embedded",
                    "left_article": le.gt_id, "right_article": re.gt_id})
                for lp, rp in zip(le.content_sentences, re.content_sentences):
                    sentence_pairs.append({
                        "left": lp, "right": rp, "roi": "content", "origin": "embedded",
                        "left_article": le.gt_id, "right_article": re.gt_id})

    # --- render pages per edition --------------------------------------------------
    page_ids: dict[tuple[str, int], str] = {}
    manifest_entries = []
    texts_sidecar: list[dict] = []
    per_page = spec.grid_cols * spec.grid_rows
    cell_w = (spec.page_width - 2 * 40 - (spec.grid_cols - 1) * 28) // spec.grid_cols
    cell_h = (spec.page_height - 2 * 40 - (spec.grid_rows - 1) * 28) // spec.grid_rows

    def render_edition(language: str, articles: list[GtArticle],
                       embedded: dict[str, GtArticle]):
        order = list(rng.permutation(len(articles)))
        pages_needed = (len(articles) + per_page - 1) // per_page
        for pno in range(1, pages_needed + 1):
            page = np.full((spec.page_height, spec.page_width), 255, dtype=np.uint8)
            batch = order[(pno - 1) * per_page:pno * per_page]
            for slot, art_idx in enumerate(batch):
                art = articles[art_idx]
                row, col = divmod(slot, spec.grid_cols)
                ox = 40 + col * (cell_w + 28)
                oy = 40 + row * (cell_h + 28)
                tex = textures[art.texture_id] if art.texture_id is not None else None
                photo = None
                if tex is not None:
                    photo = tex if language == lang_l else _perturbed(tex, spec, rng)
                child = embedded.get(art.gt_id)
                art.page_number = pno
                if child is not None:
                    child.page_number = pno
                height = _render_article(page, (ox, oy), cell_w, art, photo, child)
                if height > cell_h:
                    raise FixtureError(
                        f"article {art.gt_id} overflows its cell ({height}px > {cell_h}px); "
                        f"reduce sentences_max or page grid density")
            pid = page_id_for(language, date, pno, page, None)
            page_ids[(language, pno)] = pid
            fname = f"pages/{language}-p{pno}.png"
            Image.fromarray(page, mode="L").save(out / fname)
            manifest_entries.append({"file": fname, "language": language,
                                     "date": spec.date, "page_start": pno})
        for art in articles:
            art.page_id = page_ids[(language, art.page_number)]
            for kind, box, _seq, _sub, text in art.rois:
                if text is not None:
                    texts_sidecar.append({"page_id": art.page_id,
                                          "box": box.as_list(), "text": text})
        for child in embedded.values():
            child.page_id = page_ids[(language, child.page_number)]
            for kind, box, _seq, _sub, text in child.rois:
                if text is not None:
                    texts_sidecar.append({"page_id": child.page_id,
                                          "box": box.as_list(), "text": text})

    render_edition(lang_l, left_articles, left_embedded)
    render_edition(lang_r, right_articles, right_embedded)

    all_articles = (left_articles + list(left_embedded.values())
                    + right_articles + list(right_embedded.values()))

    # --- sidecars --------------------------------------------------------------------
    manifest_path = out / "manifest.json"
    manifest_path.write_text(json.dumps(manifest_entries, indent=2, sort_keys=True),
                             encoding="utf-8")

    records = [_gt_to_record(a) for a in all_articles]
    save_annotations(records, truth / "articles.json")
    (truth / "frames.json").write_text(
        json.dumps({a.gt_id: {"page_id": a.page_id, "box": a.frame.as_list()}
                    for a in all_articles}, indent=2, sort_keys=True), encoding="utf-8")
    (truth / "texts.json").write_text(
        json.dumps(sorted(texts_sidecar, key=lambda e: (e["page_id"], e["box"])),
                   indent=2, sort_keys=True, ensure_ascii=False), encoding="utf-8")
    (truth / "article_pairs.json").write_text(
        json.dumps({"image_pivot": article_pairs, "headline_pivot": embedded_pairs},
                   indent=2, sort_keys=True), encoding="utf-8")
    (truth / "sentence_pairs.json").write_text(
        json.dumps(sentence_pairs, indent=2, sort_keys=True, ensure_ascii=False),
        encoding="utf-8")

    lex_paths = {}
    for lang, tokens in ((lang_l, l1_tokens), (lang_r, l2_tokens)):
        path = truth / f"lexicon_{lang}.tsv"
        lines = [f"{tok}\t{pivot_tokens[i]}" for i, tok in enumerate(tokens)]
        path.write_text("\n".join(lines) + "\n", encoding="utf-8")
        lex_paths[lang] = str(path)

    (truth / "tokens.json").write_text(
        json.dumps({"l1": l1_tokens, "l2": l2_tokens, "pivot": pivot_tokens},
                   indent=2, sort_keys=True), encoding="utf-8")
    (out / "bundle.json").write_text(
        json.dumps({"seed": seed, "spec": asdict(spec),
                    "languages": list(spec.languages), "date": spec.date,
                    "page_ids": {f"{k[0]}|{k[1]}": v for k, v in sorted(page_ids.items())}},
                   indent=2, sort_keys=True), encoding="utf-8")

    return FixtureBundle(root=out, seed=seed, spec=spec, page_ids=page_ids,
                         articles=all_articles, article_pairs=article_pairs,
                         embedded_pairs=embedded_pairs, sentence_pairs=sentence_pairs,
                         lexicons=lex_paths, manifest_path=manifest_path)


def _gt_to_record(art: GtArticle) -> ArticleRecord:
    rois = []
    texts = {}
    for kind, box, seq, sub, text in art.rois:
        roi = Roi(kind=kind, box=box, seq_index=seq, sub_index=sub,
                  embed_level=1 if art.parent else 0)
        rois.append(roi)
        if text is not None:
            texts[roi.key] = text
    return ArticleRecord(article_id=art.gt_id, page_id=art.page_id, rois=rois,
                         parent=art.parent, embed_level=1 if art.parent else 0,
                         embed_ordinal=art.embed_ordinal, bounds=art.frame, texts=texts)


def load_bundle(root: str | Path) -> FixtureBundle:
    """Reload a rendered bundle's ground truth from its sidecars."""
    root = Path(root)
    meta = json.loads((root / "bundle.json").read_text(encoding="utf-8"))
    spec = FixtureSpec.from_dict(meta["spec"])
    truth = root / "truth"
    pairs = json.loads((truth / "article_pairs.json").read_text(encoding="utf-8"))
    sentence_pairs = json.loads((truth / "sentence_pairs.json").read_text(encoding="utf-8"))
    page_ids = {}
    for key, pid in meta["page_ids"].items():
        lang, pno = key.rsplit("|", 1)
        page_ids[(lang, int(pno))] = pid
    lexicons = {lang: str(truth / f"lexicon_{lang}.tsv") for lang in spec.languages}
    return FixtureBundle(root=root, seed=meta["seed"], spec=spec, page_ids=page_ids,
                         articles=[], article_pairs=[tuple(p) for p in pairs["image_pivot"]],
                         embedded_pairs=[tuple(p) for p in pairs["headline_pivot"]],
                         sentence_pairs=sentence_pairs, lexicons=lexicons,
                         manifest_path=root / "manifest.json")


# --- ground-truth evaluation helpers ---------------------------------------------------

def truth_records(bundle: FixtureBundle):
    from .layout import load_annotations
    return load_annotations(bundle.truth_dir / "articles.json")


def truth_frames(bundle: FixtureBundle) -> dict[str, tuple[str, Box]]:
    raw = json.loads((bundle.truth_dir / "frames.json").read_text(encoding="utf-8"))
    return {gt_id: (d["page_id"], Box(*d["box"])) for gt_id, d in raw.items()}


def match_records_to_truth(records, bundle: FixtureBundle,
                           min_iou: float = 0.5) -> dict[str, str]:
    """Map segmented article_ids to ground-truth ids by frame IoU per page."""
    frames = truth_frames(bundle)
    child_ids = {gt_id for gt_id, _ in
                 [(r.article_id, r) for r in truth_records(bundle) if r.parent is not None]}
    mapping: dict[str, str] = {}
    for rec in records:
        if rec.parent is not None:
            continue
        best, best_iou = None, min_iou
        for gt_id, (page_id, frame) in frames.items():
            if gt_id in child_ids or page_id != rec.page_id:
                continue
            iou = frame.iou(rec.hull)
            if iou > best_iou:
                best, best_iou = gt_id, iou
        if best is not None:
            mapping[rec.article_id] = best
    return mapping


def article_pair_metrics(pairs, records, bundle: FixtureBundle) -> dict:
    """Precision/recall of image-pivot article pairs against ground truth."""
    to_gt = match_records_to_truth(records, bundle)
    predicted = set()
    for p in pairs:
        if p.origin != "image_pivot":
            continue
        l = to_gt.get(p.left.article_id)
        r = to_gt.get(p.right.article_id)
        predicted.add((l, r))
    expected = set(bundle.article_pairs)
    tp = len(predicted & expected)
    precision = tp / len(predicted) if predicted else 1.0
    recall = tp / len(expected) if expected else 1.0
    return {"precision": precision, "recall": recall,
            "tp": tp, "predicted": len(predicted), "expected": len(expected)}


def _norm_text(text: str) -> str:
    import unicodedata
    return " ".join(unicodedata.normalize("NFC", text).split())


def sentence_pair_metrics(pairs, bundle: FixtureBundle,
                          origins: tuple[str, ...] = ("image",)) -> dict:
    """Precision/recall/F1 of aligned sentence pairs against ground truth.

    ``pairs`` may be SentencePair objects or corpus rows; matching is on
    normalized (left, right) text tuples.
    """
    predicted = set()
    for p in pairs:
        left = getattr(p, "left_text", None)
        right = getattr(p, "right_text", None)
        if left is None:
            left, right = p.left.text, p.right.text
        predicted.add((_norm_text(left), _norm_text(right)))
    expected = {(_norm_text(sp["left"]), _norm_text(sp["right"]))
                for sp in bundle.sentence_pairs if sp["origin"] in origins}
    tp = len(predicted & expected)
    precision = tp / len(predicted) if predicted else 0.0
    recall = tp / len(expected) if expected else 0.0
    f1 = (2 * precision * recall / (precision + recall)) if (precision + recall) else 0.0
    return {"precision": precision, "recall": recall, "f1": f1,
            "tp": tp, "predicted": len(predicted), "expected": len(expected)}
