"""Layout segmentation: partition a page into articles and typed ROIs.

Article boundaries come from a recursive XY-cut over ink projections,
with ruled lines (long straight runs) honored as hard separators; a
framed box never splits internally because its borders keep every
projection non-zero. ROI kinds are assigned by measurable heuristics
(line-height ratio for headlines, ink density plus run structure for
images, image proximity for captions); anything ambiguous defaults to
Content, which can only dilute downstream matching, never corrupt it.

Alternatively, externally produced region annotations can be loaded,
bypassing segmentation entirely while enforcing the same invariants.
"""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterable, Sequence

import cv2
import numpy as np

logger = logging.getLogger(__name__)

OVERLAP_TOLERANCE_PX = 2


class LayoutError(Exception):
    pass


class AnnotationError(LayoutError):
    pass


class SerializationError(LayoutError):
    pass


class RoiKind(str, Enum):
    HEADLINE = "headline"
    IMAGE = "image"
    CAPTION = "caption"
    CONTENT = "content"
    UNCLASSIFIED = "unclassified"

    @property
    def marker(self) -> str:
        return {"headline": "H", "image": "I", "caption": "P", "content": "C"}[self.value]

    @classmethod
    def from_marker(cls, ch: str) -> "RoiKind":
        return {"H": cls.HEADLINE, "I": cls.IMAGE, "P": cls.CAPTION, "C": cls.CONTENT}[ch]


@dataclass(frozen=True)
class Box:
    """Axis-aligned rectangle in page pixel coordinates."""

    x: int
    y: int
    w: int
    h: int

    def __post_init__(self):
        if self.w <= 0 or self.h <= 0:
            raise LayoutError(f"box must have positive extent, got {self}")

    @property
    def x2(self) -> int:
        return self.x + self.w

    @property
    def y2(self) -> int:
        return self.y + self.h

    @property
    def area(self) -> int:
        return self.w * self.h

    def iou(self, other: "Box") -> float:
        x1, y1 = max(self.x, other.x), max(self.y, other.y)
        x2, y2 = min(self.x2, other.x2), min(self.y2, other.y2)
        if x2 <= x1 or y2 <= y1:
            return 0.0
        inter = (x2 - x1) * (y2 - y1)
        return inter / (self.area + other.area - inter)

    def shrunk(self, px: int) -> "Box | None":
        if self.w <= 2 * px or self.h <= 2 * px:
            return None
        return Box(self.x + px, self.y + px, self.w - 2 * px, self.h - 2 * px)

    def contains(self, other: "Box") -> bool:
        return (self.x <= other.x and self.y <= other.y
                and self.x2 >= other.x2 and self.y2 >= other.y2)

    def as_list(self) -> list[int]:
        return [self.x, self.y, self.w, self.h]


@dataclass(frozen=True)
class Roi:
    kind: RoiKind
    box: Box
    seq_index: int = 0
    sub_index: int | None = None
    embed_level: int = 0

    def __post_init__(self):
        if self.kind is RoiKind.HEADLINE and self.sub_index is None:
            raise LayoutError(f"headline roi at {self.box} needs a sub_index")
        if self.kind not in (RoiKind.HEADLINE, RoiKind.UNCLASSIFIED) and self.sub_index is not None:
            raise LayoutError(f"sub_index is headline-only, got {self.kind} at {self.box}")
        if self.embed_level not in (0, 1):
            raise LayoutError("embed_level must be 0 or 1")

    @property
    def key(self) -> tuple[str, int, int]:
        return (self.kind.value, self.seq_index, -1 if self.sub_index is None else self.sub_index)


@dataclass
class ArticleRecord:
    """One segmented article: typed ROIs plus the texts filled by OCR.

    ``bounds`` is the article's full page region (ruled frame included);
    the roi union can be narrower because frame ink belongs to no ROI.
    """

    article_id: str
    page_id: str
    rois: list[Roi]
    parent: str | None = None
    embed_level: int = 0
    embed_ordinal: int = 0
    bounds: Box | None = None
    texts: dict[tuple, str] = field(default_factory=dict)
    image_files: dict[tuple, str] = field(default_factory=dict, compare=False)
    errors: list[str] = field(default_factory=list, compare=False)

    def __post_init__(self):
        if self.embed_level > 1:
            raise LayoutError("embedded articles nest at most one level deep")
        if (self.parent is None) != (self.embed_level == 0):
            raise LayoutError("parent must be set exactly for embedded articles")

    @property
    def hull(self) -> Box:
        if self.bounds is not None:
            return self.bounds
        if not self.rois:
            raise LayoutError(f"article {self.article_id} has no rois")
        x1 = min(r.box.x for r in self.rois)
        y1 = min(r.box.y for r in self.rois)
        x2 = max(r.box.x2 for r in self.rois)
        y2 = max(r.box.y2 for r in self.rois)
        return Box(x1, y1, x2 - x1, y2 - y1)

    def rois_of(self, kind: RoiKind) -> list[Roi]:
        return [r for r in self.rois if r.kind is kind]

    def text_of(self, kind: RoiKind) -> str:
        parts = []
        for roi in sorted(self.rois_of(kind), key=lambda r: (r.seq_index, r.sub_index or 0)):
            t = self.texts.get(roi.key)
            if t:
                parts.append(t)
        return " ".join(parts)


@dataclass(frozen=True)
class SegmentationParams:
    ink_threshold: int = 160
    blank_ink_frac: float = 0.005
    article_gap: int = 18
    block_row_gap: int = 6
    block_col_gap: int = 16
    ruled_min_frac: float = 0.6
    ruled_max_thickness: int = 6
    frame_min_frac: float = 0.8
    edge_tolerance: int = 4
    headline_ratio: float = 1.8
    image_density: float = 0.35
    image_run_frac: float = 0.6
    image_min_lines: float = 3.0
    caption_gap_lines: float = 1.5
    caption_width_factor: float = 1.2
    min_block_side: int = 3

    @classmethod
    def from_dict(cls, d: dict) -> "SegmentationParams":
        known = {k: v for k, v in d.items() if k in cls.__dataclass_fields__}
        return cls(**known)


def article_id_for(page_id: str, hull: Box, salt: str = "") -> str:
    raw = f"{page_id}|{hull.x},{hull.y},{hull.w},{hull.h}|{salt}"
    return hashlib.sha256(raw.encode()).hexdigest()[:16]


# --- low-level ink analysis -------------------------------------------------

def _runs(mask_1d: np.ndarray) -> list[tuple[int, int]]:
    """Half-open (start, end) runs of True in a 1-D boolean array."""
    padded = np.concatenate(([False], mask_1d, [False]))
    edges = np.flatnonzero(np.diff(padded.astype(np.int8)))
    return list(zip(edges[::2].tolist(), edges[1::2].tolist()))


def _tighten(ink: np.ndarray, box: Box) -> Box | None:
    sub = ink[box.y:box.y2, box.x:box.x2]
    rows = np.flatnonzero(sub.any(axis=1))
    cols = np.flatnonzero(sub.any(axis=0))
    if rows.size == 0 or cols.size == 0:
        return None
    return Box(box.x + int(cols[0]), box.y + int(rows[0]),
               int(cols[-1] - cols[0] + 1), int(rows[-1] - rows[0] + 1))


def _ruled_lines(sub: np.ndarray, axis: int, min_frac: float) -> np.ndarray:
    """Boolean per row (axis=0) or column (axis=1) with an ink run >= min_frac of extent."""
    h, w = sub.shape
    length = max(3, int(round(min_frac * (w if axis == 0 else h))))
    u8 = sub.astype(np.uint8)
    kernel = np.ones((1, length), np.uint8) if axis == 0 else np.ones((length, 1), np.uint8)
    eroded = cv2.erode(u8, kernel)
    return eroded.any(axis=1) if axis == 0 else eroded.any(axis=0)


def _gap_cuts(profile_has_ink: np.ndarray, min_gap: int) -> list[tuple[int, int]]:
    """Interior all-white runs of length >= min_gap, as cut bands."""
    gaps = _runs(~profile_has_ink)
    n = profile_has_ink.size
    return [(a, b) for a, b in gaps if a > 0 and b < n and (b - a) >= min_gap]


def _is_frame_edge(sub: np.ndarray, band: tuple[int, int], axis: int) -> bool:
    """True when a ruled band's run endpoints connect to perpendicular rules.

    A lone separator rule hangs free; the border of a framed box meets
    vertical rules at both ends, and splitting there would shatter the box.
    """
    a, b = band
    reach = 12
    if axis == 0:
        line = sub[a:b].any(axis=0)
        runs = _runs(line)
        if not runs:
            return False
        c0, c1 = max(runs, key=lambda r: r[1] - r[0])
        h = sub.shape[0]
        above = sub[max(0, a - reach):a]
        below = sub[b:min(h, b + reach)]

        def anchored(cols):
            return (above[:, cols].any(axis=1).sum() + below[:, cols].any(axis=1).sum()) >= 8

        return anchored(slice(c0, min(c0 + 3, c1))) and anchored(slice(max(c1 - 3, c0), c1))
    line = sub[:, a:b].any(axis=1)
    runs = _runs(line)
    if not runs:
        return False
    r0, r1 = max(runs, key=lambda r: r[1] - r[0])
    w = sub.shape[1]
    left = sub[:, max(0, a - reach):a]
    right = sub[:, b:min(w, b + reach)]

    def anchored(rows):
        return (left[rows].any(axis=0).sum() + right[rows].any(axis=0).sum()) >= 8

    return anchored(slice(r0, min(r0 + 3, r1))) and anchored(slice(max(r1 - 3, r0), r1))


def _ruled_cuts(sub: np.ndarray, axis: int, params: SegmentationParams) -> list[tuple[int, int]]:
    ruled = _ruled_lines(sub, axis, params.ruled_min_frac)
    bands = _runs(ruled)
    n = ruled.size
    tol = params.edge_tolerance
    # a separator is a thin rule, not a solid block (photos are long runs too)
    return [(a, b) for a, b in bands
            if a > tol and b < n - tol
            and (b - a) <= params.ruled_max_thickness
            and not _is_frame_edge(sub, (a, b), axis)]


def _segments(cuts: list[tuple[int, int]], size: int) -> list[tuple[int, int]]:
    out = []
    pos = 0
    for a, b in sorted(cuts):
        if a > pos:
            out.append((pos, a))
        pos = max(pos, b)
    if pos < size:
        out.append((pos, size))
    return out


def _split_region(ink: np.ndarray, box: Box, row_gap: int, col_gap: int,
                  use_ruled: bool, params: SegmentationParams) -> list[Box]:
    box = _tighten(ink, box)
    if box is None:
        return []
    if box.w < params.min_block_side or box.h < params.min_block_side:
        return []
    sub = ink[box.y:box.y2, box.x:box.x2]

    row_cuts = _gap_cuts(sub.any(axis=1), row_gap)
    if row_cuts:
        leaves = []
        for a, b in _segments(row_cuts, box.h):
            leaves.extend(_split_region(ink, Box(box.x, box.y + a, box.w, b - a),
                                        row_gap, col_gap, use_ruled, params))
        return leaves

    col_cuts = _gap_cuts(sub.any(axis=0), col_gap)
    if col_cuts:
        leaves = []
        for a, b in _segments(col_cuts, box.w):
            leaves.extend(_split_region(ink, Box(box.x + a, box.y, b - a, box.h),
                                        row_gap, col_gap, use_ruled, params))
        return leaves

    if use_ruled:
        for axis in (0, 1):
            cuts = _ruled_cuts(sub, axis, params)
            if not cuts:
                continue
            leaves = []
            size = box.h if axis == 0 else box.w
            for a, b in _segments(cuts, size):
                nxt = (Box(box.x, box.y + a, box.w, b - a) if axis == 0
                       else Box(box.x + a, box.y, b - a, box.h))
                leaves.extend(_split_region(ink, nxt, row_gap, col_gap, use_ruled, params))
            return leaves

    return [box]


def _is_framed(ink: np.ndarray, box: Box, params: SegmentationParams) -> bool:
    """True if the box's own edges are ruled lines on all four sides."""
    sub = ink[box.y:box.y2, box.x:box.x2]
    tol = params.edge_tolerance
    if box.w <= 2 * tol or box.h <= 2 * tol:
        return False
    need_w = params.frame_min_frac * box.w
    need_h = params.frame_min_frac * box.h

    def longest(mask_1d):
        runs = _runs(mask_1d)
        return max((b - a for a, b in runs), default=0)

    top = max(longest(sub[i]) for i in range(tol))
    bottom = max(longest(sub[-1 - i]) for i in range(tol))
    left = max(longest(sub[:, i]) for i in range(tol))
    right = max(longest(sub[:, -1 - i]) for i in range(tol))
    return top >= need_w and bottom >= need_w and left >= need_h and right >= need_h


def _strip_frame(ink: np.ndarray, box: Box, params: SegmentationParams) -> np.ndarray:
    """Copy of the page ink with the box's border rules erased."""
    out = ink.copy()
    sub = out[box.y:box.y2, box.x:box.x2]
    tol = params.edge_tolerance
    h, w = sub.shape
    for i in list(range(tol)) + list(range(h - tol, h)):
        runs = _runs(sub[i])
        for a, b in runs:
            if b - a >= params.frame_min_frac * w:
                sub[i, a:b] = False
    for j in list(range(tol)) + list(range(w - tol, w)):
        runs = _runs(sub[:, j])
        for a, b in runs:
            if b - a >= params.frame_min_frac * h:
                sub[a:b, j] = False
    return out


@dataclass(frozen=True)
class _BlockStats:
    box: Box
    density: float
    run_heights: tuple[int, ...]

    @property
    def n_lines(self) -> int:
        return len(self.run_heights)

    @property
    def median_line_height(self) -> float:
        return float(np.median(self.run_heights)) if self.run_heights else 0.0

    @property
    def max_run_height(self) -> int:
        return max(self.run_heights, default=0)


def _block_stats(ink: np.ndarray, box: Box) -> _BlockStats:
    sub = ink[box.y:box.y2, box.x:box.x2]
    density = float(sub.mean())
    runs = _runs(sub.any(axis=1))
    return _BlockStats(box=box, density=density,
                       run_heights=tuple(b - a for a, b in runs))


def _looks_like_image(stats: _BlockStats, page_median_line: float,
                      params: SegmentationParams) -> bool:
    if stats.density <= params.image_density:
        return False
    if stats.box.h < params.image_min_lines * max(page_median_line, 1.0):
        return False
    return stats.max_run_height >= params.image_run_frac * stats.box.h


def _page_median_line_height(ink: np.ndarray, blocks: Iterable[_BlockStats]) -> float:
    multi = [s.median_line_height for s in blocks
             if s.n_lines >= 2 and s.max_run_height < 0.6 * s.box.h]
    if multi:
        return float(np.median(multi))
    all_runs = [h for s in blocks for h in s.run_heights]
    return float(np.median(all_runs)) if all_runs else 1.0


# --- segmentation -----------------------------------------------------------

def _article_regions(ink: np.ndarray, params: SegmentationParams) -> list[Box]:
    h, w = ink.shape
    whole = _tighten(ink, Box(0, 0, w, h))
    if whole is None:
        return []
    return _split_region(ink, whole, params.article_gap, params.article_gap,
                         use_ruled=True, params=params)


def _blocks_within(ink: np.ndarray, hull: Box, params: SegmentationParams) -> list[Box]:
    interior_ink = _strip_frame(ink, hull, params) if _is_framed(ink, hull, params) else ink
    return _split_region(interior_ink, hull, params.block_row_gap,
                         params.block_col_gap, use_ruled=False, params=params)


def segment_page(page, params: SegmentationParams | None = None) -> list[ArticleRecord]:
    """Partition one page into articles with unclassified ROI boxes.

    Embedded articles (a fully framed sub-region with its own
    headline-height line) are split off as child records with ``parent``
    set. A blank page (ink coverage below the floor) yields an empty
    list and a logged warning.
    """
    params = params or SegmentationParams()
    ink = page.gray < params.ink_threshold
    if float(ink.mean()) < params.blank_ink_frac:
        logger.warning("page %s: ink coverage below %.2f%%, treating as blank",
                       page.page_id, params.blank_ink_frac * 100)
        return []

    hulls = _article_regions(ink, params)

    # first pass: blocks per article, page-wide line statistics
    per_article: list[tuple[Box, list[Box]]] = []
    all_stats: list[_BlockStats] = []
    for hull in hulls:
        blocks = _blocks_within(ink, hull, params)
        per_article.append((hull, blocks))
        all_stats.extend(_block_stats(ink, b) for b in blocks)
    page_median = _page_median_line_height(ink, all_stats)

    records: list[ArticleRecord] = []
    for hull, blocks in per_article:
        if not blocks:
            logger.warning("page %s: article region %s has no content blocks",
                           page.page_id, hull)
            continue
        parent_id = article_id_for(page.page_id, hull)
        parent_rois: list[Roi] = []
        children: list[tuple[Box, list[Roi]]] = []
        for block in blocks:
            if _is_framed(ink, block, params):
                inner = _blocks_within(ink, block, params)
                inner_stats = [_block_stats(ink, b) for b in inner]
                has_headline = any(
                    s.n_lines >= 1
                    and s.median_line_height >= params.headline_ratio * page_median
                    and not _looks_like_image(s, page_median, params)
                    for s in inner_stats)
                if inner and has_headline:
                    children.append((block, [Roi(RoiKind.UNCLASSIFIED, b, embed_level=1)
                                             for b in inner]))
                    continue
                if inner:
                    parent_rois.extend(Roi(RoiKind.UNCLASSIFIED, b) for b in inner)
                    continue
            parent_rois.append(Roi(RoiKind.UNCLASSIFIED, block))
        if not parent_rois:
            logger.warning("page %s: article %s had only embedded content, keeping frame",
                           page.page_id, hull)
            parent_rois = [Roi(RoiKind.UNCLASSIFIED, hull)]
        records.append(ArticleRecord(article_id=parent_id, page_id=page.page_id,
                                     rois=parent_rois, bounds=hull))
        for k, (child_bounds, child_rois) in enumerate(children, start=1):
            records.append(ArticleRecord(
                article_id=article_id_for(page.page_id, child_bounds, salt=f"embed{k}"),
                page_id=page.page_id,
                rois=child_rois,
                parent=parent_id,
                embed_level=1,
                embed_ordinal=k,
                bounds=child_bounds,
            ))
    return records


# --- classification ----------------------------------------------------------

def _reading_order(boxes: Sequence[Box]) -> list[int]:
    """Indices in band-then-column order (top-to-bottom bands, left-to-right)."""
    order = sorted(range(len(boxes)), key=lambda i: (boxes[i].y, boxes[i].x))
    bands: list[list[int]] = []
    band_bottom = -1
    for i in order:
        b = boxes[i]
        if not bands or b.y >= band_bottom:
            bands.append([i])
            band_bottom = b.y2
        else:
            bands[-1].append(i)
            band_bottom = max(band_bottom, b.y2)
    out: list[int] = []
    for band in bands:
        out.extend(sorted(band, key=lambda i: (boxes[i].x, boxes[i].y)))
    return out


def classify_rois(article: ArticleRecord, page,
                  params: SegmentationParams | None = None,
                  page_median_line: float | None = None) -> ArticleRecord:
    """Assign the four ROI kinds and reading-order indices.

    Idempotent: kinds and indices are recomputed from geometry alone.
    ``page_median_line`` may be precomputed once per page; otherwise the
    page is re-scanned for line statistics.
    """
    params = params or SegmentationParams()
    ink = page.gray < params.ink_threshold
    if page_median_line is None:
        page_median_line = page_line_median(page, params)

    stats = [_block_stats(ink, roi.box) for roi in article.rois]
    kinds: list[RoiKind] = []
    for s in stats:
        if _looks_like_image(s, page_median_line, params):
            kinds.append(RoiKind.IMAGE)
        elif (s.n_lines >= 1
              and s.median_line_height >= params.headline_ratio * page_median_line):
            kinds.append(RoiKind.HEADLINE)
        else:
            kinds.append(RoiKind.CONTENT)

    # captions: non-headline text block just under an image, about its width
    image_idx = [i for i, k in enumerate(kinds) if k is RoiKind.IMAGE]
    caption_pairing: dict[int, int] = {}
    for i, k in enumerate(kinds):
        if k is not RoiKind.CONTENT:
            continue
        line_h = max(stats[i].median_line_height, 1.0)
        best_j, best_gap = None, None
        for j in image_idx:
            img = article.rois[j].box
            cap = article.rois[i].box
            gap = cap.y - img.y2
            x_overlap = min(cap.x2, img.x2) - max(cap.x, img.x)
            if gap < -OVERLAP_TOLERANCE_PX or gap > params.caption_gap_lines * line_h:
                continue
            if x_overlap < 0.3 * cap.w:
                continue
            if cap.w > params.caption_width_factor * img.w:
                continue
            if best_gap is None or gap < best_gap:
                best_j, best_gap = j, gap
        if best_j is not None:
            kinds[i] = RoiKind.CAPTION
            caption_pairing[i] = best_j

    order = _reading_order([r.box for r in article.rois])
    head_seq = 1 + article.embed_ordinal
    image_seq: dict[int, int] = {}
    new_rois: list[Roi | None] = [None] * len(article.rois)
    counters = {RoiKind.IMAGE: 0, RoiKind.CONTENT: 0}
    sub_counter = 0
    for i in order:
        kind = kinds[i]
        box = article.rois[i].box
        if kind is RoiKind.HEADLINE:
            new_rois[i] = Roi(kind, box, seq_index=head_seq, sub_index=sub_counter,
                              embed_level=article.embed_level)
            sub_counter += 1
        elif kind is RoiKind.IMAGE:
            counters[RoiKind.IMAGE] += 1
            image_seq[i] = counters[RoiKind.IMAGE]
            new_rois[i] = Roi(kind, box, seq_index=image_seq[i],
                              embed_level=article.embed_level)
        elif kind is RoiKind.CONTENT:
            counters[RoiKind.CONTENT] += 1
            new_rois[i] = Roi(kind, box, seq_index=counters[RoiKind.CONTENT],
                              embed_level=article.embed_level)
    for i in order:  # captions take their image's sequence number
        if kinds[i] is RoiKind.CAPTION:
            new_rois[i] = Roi(RoiKind.CAPTION, article.rois[i].box,
                              seq_index=image_seq[caption_pairing[i]],
                              embed_level=article.embed_level)

    ordered = [new_rois[i] for i in order]
    article.rois = ordered
    return article


def page_line_median(page, params: SegmentationParams | None = None) -> float:
    """Median text-line height over the page's multi-line blocks."""
    params = params or SegmentationParams()
    ink = page.gray < params.ink_threshold
    hulls = _article_regions(ink, params)
    stats = []
    for hull in hulls:
        for block in _blocks_within(ink, hull, params):
            stats.append(_block_stats(ink, block))
    return _page_median_line_height(ink, stats)


def finalize_family_indices(records: list[ArticleRecord]) -> list[ArticleRecord]:
    """Continue I/P/C numbering from parent into embedded children.

    Headline seq_index already encodes the hierarchy (1 for the parent,
    1+k for the k-th child); image/caption/content sequences run across
    the family in reading order so an embedded content block after the
    parent's C_1 becomes C_2.
    """
    by_parent: dict[str, list[ArticleRecord]] = {}
    for rec in records:
        if rec.parent is not None:
            by_parent.setdefault(rec.parent, []).append(rec)
    for rec in records:
        if rec.parent is not None:
            continue
        offsets = {RoiKind.IMAGE: 0, RoiKind.CONTENT: 0, RoiKind.CAPTION: 0}
        for roi in rec.rois:
            if roi.kind in (RoiKind.IMAGE, RoiKind.CONTENT):
                offsets[roi.kind] = max(offsets[roi.kind], roi.seq_index)
        offsets[RoiKind.CAPTION] = offsets[RoiKind.IMAGE]
        children = sorted(by_parent.get(rec.article_id, []),
                          key=lambda r: r.embed_ordinal)
        for child in children:
            shifted = []
            remap = {}
            for roi in child.rois:
                if roi.kind in (RoiKind.IMAGE, RoiKind.CONTENT, RoiKind.CAPTION):
                    new_seq = roi.seq_index + offsets[roi.kind]
                    new_roi = Roi(roi.kind, roi.box, seq_index=new_seq,
                                  sub_index=roi.sub_index, embed_level=roi.embed_level)
                    remap[roi.key] = new_roi.key
                    shifted.append(new_roi)
                else:
                    shifted.append(roi)
                    remap[roi.key] = roi.key
            child.texts = {remap.get(k, k): v for k, v in child.texts.items()}
            child.image_files = {remap.get(k, k): v for k, v in child.image_files.items()}
            child.rois = shifted
            for kind in (RoiKind.IMAGE, RoiKind.CONTENT):
                seqs = [r.seq_index for r in child.rois_of(kind)]
                if seqs:
                    offsets[kind] = max(offsets[kind], max(seqs))
            offsets[RoiKind.CAPTION] = offsets[RoiKind.IMAGE]
    return records


# --- invariants --------------------------------------------------------------

def _check_article_invariants(rec: ArticleRecord, page_shape: tuple[int, int] | None,
                              where: str):
    if not rec.rois:
        raise AnnotationError(f"{where}: article {rec.article_id} has no rois")
    if page_shape is not None:
        h, w = page_shape
        for roi in rec.rois:
            b = roi.box
            if b.x < 0 or b.y < 0 or b.x2 > w or b.y2 > h:
                raise AnnotationError(
                    f"{where}: roi box {b.as_list()} outside page bounds {w}x{h}")
    boxes = [r.box for r in rec.rois]
    for i in range(len(boxes)):
        for j in range(i + 1, len(boxes)):
            a, b = boxes[i], boxes[j]
            ox = min(a.x2, b.x2) - max(a.x, b.x)
            oy = min(a.y2, b.y2) - max(a.y, b.y)
            if ox > OVERLAP_TOLERANCE_PX and oy > OVERLAP_TOLERANCE_PX:
                raise AnnotationError(
                    f"{where}: rois {a.as_list()} and {b.as_list()} overlap beyond "
                    f"{OVERLAP_TOLERANCE_PX}px in article {rec.article_id}")
    if any(r.kind is not RoiKind.UNCLASSIFIED for r in rec.rois):
        image_seqs = {r.seq_index for r in rec.rois_of(RoiKind.IMAGE)}
        for cap in rec.rois_of(RoiKind.CAPTION):
            if cap.seq_index not in image_seqs:
                raise AnnotationError(
                    f"{where}: caption P_{cap.seq_index} in article {rec.article_id} "
                    f"has no matching image I_{cap.seq_index}")


# --- annotation files ---------------------------------------------------------

def _roi_to_json(roi: Roi) -> dict:
    d = {"kind": roi.kind.value, "box": roi.box.as_list(), "seq_index": roi.seq_index,
         "embed_level": roi.embed_level}
    if roi.sub_index is not None:
        d["sub_index"] = roi.sub_index
    return d


def _roi_from_json(d: dict) -> Roi:
    b = d["box"]
    return Roi(kind=RoiKind(d["kind"]), box=Box(b[0], b[1], b[2], b[3]),
               seq_index=d.get("seq_index", 0), sub_index=d.get("sub_index"),
               embed_level=d.get("embed_level", 0))


def _key_str(key: tuple) -> str:
    return f"{key[0]}|{key[1]}|{key[2]}"


def _key_from_str(s: str) -> tuple:
    kind, seq, sub = s.split("|")
    return (kind, int(seq), int(sub))


def articles_to_json(records: Sequence[ArticleRecord]) -> list[dict]:
    out = []
    for rec in records:
        d = {
            "article_id": rec.article_id,
            "page_id": rec.page_id,
            "embed_level": rec.embed_level,
            "embed_ordinal": rec.embed_ordinal,
            "rois": [_roi_to_json(r) for r in rec.rois],
        }
        if rec.bounds is not None:
            d["bounds"] = rec.bounds.as_list()
        if rec.parent is not None:
            d["parent"] = rec.parent
        if rec.texts:
            d["texts"] = {_key_str(k): v for k, v in sorted(rec.texts.items())}
        if rec.image_files:
            d["image_files"] = {_key_str(k): v for k, v in sorted(rec.image_files.items())}
        out.append(d)
    return out


def save_annotations(records: Sequence[ArticleRecord], path: str | Path):
    Path(path).write_text(
        json.dumps(articles_to_json(records), indent=2, sort_keys=True, ensure_ascii=False),
        encoding="utf-8")


def load_annotations(path: str | Path, page_set=None) -> list[ArticleRecord]:
    """Reconstruct ArticleRecords exactly as annotated, enforcing invariants.

    ``page_set`` (when given) anchors page_id resolution and bounds checks;
    unknown page ids or invariant violations raise AnnotationError naming
    the offending record.
    """
    raw = json.loads(Path(path).read_text(encoding="utf-8"))
    records: list[ArticleRecord] = []
    ids = set()
    for i, d in enumerate(raw):
        where = f"annotation[{i}]"
        try:
            rois = [_roi_from_json(r) for r in d["rois"]]
            bounds = d.get("bounds")
            rec = ArticleRecord(
                article_id=d["article_id"],
                page_id=d["page_id"],
                rois=rois,
                parent=d.get("parent"),
                embed_level=d.get("embed_level", 1 if d.get("parent") else 0),
                embed_ordinal=d.get("embed_ordinal", 0),
                bounds=Box(*bounds) if bounds else None,
                texts={_key_from_str(k): v for k, v in d.get("texts", {}).items()},
            )
            rec.image_files = {_key_from_str(k): v for k, v in d.get("image_files", {}).items()}
        except (KeyError, LayoutError, ValueError) as exc:
            raise AnnotationError(f"{where}: malformed record: {exc}") from exc
        page_shape = None
        if page_set is not None:
            try:
                page_shape = page_set.page(rec.page_id).shape
            except KeyError:
                raise AnnotationError(
                    f"{where}: unknown page_id {rec.page_id!r} in article {rec.article_id}")
        _check_article_invariants(rec, page_shape, where)
        if rec.article_id in ids:
            raise AnnotationError(f"{where}: duplicate article_id {rec.article_id}")
        ids.add(rec.article_id)
        records.append(rec)
    by_id = {r.article_id: r for r in records}
    for rec in records:
        if rec.parent is not None:
            parent = by_id.get(rec.parent)
            if parent is None:
                raise AnnotationError(
                    f"article {rec.article_id} references unknown parent {rec.parent}")
            if parent.parent is not None:
                raise AnnotationError(
                    f"article {rec.article_id}: embedded articles nest at most one level")
            if not parent.hull.contains(rec.hull):
                raise AnnotationError(
                    f"article {rec.article_id}: rois outside parent hull")
    return records


# --- marker-text documents ------------------------------------------------------

def serialize_article(article: ArticleRecord) -> str:
    """Emit the marker-text document for one article.

    One marker line per ROI (``[H|seq|sub]`` for headlines, ``[K|seq]``
    otherwise) followed by that ROI's text; Image ROIs reference their
    exported PNG instead of text.
    """
    lines = [
        f"#article {article.article_id} page={article.page_id} "
        f"parent={article.parent or '-'} level={article.embed_level}"
    ]
    for roi in article.rois:
        if roi.kind is RoiKind.UNCLASSIFIED:
            raise SerializationError(
                f"roi at {roi.box.as_list()} in article {article.article_id} is unclassified")
        if roi.kind is RoiKind.IMAGE:
            fname = article.image_files.get(
                roi.key, f"{article.article_id}_I{roi.seq_index}.png")
            lines.append(f"[I|{roi.seq_index}] file={fname}")
            continue
        text = article.texts.get(roi.key)
        if text is None:
            raise SerializationError(
                f"missing text for roi {roi.kind.marker}|{roi.seq_index} "
                f"in article {article.article_id}")
        if roi.kind is RoiKind.HEADLINE:
            lines.append(f"[H|{roi.seq_index}|{roi.sub_index}]")
        else:
            lines.append(f"[{roi.kind.marker}|{roi.seq_index}]")
        lines.append(text)
    return "\n".join(lines) + "\n"
