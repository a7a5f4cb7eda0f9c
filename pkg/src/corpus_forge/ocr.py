"""OCR ensemble: pluggable engine adapters plus majority voting.

Character recognition itself is out of scope; engines are external
commands or in-process stubs. The voter aligns every candidate against a
pivot (the longest text) by minimum-edit-distance and takes the per-column
majority character, so a single bad engine cannot corrupt the output.
"""

from __future__ import annotations

import hashlib
import logging
import shlex
import subprocess
import tempfile
import unicodedata
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from PIL import Image

from .layout import Box

logger = logging.getLogger(__name__)

GAP = None  # aligned-column placeholder for "engine has no character here"


class OcrError(Exception):
    """All engines failed for a region; carries per-engine diagnostics."""

    def __init__(self, message: str, diagnostics: dict[str, str] | None = None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


@dataclass(frozen=True)
class OcrCandidate:
    engine_id: str
    text: str
    confidence: float | None = None

    def __post_init__(self):
        if not self.engine_id:
            raise ValueError("engine_id must be non-empty")


@dataclass(frozen=True)
class OcrEngineAdapter:
    """One configured engine. Priority 1 is the strongest tie-breaker.

    ``command`` is a shell-less template run as an external process with
    ``{image}`` replaced by a temp PNG path; stdout is the UTF-8 result.
    ``runner`` is the in-process alternative used by stubs and the mock
    engine; it receives the region pixels plus (page_id, box) context.
    """

    engine_id: str
    priority: int
    command: str | None = None
    runner: Callable[..., str] | None = field(default=None, compare=False)

    def __post_init__(self):
        if self.priority < 1:
            raise ValueError("priority must be a positive integer")
        if (self.command is None) == (self.runner is None):
            raise ValueError("exactly one of command/runner must be set")

    def run(self, pixels: np.ndarray, page_id: str | None = None,
            box: Box | None = None) -> str:
        if self.runner is not None:
            return self.runner(pixels, page_id=page_id, box=box)
        with tempfile.NamedTemporaryFile(suffix=".png", delete=False) as tmp:
            tmp_path = Path(tmp.name)
        try:
            Image.fromarray(pixels, mode="L").save(tmp_path)
            argv = [a.replace("{image}", str(tmp_path)) for a in shlex.split(self.command)]
            proc = subprocess.run(argv, capture_output=True, timeout=120)
            if proc.returncode != 0:
                raise RuntimeError(
                    f"exit {proc.returncode}: {proc.stderr.decode('utf-8', 'replace')[:200]}"
                )
            return proc.stdout.decode("utf-8", "replace")
        finally:
            tmp_path.unlink(missing_ok=True)


def _check_ensemble(ensemble: Sequence[OcrEngineAdapter]):
    if not ensemble:
        raise ValueError("ensemble must be non-empty")
    priorities = [e.priority for e in ensemble]
    if len(set(priorities)) != len(priorities):
        raise ValueError(f"engine priorities must be unique, got {priorities}")


def run_engines(page, box: Box, ensemble: Sequence[OcrEngineAdapter]) -> list[OcrCandidate]:
    """Run every engine over one page region; collect the survivors.

    Failures are logged per engine; if every engine fails the error
    carries all diagnostics.
    """
    _check_ensemble(ensemble)
    region = page.gray[box.y:box.y + box.h, box.x:box.x + box.w]
    candidates: list[OcrCandidate] = []
    diagnostics: dict[str, str] = {}
    for engine in ensemble:
        try:
            text = engine.run(region, page_id=page.page_id, box=box)
            candidates.append(OcrCandidate(engine_id=engine.engine_id, text=text.strip("\n")))
        except Exception as exc:
            diagnostics[engine.engine_id] = str(exc)
            logger.warning("engine %s failed on %s %s: %s",
                           engine.engine_id, page.page_id, box, exc)
    if not candidates:
        raise OcrError(f"all {len(ensemble)} engines failed for {page.page_id} {box}",
                       diagnostics)
    return candidates


# --- voting ---------------------------------------------------------------

def _align_to_pivot(pivot: str, text: str) -> tuple[list, list[list[str]]]:
    """Globally align ``text`` against ``pivot``.

    Minimum edit distance, with ties broken toward the alignment with the
    most exact matches so identical characters line up (that secondary
    objective is what the hand-derived voting cases assume). Returns one
    aligned symbol (char or GAP) per pivot position, plus the runs of
    inserted characters that fall before each pivot position and after
    the last one.
    """
    m, n = len(pivot), len(text)
    # combined metric: cost * BIG - matches, additive along the path
    big = m + n + 2
    prev = np.empty(n + 1, dtype=np.int64)
    prev[:] = np.arange(n + 1) * big  # row 0: j insertions
    moves = np.empty((m + 1, n + 1), dtype=np.uint8)  # 0 diag, 1 up(del), 2 left(ins)
    moves[0, :] = 2
    moves[0, 0] = 0
    cur = np.empty(n + 1, dtype=np.int64)
    for i in range(1, m + 1):
        pc = pivot[i - 1]
        cur[0] = prev[0] + big
        moves[i, 0] = 1
        for j in range(1, n + 1):
            if pc == text[j - 1]:
                diag = prev[j - 1] + 0 * big - 1
            else:
                diag = prev[j - 1] + big
            up = prev[j] + big
            left = cur[j - 1] + big
            # preference on equal score: diagonal, then up, then left
            best, mv = diag, 0
            if up < best:
                best, mv = up, 1
            if left < best:
                best, mv = left, 2
            cur[j] = best
            moves[i, j] = mv
        prev, cur = cur, prev

    aligned: list = [GAP] * m
    inserts: list[list[str]] = [[] for _ in range(m + 1)]
    i, j = m, n
    while i > 0 or j > 0:
        mv = moves[i, j]
        if mv == 0 and i > 0 and j > 0:
            aligned[i - 1] = text[j - 1]
            i -= 1
            j -= 1
        elif mv == 1 and i > 0:
            i -= 1
        else:
            inserts[i].append(text[j - 1])
            j -= 1
    for run in inserts:
        run.reverse()
    return aligned, inserts


def _majority(symbols: list, priorities: list[int]):
    """Majority symbol of one aligned column; priority breaks ties."""
    counts: dict = {}
    for sym in symbols:
        counts[sym] = counts.get(sym, 0) + 1
    best_count = max(counts.values())
    tied = {sym for sym, c in counts.items() if c == best_count}
    if len(tied) == 1:
        return next(iter(tied))
    for _, sym in sorted(zip(priorities, symbols)):
        if sym in tied:
            return sym
    return next(iter(tied))  # unreachable


def vote(candidates: Sequence[OcrCandidate],
         ensemble: Sequence[OcrEngineAdapter]) -> str:
    """Combine candidate texts by per-column character majority.

    The pivot is the longest candidate (priority breaks length ties);
    every other candidate is aligned to it by minimum edit distance, and
    each aligned column (including insertion slots between pivot
    positions) takes its majority character. A single candidate is
    returned verbatim.
    """
    if not candidates:
        raise ValueError("vote requires at least one candidate")
    _check_ensemble(ensemble)
    priority_of = {e.engine_id: e.priority for e in ensemble}
    for cand in candidates:
        if cand.engine_id not in priority_of:
            raise ValueError(f"candidate engine {cand.engine_id!r} not in ensemble")

    texts = [(unicodedata.normalize("NFC", c.text), priority_of[c.engine_id])
             for c in candidates]
    if len(texts) == 1:
        return texts[0][0]

    pivot = min(texts, key=lambda t: (-len(t[0]), t[1]))[0]
    m = len(pivot)
    cols: list[list] = [[] for _ in range(m)]
    ins_runs: list[list[list[str]]] = [[] for _ in range(m + 1)]
    priorities = []
    for text, prio in texts:
        aligned, inserts = _align_to_pivot(pivot, text)
        for i in range(m):
            cols[i].append(aligned[i])
        for i in range(m + 1):
            ins_runs[i].append(inserts[i])
        priorities.append(prio)

    out: list[str] = []

    def emit_insert_slot(slot: int):
        runs = ins_runs[slot]
        width = max(len(r) for r in runs)
        for k in range(width):
            symbols = [r[k] if k < len(r) else GAP for r in runs]
            sym = _majority(symbols, priorities)
            if sym is not GAP:
                out.append(sym)

    for i in range(m):
        emit_insert_slot(i)
        sym = _majority(cols[i], priorities)
        if sym is not GAP:
            out.append(sym)
    emit_insert_slot(m)
    return "".join(out)


# --- per-article extraction ------------------------------------------------

def export_image_roi(page, article, roi, out_dir: str | Path) -> str:
    """Write one Image ROI as PNG, named <article_id>_I<seq>.png."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    box = roi.box
    name = f"{article.article_id}_I{roi.seq_index}.png"
    pixels = page.gray[box.y:box.y + box.h, box.x:box.x + box.w]
    Image.fromarray(pixels, mode="L").save(out_dir / name)
    return name


def extract_text(article, page, ensemble: Sequence[OcrEngineAdapter],
                 image_dir: str | Path | None = None):
    """Fill the article's texts map by running the ensemble per ROI.

    Headline/Caption/Content ROIs get their voted string; Image ROIs are
    exported as PNG (when ``image_dir`` is given) and referenced via
    ``article.image_files``. Per-ROI engine wipeouts are recorded on
    ``article.errors`` and do not abort the remaining ROIs.
    """
    from .layout import RoiKind

    article.errors.clear()
    for roi in article.rois:
        if roi.kind is RoiKind.IMAGE:
            if image_dir is not None:
                article.image_files[roi.key] = export_image_roi(page, article, roi, image_dir)
            continue
        try:
            candidates = run_engines(page, roi.box, ensemble)
            article.texts[roi.key] = vote(candidates, ensemble)
        except OcrError as exc:
            article.errors.append(f"roi {roi.key}: {exc}")
            logger.warning("extraction failed for %s roi %s: %s",
                           article.article_id, roi.key, exc)
    return article


# --- in-tree mock engine ----------------------------------------------------

_CORRUPTION_ALPHABET = "abcdefghijklmnopqrstuvwxyz"


def _box_overlap(a: Box, b: Box) -> float:
    x1 = max(a.x, b.x)
    y1 = max(a.y, b.y)
    x2 = min(a.x + a.w, b.x + b.w)
    y2 = min(a.y + a.h, b.y + b.h)
    if x2 <= x1 or y2 <= y1:
        return 0.0
    inter = (x2 - x1) * (y2 - y1)
    union = a.w * a.h + b.w * b.h - inter
    return inter / union


def make_mock_engine(engine_id: str, priority: int,
                     truth: Sequence[dict],
                     corrupt_rate: float = 0.0,
                     seed: int = 0) -> OcrEngineAdapter:
    """Deterministic engine backed by a ground-truth text sidecar.

    ``truth`` entries look like {"page_id", "box": [x,y,w,h], "text"}.
    The engine resolves a requested region to the truth entry with the
    highest box overlap on the same page. With ``corrupt_rate`` > 0 each
    character is independently substituted with that probability, seeded
    per (engine, page, box) so reruns are bit-identical.
    """
    by_page: dict[str, list[tuple[Box, str]]] = {}
    for entry in truth:
        bx = entry["box"]
        by_page.setdefault(entry["page_id"], []).append(
            (Box(bx[0], bx[1], bx[2], bx[3]), entry["text"]))

    def runner(pixels: np.ndarray, page_id: str | None = None,
               box: Box | None = None) -> str:
        if page_id is None or box is None:
            raise RuntimeError("mock engine needs page/box context")
        entries = by_page.get(page_id, [])
        best_text, best_ov = "", 0.0
        for tbox, text in entries:
            ov = _box_overlap(tbox, box)
            if ov > best_ov:
                best_ov, best_text = ov, text
        if best_ov < 0.3:
            return ""
        if corrupt_rate <= 0:
            return best_text
        key = f"{seed}|{engine_id}|{page_id}|{box.x},{box.y},{box.w},{box.h}"
        digest = hashlib.sha256(key.encode()).digest()
        rng = np.random.default_rng(int.from_bytes(digest[:8], "big"))
        chars = list(best_text)
        for i, ch in enumerate(chars):
            if ch != " " and rng.random() < corrupt_rate:
                chars[i] = _CORRUPTION_ALPHABET[int(rng.integers(len(_CORRUPTION_ALPHABET)))]
        return "".join(chars)

    return OcrEngineAdapter(engine_id=engine_id, priority=priority, runner=runner)


def make_stub_engine(engine_id: str, priority: int,
                     fn: Callable[..., str]) -> OcrEngineAdapter:
    """Engine wrapping an arbitrary in-process callable (tests)."""

    def runner(pixels, page_id=None, box=None):
        return fn(pixels)

    return OcrEngineAdapter(engine_id=engine_id, priority=priority, runner=runner)
