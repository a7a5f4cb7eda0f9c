"""Page store: ingest, label and index newspaper page images.

Pages arrive as a local directory of raster files plus a JSON manifest
(one entry per source file, multi-page TIFFs allowed). Ingestion never
fails atomically: per-entry problems are collected as error records and
the surviving pages form an immutable, indexable PageSet.
"""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import dataclass, field
from datetime import date as Date
from pathlib import Path

import numpy as np
from PIL import Image, ImageSequence

logger = logging.getLogger(__name__)

MIN_PAGE_SIDE = 32

IMAGE_SUFFIXES = {".png", ".jpg", ".jpeg", ".tif", ".tiff"}


class PageStoreError(Exception):
    """Raised for page-store failures that are not per-entry ingest errors."""


@dataclass(frozen=True)
class IngestError:
    """One manifest entry that could not be turned into pages."""

    entry_index: int
    file: str
    reason: str


@dataclass(frozen=True)
class PageImage:
    """One labeled newspaper page raster.

    ``gray`` is always present (8-bit luma); ``color`` is kept when the
    source had color planes. Downstream feature matching reads ``gray``.
    """

    page_id: str
    language: str
    date: Date
    page_number: int
    gray: np.ndarray = field(compare=False)
    color: np.ndarray | None = field(default=None, compare=False)
    dpi: int = 300

    def __post_init__(self):
        h, w = self.gray.shape[:2]
        if h < MIN_PAGE_SIDE or w < MIN_PAGE_SIDE:
            raise PageStoreError(
                f"page {self.language}/{self.date}/{self.page_number}: "
                f"raster {w}x{h} below the {MIN_PAGE_SIDE}px floor"
            )
        if self.page_number < 1:
            raise PageStoreError(f"page_number must be positive, got {self.page_number}")
        if self.dpi < 1:
            raise PageStoreError(f"dpi must be positive, got {self.dpi}")

    @property
    def shape(self) -> tuple[int, int]:
        return self.gray.shape[0], self.gray.shape[1]

    @property
    def key(self) -> tuple[str, str, int]:
        return (self.language, self.date.isoformat(), self.page_number)


@dataclass(frozen=True)
class PageSet:
    """Immutable collection of ingested pages plus the manifest digest."""

    pages: tuple[PageImage, ...]
    manifest_digest: str
    languages: tuple[str, str]
    errors: tuple[IngestError, ...] = ()

    def __post_init__(self):
        seen = set()
        for p in self.pages:
            if p.key in seen:
                raise PageStoreError(f"duplicate (language, date, page) triple {p.key}")
            seen.add(p.key)

    def page(self, page_id: str) -> PageImage:
        for p in self.pages:
            if p.page_id == page_id:
                return p
        raise KeyError(page_id)


def luma(color: np.ndarray) -> np.ndarray:
    """8-bit luma plane: 0.299R + 0.587G + 0.114B, rounded half-up."""
    rgb = color.astype(np.float64)
    y = 0.299 * rgb[..., 0] + 0.587 * rgb[..., 1] + 0.114 * rgb[..., 2]
    return np.floor(y + 0.5).clip(0, 255).astype(np.uint8)


def pixel_digest(gray: np.ndarray, color: np.ndarray | None = None) -> str:
    h = hashlib.sha256()
    h.update(f"{gray.shape[0]}x{gray.shape[1]}".encode())
    h.update(np.ascontiguousarray(gray).tobytes())
    if color is not None:
        h.update(b"color")
        h.update(np.ascontiguousarray(color).tobytes())
    return h.hexdigest()


def page_id_for(language: str, date: Date, page_number: int, gray: np.ndarray,
                color: np.ndarray | None = None) -> str:
    """Content-derived page identity, reproducible across reruns."""
    digest = pixel_digest(gray, color)
    raw = f"{language}|{date.isoformat()}|{page_number}|{digest}"
    return hashlib.sha256(raw.encode()).hexdigest()[:16]


def make_page(language: str, date: Date, page_number: int, gray: np.ndarray,
              color: np.ndarray | None = None, dpi: int = 300) -> PageImage:
    return PageImage(
        page_id=page_id_for(language, date, page_number, gray, color),
        language=language,
        date=date,
        page_number=page_number,
        gray=gray,
        color=color,
        dpi=dpi,
    )


def _frames(img: Image.Image):
    for frame in ImageSequence.Iterator(img):
        yield frame.copy()


def _planes(frame: Image.Image) -> tuple[np.ndarray, np.ndarray | None]:
    if frame.mode in ("L", "1", "I;16", "I"):
        gray = np.asarray(frame.convert("L"), dtype=np.uint8)
        return gray, None
    color = np.asarray(frame.convert("RGB"), dtype=np.uint8)
    return luma(color), color


def ingest_bundle(source_dir: str | Path, manifest: str | Path,
                  languages: tuple[str, str] | None = None) -> PageSet:
    """Ingest all manifest entries under ``source_dir`` into a PageSet.

    Manifest: JSON array of {"file", "language", "date": "YYYY-MM-DD",
    "page_start": int}. Multi-page documents are split into one page per
    frame, numbered from ``page_start``. Per-entry failures (missing
    file, unreadable raster, duplicate triple, unregistered language)
    become IngestError records instead of aborting the bundle.
    """
    source_dir = Path(source_dir)
    manifest_path = Path(manifest)
    manifest_bytes = manifest_path.read_bytes()
    manifest_digest = hashlib.sha256(manifest_bytes).hexdigest()
    try:
        entries = json.loads(manifest_bytes)
    except json.JSONDecodeError as exc:
        raise PageStoreError(f"manifest {manifest_path} is not valid JSON: {exc}") from exc
    if not isinstance(entries, list):
        raise PageStoreError("manifest must be a JSON array of entries")

    if languages is None:
        ordered = []
        for e in entries:
            lang = e.get("language")
            if lang and lang not in ordered:
                ordered.append(lang)
        if len(ordered) != 2:
            raise PageStoreError(
                f"manifest must name exactly two languages, found {ordered}"
            )
        languages = (ordered[0], ordered[1])

    pages: list[PageImage] = []
    errors: list[IngestError] = []
    seen: set[tuple[str, str, int]] = set()

    for idx, entry in enumerate(entries):
        fname = entry.get("file", "<missing>")

        def fail(reason: str):
            logger.warning("ingest entry %d (%s): %s", idx, fname, reason)
            errors.append(IngestError(entry_index=idx, file=fname, reason=reason))

        try:
            language = entry["language"]
            date = Date.fromisoformat(entry["date"])
            page_start = int(entry.get("page_start", 1))
        except (KeyError, ValueError, TypeError) as exc:
            fail(f"bad entry fields: {exc}")
            continue
        if language not in languages:
            fail(f"language {language!r} is not one of the registered pair {languages}")
            continue
        path = source_dir / fname
        if not path.is_file():
            fail("file not found")
            continue
        try:
            with Image.open(path) as img:
                frames = list(_frames(img))
        except Exception as exc:
            fail(f"unreadable image: {exc}")
            continue

        entry_pages = []
        entry_ok = True
        for offset, frame in enumerate(frames):
            number = page_start + offset
            key = (language, date.isoformat(), number)
            if key in seen:
                fail(f"duplicate (language, date, page) triple {key}")
                entry_ok = False
                break
            gray, color = _planes(frame)
            try:
                page = make_page(language, date, number, gray, color)
            except PageStoreError as exc:
                fail(str(exc))
                entry_ok = False
                break
            entry_pages.append((key, page))
        if not entry_ok:
            continue
        for key, page in entry_pages:
            seen.add(key)
            pages.append(page)

    pages.sort(key=lambda p: p.key)
    return PageSet(
        pages=tuple(pages),
        manifest_digest=manifest_digest,
        languages=languages,
        errors=tuple(errors),
    )


def get_pages(page_set: PageSet, language: str, date: Date) -> list[PageImage]:
    """All pages matching both filters, ordered by page number."""
    hits = [p for p in page_set.pages if p.language == language and p.date == date]
    hits.sort(key=lambda p: p.page_number)
    return hits


def dates_in(page_set: PageSet) -> list[Date]:
    return sorted({p.date for p in page_set.pages})


# --- on-disk store -------------------------------------------------------

def save_store(page_set: PageSet, out_dir: str | Path) -> Path:
    """Persist a PageSet as PNG pages plus a JSON index."""
    out_dir = Path(out_dir)
    pages_dir = out_dir / "pages"
    pages_dir.mkdir(parents=True, exist_ok=True)
    index = {
        "manifest_digest": page_set.manifest_digest,
        "languages": list(page_set.languages),
        "pages": [],
        "errors": [
            {"entry_index": e.entry_index, "file": e.file, "reason": e.reason}
            for e in page_set.errors
        ],
    }
    for p in page_set.pages:
        fname = f"{p.page_id}.png"
        if p.color is not None:
            Image.fromarray(p.color, mode="RGB").save(pages_dir / fname)
        else:
            Image.fromarray(p.gray, mode="L").save(pages_dir / fname)
        index["pages"].append({
            "page_id": p.page_id,
            "language": p.language,
            "date": p.date.isoformat(),
            "page_number": p.page_number,
            "dpi": p.dpi,
            "file": f"pages/{fname}",
            "has_color": p.color is not None,
        })
    index_path = out_dir / "pageset.json"
    index_path.write_text(json.dumps(index, indent=2, sort_keys=True), encoding="utf-8")
    return index_path


def load_store(store_dir: str | Path) -> PageSet:
    store_dir = Path(store_dir)
    index_path = store_dir / "pageset.json"
    if not index_path.is_file():
        raise PageStoreError(f"no pageset.json under {store_dir}")
    index = json.loads(index_path.read_text(encoding="utf-8"))
    pages = []
    for rec in index["pages"]:
        path = store_dir / rec["file"]
        with Image.open(path) as img:
            if rec["has_color"]:
                color = np.asarray(img.convert("RGB"), dtype=np.uint8)
                gray = luma(color)
            else:
                color = None
                gray = np.asarray(img.convert("L"), dtype=np.uint8)
        pages.append(PageImage(
            page_id=rec["page_id"],
            language=rec["language"],
            date=Date.fromisoformat(rec["date"]),
            page_number=rec["page_number"],
            gray=gray,
            color=color,
            dpi=rec.get("dpi", 300),
        ))
    errors = tuple(
        IngestError(e["entry_index"], e["file"], e["reason"])
        for e in index.get("errors", [])
    )
    return PageSet(
        pages=tuple(pages),
        manifest_digest=index["manifest_digest"],
        languages=tuple(index["languages"]),
        errors=errors,
    )
