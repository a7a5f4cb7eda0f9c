"""Scale-invariant image matching: the pivot-photo similarity function.

Implements the full SIFT-style pipeline from scratch: a
difference-of-Gaussians scale space, sub-pixel extremum refinement with
contrast and edge-response filtering, dominant gradient orientations, the
4x4x8 trilinearly-interpolated descriptor, and Lowe ratio-test matching
with a mutual one-to-one assignment. The normalized match count is the
similarity score used to decide whether two article photos are the same
picture.

Everything here is pure and deterministic: identical inputs and
parameters produce bit-identical results, which is what makes the
article-pairing threshold well-defined and cacheable. OpenCV is used
only for Gaussian blur and resizing; detection, description and matching
are implemented in this module.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Sequence

import cv2
import numpy as np

logger = logging.getLogger(__name__)

MIN_IMAGE_SIDE = 32

# descriptor geometry (standard published construction)
DESCRIPTOR_WIDTH = 4          # 4x4 spatial grid
DESCRIPTOR_BINS = 8           # orientation bins per cell
DESCRIPTOR_SIZE = DESCRIPTOR_WIDTH * DESCRIPTOR_WIDTH * DESCRIPTOR_BINS
DESCRIPTOR_CLAMP = 0.2
DESCRIPTOR_SCALE_FACTOR = 3.0
ORI_BINS = 36
ORI_SIGMA_FACTOR = 1.5
ORI_RADIUS_FACTOR = 3.0
ORI_PEAK_RATIO = 0.8
ASSUMED_BLUR = 0.5
BORDER = 5
MAX_REFINE_STEPS = 5


class FeatureError(Exception):
    pass


@dataclass(frozen=True)
class FeatureMatchParams:
    octaves: int = 4
    scales: int = 3
    sigma: float = 1.6
    contrast_threshold: float = 0.04
    edge_threshold: float = 10.0
    ratio: float = 0.75
    similarity_threshold: float = 0.25
    max_dim: int = 1024

    def __post_init__(self):
        if not (0.0 < self.ratio < 1.0):
            raise FeatureError(f"ratio must be in (0,1), got {self.ratio}")
        if not (0.0 <= self.similarity_threshold <= 1.0):
            raise FeatureError("similarity_threshold must be in [0,1]")
        if self.octaves < 1 or self.scales < 1:
            raise FeatureError("octaves and scales must be >= 1")

    @classmethod
    def from_dict(cls, d: dict) -> "FeatureMatchParams":
        known = {k: v for k, v in d.items() if k in cls.__dataclass_fields__}
        return cls(**known)


@dataclass(frozen=True)
class Keypoint:
    """A refined DoG extremum in source-image coordinates."""

    x: float
    y: float
    scale: float                 # absolute pyramid sigma
    orientation: float           # radians in [0, 2*pi)
    response: float
    octave: int = field(default=0, compare=False)
    layer: int = field(default=0, compare=False)


@dataclass(frozen=True)
class Descriptor:
    vector: np.ndarray = field(compare=False)
    keypoint: Keypoint

    def __post_init__(self):
        if self.vector.shape != (DESCRIPTOR_SIZE,):
            raise FeatureError(f"descriptor must be {DESCRIPTOR_SIZE}-d")


@dataclass(frozen=True)
class MatchResult:
    pairs: tuple[tuple[int, int, float], ...]
    score: float


# --- scale-space construction -------------------------------------------------

def _as_float(gray: np.ndarray) -> np.ndarray:
    img = np.asarray(gray)
    if img.ndim != 2:
        raise FeatureError("expected a 2-D grayscale raster")
    if img.dtype == np.uint8:
        return img.astype(np.float64) / 255.0
    return img.astype(np.float64)


def _check_size(img: np.ndarray):
    h, w = img.shape
    if h < MIN_IMAGE_SIDE or w < MIN_IMAGE_SIDE:
        raise FeatureError(f"image {w}x{h} below the {MIN_IMAGE_SIDE}px minimum")


def _blur(img: np.ndarray, sigma: float) -> np.ndarray:
    return cv2.GaussianBlur(img, (0, 0), sigmaX=sigma, sigmaY=sigma)


def _gaussian_pyramid(img: np.ndarray, params: FeatureMatchParams) -> list[list[np.ndarray]]:
    s = params.scales
    k = 2.0 ** (1.0 / s)
    base_sigma = math.sqrt(max(params.sigma ** 2 - ASSUMED_BLUR ** 2, 0.01))
    base = _blur(img, base_sigma)

    incremental = []
    for i in range(1, s + 3):
        prev = params.sigma * (k ** (i - 1))
        total = prev * k
        incremental.append(math.sqrt(total ** 2 - prev ** 2))

    pyramid = []
    current = base
    for _ in range(params.octaves):
        if min(current.shape) < 2 * BORDER + 3:
            break
        octave = [current]
        for sig in incremental:
            octave.append(_blur(octave[-1], sig))
        pyramid.append(octave)
        nxt = octave[s]  # the image at 2x base sigma seeds the next octave
        current = nxt[::2, ::2]
    return pyramid


def _dog_pyramid(gauss: list[list[np.ndarray]]) -> list[np.ndarray]:
    return [np.stack([octave[i + 1] - octave[i] for i in range(len(octave) - 1)])
            for octave in gauss]


# --- keypoint detection ---------------------------------------------------------

def _candidate_extrema(dog: np.ndarray, threshold: float) -> np.ndarray:
    """(layer, y, x) candidates that are 26-neighborhood extrema."""
    from scipy.ndimage import maximum_filter, minimum_filter

    footprint = np.ones((3, 3, 3), bool)
    maxima = (dog == maximum_filter(dog, footprint=footprint, mode="nearest"))
    minima = (dog == minimum_filter(dog, footprint=footprint, mode="nearest"))
    strong = np.abs(dog) > threshold
    mask = (maxima | minima) & strong
    mask[0, :, :] = False
    mask[-1, :, :] = False
    mask[:, :BORDER, :] = False
    mask[:, -BORDER:, :] = False
    mask[:, :, :BORDER] = False
    mask[:, :, -BORDER:] = False
    return np.argwhere(mask)


def _refine(dog: np.ndarray, layer: int, y: int, x: int,
            params: FeatureMatchParams) -> tuple[float, float, float, float] | None:
    """Quadratic sub-pixel refinement; returns (layer+dl, y+dy, x+dx, value)."""
    n_layers, h, w = dog.shape
    for _ in range(MAX_REFINE_STEPS):
        cube = dog[layer - 1:layer + 2, y - 1:y + 2, x - 1:x + 2]
        dx = 0.5 * (cube[1, 1, 2] - cube[1, 1, 0])
        dy = 0.5 * (cube[1, 2, 1] - cube[1, 0, 1])
        ds = 0.5 * (cube[2, 1, 1] - cube[0, 1, 1])
        grad = np.array([dx, dy, ds])
        c = cube[1, 1, 1]
        dxx = cube[1, 1, 2] - 2 * c + cube[1, 1, 0]
        dyy = cube[1, 2, 1] - 2 * c + cube[1, 0, 1]
        dss = cube[2, 1, 1] - 2 * c + cube[0, 1, 1]
        dxy = 0.25 * (cube[1, 2, 2] - cube[1, 2, 0] - cube[1, 0, 2] + cube[1, 0, 0])
        dxs = 0.25 * (cube[2, 1, 2] - cube[2, 1, 0] - cube[0, 1, 2] + cube[0, 1, 0])
        dys = 0.25 * (cube[2, 2, 1] - cube[2, 0, 1] - cube[0, 2, 1] + cube[0, 0, 1])
        hess = np.array([[dxx, dxy, dxs], [dxy, dyy, dys], [dxs, dys, dss]])
        try:
            offset = -np.linalg.solve(hess, grad)
        except np.linalg.LinAlgError:
            return None
        if np.all(np.abs(offset) < 0.5):
            value = c + 0.5 * float(grad @ offset)
            # contrast filter on the interpolated value
            if abs(value) * params.scales < params.contrast_threshold:
                return None
            # edge-response filter on the spatial Hessian
            tr = dxx + dyy
            det = dxx * dyy - dxy * dxy
            r = params.edge_threshold
            if det <= 0 or tr * tr * r >= det * (r + 1) ** 2:
                return None
            return (layer + float(offset[2]), y + float(offset[1]),
                    x + float(offset[0]), value)
        x += int(round(float(offset[0])))
        y += int(round(float(offset[1])))
        layer += int(round(float(offset[2])))
        if (layer < 1 or layer > n_layers - 2 or
                x < BORDER or x >= w - BORDER or y < BORDER or y >= h - BORDER):
            return None
    return None


def _gradients(img: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    dx = np.zeros_like(img)
    dy = np.zeros_like(img)
    dx[:, 1:-1] = 0.5 * (img[:, 2:] - img[:, :-2])
    dy[1:-1, :] = 0.5 * (img[2:, :] - img[:-2, :])
    return dx, dy


def _orientations(img: np.ndarray, x: float, y: float, sigma_local: float) -> list[float]:
    """Dominant gradient orientations around one keypoint, in radians."""
    h, w = img.shape
    sig = ORI_SIGMA_FACTOR * sigma_local
    radius = int(round(ORI_RADIUS_FACTOR * sig))
    cx, cy = int(round(x)), int(round(y))
    y0, y1 = max(cy - radius, 1), min(cy + radius + 1, h - 1)
    x0, x1 = max(cx - radius, 1), min(cx + radius + 1, w - 1)
    if y1 <= y0 or x1 <= x0:
        return []
    patch = img[y0 - 1:y1 + 1, x0 - 1:x1 + 1]
    gx = 0.5 * (patch[1:-1, 2:] - patch[1:-1, :-2])
    gy = 0.5 * (patch[2:, 1:-1] - patch[:-2, 1:-1])
    mag = np.sqrt(gx * gx + gy * gy)
    ang = np.arctan2(gy, gx)  # [-pi, pi]
    ys, xs = np.mgrid[y0:y1, x0:x1]
    weight = np.exp(-((ys - cy) ** 2 + (xs - cx) ** 2) / (2.0 * sig * sig))

    bins = ((ang + np.pi) * (ORI_BINS / (2.0 * np.pi))).astype(int) % ORI_BINS
    hist = np.bincount(bins.ravel(), weights=(mag * weight).ravel(), minlength=ORI_BINS)
    # smooth with the [1, 4, 6, 4, 1]/16 kernel, circularly
    sm = (6 * hist + 4 * (np.roll(hist, 1) + np.roll(hist, -1))
          + np.roll(hist, 2) + np.roll(hist, -2)) / 16.0

    peak_mask = (sm > np.roll(sm, 1)) & (sm > np.roll(sm, -1))
    if not peak_mask.any() or sm.max() <= 0:
        return []
    out = []
    vmax = sm.max()
    for idx in np.flatnonzero(peak_mask):
        if sm[idx] < ORI_PEAK_RATIO * vmax:
            continue
        left = sm[(idx - 1) % ORI_BINS]
        right = sm[(idx + 1) % ORI_BINS]
        denom = left - 2 * sm[idx] + right
        interp = idx + (0.5 * (left - right) / denom if denom != 0 else 0.0)
        theta = ((interp + 0.5) * (2.0 * np.pi / ORI_BINS) - np.pi) % (2.0 * np.pi)
        out.append(float(theta))
    return sorted(out)


def detect_keypoints(gray: np.ndarray,
                     params: FeatureMatchParams | None = None) -> list[Keypoint]:
    """DoG extrema refined to sub-pixel, filtered, with orientations."""
    params = params or FeatureMatchParams()
    img = _as_float(gray)
    _check_size(img)
    h, w = img.shape
    gauss = _gaussian_pyramid(img, params)
    dogs = _dog_pyramid(gauss)
    prefilter = 0.5 * params.contrast_threshold / params.scales

    keypoints: list[Keypoint] = []
    for octave_idx, dog in enumerate(dogs):
        scale_up = 2.0 ** octave_idx
        candidates = _candidate_extrema(dog, prefilter)
        for layer, yy, xx in candidates:
            refined = _refine(dog, int(layer), int(yy), int(xx), params)
            if refined is None:
                continue
            flayer, fy, fx, value = refined
            x_img = fx * scale_up
            y_img = fy * scale_up
            if not (0.0 <= x_img <= w - 1 and 0.0 <= y_img <= h - 1):
                continue
            sigma_abs = params.sigma * (2.0 ** (octave_idx + flayer / params.scales))
            sigma_local = params.sigma * (2.0 ** (flayer / params.scales))
            ori_img = gauss[octave_idx][min(int(round(flayer)), len(gauss[octave_idx]) - 1)]
            for theta in _orientations(ori_img, fx, fy, sigma_local):
                keypoints.append(Keypoint(
                    x=float(x_img), y=float(y_img), scale=float(sigma_abs),
                    orientation=theta, response=abs(float(value)),
                    octave=octave_idx, layer=int(round(flayer))))

    # drop exact duplicates, order deterministically
    seen = set()
    unique = []
    for kp in sorted(keypoints, key=lambda k: (k.y, k.x, k.scale, k.orientation)):
        sig = (round(kp.x, 2), round(kp.y, 2), round(kp.scale, 2), round(kp.orientation, 3))
        if sig in seen:
            continue
        seen.add(sig)
        unique.append(kp)
    return unique


# --- descriptors ------------------------------------------------------------------

def _descriptor_for(img: np.ndarray, gx: np.ndarray, gy: np.ndarray,
                    kp: Keypoint, octave_idx: int) -> np.ndarray | None:
    h, w = img.shape
    scale_down = 2.0 ** octave_idx
    x = kp.x / scale_down
    y = kp.y / scale_down
    sigma_local = kp.scale / scale_down
    d = DESCRIPTOR_WIDTH
    nbins = DESCRIPTOR_BINS
    hist_width = DESCRIPTOR_SCALE_FACTOR * sigma_local
    half = int(round(hist_width * math.sqrt(2) * (d + 1) * 0.5))
    if half < 1:
        return None
    cx, cy = int(round(x)), int(round(y))
    # window exceeding the layer bounds drops the keypoint (contract)
    if cx - half < 1 or cx + half >= w - 1 or cy - half < 1 or cy + half >= h - 1:
        return None

    offs = np.arange(-half, half + 1, dtype=np.float64)
    col_off, row_off = np.meshgrid(offs, offs)
    cos_t = math.cos(kp.orientation)
    sin_t = math.sin(kp.orientation)
    # rotate offsets into the keypoint frame
    row_rot = -col_off * sin_t + row_off * cos_t
    col_rot = col_off * cos_t + row_off * sin_t
    row_bin = row_rot / hist_width + 0.5 * d - 0.5
    col_bin = col_rot / hist_width + 0.5 * d - 0.5
    valid = (row_bin > -1) & (row_bin < d) & (col_bin > -1) & (col_bin < d)
    if not valid.any():
        return None

    rows = (cy + row_off[valid]).astype(int)
    cols = (cx + col_off[valid]).astype(int)
    mags = np.sqrt(gx[rows, cols] ** 2 + gy[rows, cols] ** 2)
    angles = np.arctan2(gy[rows, cols], gx[rows, cols])
    rel = (angles - kp.orientation) % (2.0 * np.pi)
    obin = rel * (nbins / (2.0 * np.pi))

    weight = np.exp(-((row_rot[valid] / hist_width) ** 2 +
                      (col_rot[valid] / hist_width) ** 2) / (0.5 * d * d))
    contrib = mags * weight

    rb = row_bin[valid]
    cb = col_bin[valid]
    r0 = np.floor(rb).astype(int)
    c0 = np.floor(cb).astype(int)
    o0 = np.floor(obin).astype(int)
    rf = rb - r0
    cf = cb - c0
    of = obin - o0
    o0 %= nbins

    hist = np.zeros((d + 2, d + 2, nbins))
    for dr in (0, 1):
        wr = contrib * (rf if dr else (1 - rf))
        for dc in (0, 1):
            wc = wr * (cf if dc else (1 - cf))
            for do in (0, 1):
                wo = wc * (of if do else (1 - of))
                np.add.at(hist, (r0 + 1 + dr, c0 + 1 + dc, (o0 + do) % nbins), wo)

    vec = hist[1:-1, 1:-1, :].ravel()
    norm = np.linalg.norm(vec)
    if norm < 1e-12:
        return None
    return _clamp_renormalize(vec / norm)


def _clamp_renormalize(unit: np.ndarray) -> np.ndarray | None:
    """Unit vector with every component clamped into [0, 0.2], norm kept 1.

    Solves for the scale s with ||min(s*v, 0.2)|| = 1 by bisection (the
    norm is monotone in s). Infeasible vectors, with too few active bins
    to carry unit norm under the clamp, are dropped with their keypoint.
    """
    if unit.max() <= DESCRIPTOR_CLAMP:
        return unit
    active = int((unit > 1e-12).sum())
    if DESCRIPTOR_CLAMP * math.sqrt(active) < 1.0 - 1e-12:
        return None
    lo, hi = 1.0, 2.0
    while np.linalg.norm(np.minimum(hi * unit, DESCRIPTOR_CLAMP)) < 1.0 and hi < 1e9:
        hi *= 2.0
    for _ in range(80):
        mid = 0.5 * (lo + hi)
        if np.linalg.norm(np.minimum(mid * unit, DESCRIPTOR_CLAMP)) < 1.0:
            lo = mid
        else:
            hi = mid
    vec = np.minimum(hi * unit, DESCRIPTOR_CLAMP)
    norm = np.linalg.norm(vec)
    return vec / norm


def compute_descriptors(gray: np.ndarray, keypoints: Sequence[Keypoint],
                        params: FeatureMatchParams | None = None) -> list[Descriptor]:
    """128-d descriptors for keypoints detected on the same raster."""
    params = params or FeatureMatchParams()
    img = _as_float(gray)
    _check_size(img)
    gauss = _gaussian_pyramid(img, params)
    grads: dict[tuple[int, int], tuple[np.ndarray, np.ndarray]] = {}

    out: list[Descriptor] = []
    for kp in keypoints:
        if kp.octave >= len(gauss):
            continue
        layer = min(kp.layer, len(gauss[kp.octave]) - 1)
        key = (kp.octave, layer)
        if key not in grads:
            grads[key] = _gradients(gauss[kp.octave][layer])
        gx, gy = grads[key]
        vec = _descriptor_for(gauss[kp.octave][layer], gx, gy, kp, kp.octave)
        if vec is not None:
            out.append(Descriptor(vector=vec, keypoint=kp))
    return out


# --- matching ----------------------------------------------------------------------

def match_descriptors(a: Sequence[Descriptor], b: Sequence[Descriptor],
                      ratio: float = 0.75) -> MatchResult:
    """Ratio-test matching with a greedy mutual one-to-one assignment.

    score = kept pairs / min(|a|, |b|); 0 when either side is empty.
    """
    if not (0.0 < ratio < 1.0):
        raise FeatureError(f"ratio must be in (0,1), got {ratio}")
    if not a or not b:
        return MatchResult(pairs=(), score=0.0)
    mat_a = np.stack([d.vector for d in a])
    mat_b = np.stack([d.vector for d in b])
    d2 = (np.sum(mat_a ** 2, axis=1)[:, None] + np.sum(mat_b ** 2, axis=1)[None, :]
          - 2.0 * (mat_a @ mat_b.T))
    np.maximum(d2, 0.0, out=d2)
    dist = np.sqrt(d2)

    candidates = []
    for i in range(dist.shape[0]):
        row = dist[i]
        j = int(np.argmin(row))
        d1 = float(row[j])
        if row.size >= 2:
            d2nd = float(np.partition(row, 1)[1])
        else:
            d2nd = math.inf
        if d1 < ratio * d2nd or (d2nd == math.inf and d1 < math.inf):
            candidates.append((d1, i, j))

    candidates.sort(key=lambda t: (t[0], t[1], t[2]))
    used_a: set[int] = set()
    used_b: set[int] = set()
    pairs = []
    for d1, i, j in candidates:
        if i in used_a or j in used_b:
            continue
        used_a.add(i)
        used_b.add(j)
        pairs.append((i, j, d1))
    score = len(pairs) / min(len(a), len(b))
    return MatchResult(pairs=tuple(pairs), score=float(score))


# --- end-to-end similarity -----------------------------------------------------------

def _downscale(gray: np.ndarray, max_dim: int) -> np.ndarray:
    h, w = gray.shape
    longest = max(h, w)
    if longest <= max_dim:
        return gray
    factor = max_dim / longest
    return cv2.resize(gray, (max(int(round(w * factor)), 1), max(int(round(h * factor)), 1)),
                      interpolation=cv2.INTER_AREA)


def describe_image(gray: np.ndarray,
                   params: FeatureMatchParams | None = None) -> list[Descriptor]:
    """Detect + describe after the max_dim downscale; cache-friendly unit."""
    params = params or FeatureMatchParams()
    small = _downscale(np.asarray(gray), params.max_dim)
    kps = detect_keypoints(small, params)
    return compute_descriptors(small, kps, params)


def image_similarity(img_a: np.ndarray, img_b: np.ndarray,
                     params: FeatureMatchParams | None = None) -> float:
    """Full detect -> describe -> match pipeline; score in [0, 1]."""
    params = params or FeatureMatchParams()
    da = describe_image(img_a, params)
    db = describe_image(img_b, params)
    return match_descriptors(da, db, params.ratio).score
