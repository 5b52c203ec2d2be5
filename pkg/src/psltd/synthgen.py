"""Synthetic printed pages with per-printer degradation signatures.

``render_page`` draws procedural glyphs on a white page and returns the
clean raster with its ground truth.  ``apply_profile`` then imprints a
printer's signature in a fixed order: dot gain, edge raggedness, banding and
additive toner noise, followed by clamping to the bit depth.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import ndimage

from .errors import ConfigError
from .imaging import EIGHT_CONNECTED, GrayImage

STYLES = ("blocky", "rounded", "slanted", "irregular")
GLYPH_HEIGHT, GLYPH_WIDTH = 50, 40
CELL_HEIGHT, CELL_WIDTH = 66, 56
PAGE_MARGIN = 16
DEFAULT_PAGE_SIZE = (1100, 850)  # rows, cols

# Per-parameter scales for ``profile_distance``; profiles further apart
# than SEPARATION_THRESHOLD are expected to be told apart by the pipeline.
PARAM_SCALES = {
    "toner_sigma": 4.0,
    "dot_gain": 0.5,
    "edge_raggedness": 0.4,
    "banding_amplitude": 6.0,
    "base_darkness": 40.0,
}
SEPARATION_THRESHOLD = 1.5


@dataclass(frozen=True)
class PrinterProfile:
    id: str
    seed: int = 0
    toner_sigma: float = 0.0
    dot_gain: float = 0.0
    banding_amplitude: float = 0.0
    banding_period: float = 32.0
    edge_raggedness: float = 0.0
    base_darkness: float = 0.0

    def __post_init__(self):
        for name in ("toner_sigma", "dot_gain", "banding_amplitude", "edge_raggedness", "base_darkness"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v >= 0):
                raise ConfigError(f"profile {self.id!r}: {name} must be finite and >= 0, got {v}")
        if not self.banding_period > 0:
            raise ConfigError(f"profile {self.id!r}: banding_period must be > 0")
        if not self.id:
            raise ConfigError("profile id must be non-empty")

    @property
    def banding(self) -> tuple[float, float]:
        return self.banding_amplitude, self.banding_period

    def to_json(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json(cls, obj: dict) -> "PrinterProfile":
        return cls(**obj)


def profile_distance(a: PrinterProfile, b: PrinterProfile) -> float:
    """Scaled Euclidean distance between two profiles' degradation parameters."""
    da, db = a.to_json(), b.to_json()
    return math.sqrt(sum(((da[k] - db[k]) / s) ** 2 for k, s in PARAM_SCALES.items()))


def default_printers(n: int = 4, seed: int = 0) -> list[PrinterProfile]:
    """``n`` mutually well separated profiles (pairwise distance above threshold)."""
    presets = [
        dict(toner_sigma=3.0, base_darkness=30.0),
        dict(toner_sigma=8.0, dot_gain=0.5, banding_amplitude=6.0, banding_period=24.0, base_darkness=40.0),
        dict(toner_sigma=14.0, dot_gain=0.2, edge_raggedness=0.3, base_darkness=50.0),
        dict(toner_sigma=22.0, dot_gain=1.0, banding_amplitude=10.0, banding_period=40.0, base_darkness=20.0),
        dict(toner_sigma=5.0, dot_gain=1.5, edge_raggedness=0.8, base_darkness=70.0),
        dict(toner_sigma=11.0, banding_amplitude=14.0, banding_period=16.0, base_darkness=60.0),
    ]
    if not 1 <= n <= len(presets):
        raise ConfigError(f"default_printers supports 1..{len(presets)} printers, got {n}")
    return [PrinterProfile(id=f"P{i}", seed=seed * 1000 + i, **presets[i]) for i in range(n)]


@dataclass
class PageTruth:
    boxes: list[tuple[int, int, int, int]]  # (x0, y0, w, h) per glyph, reading order
    ink: np.ndarray  # boolean mask of glyph ink
    style: str
    speckles: list[tuple[int, int, int, int]] = field(default_factory=list)

    def to_json(self) -> dict:
        return {
            "style": self.style,
            "boxes": [list(map(int, b)) for b in self.boxes],
            "speckles": [list(map(int, b)) for b in self.speckles],
            "ink_pixels": int(self.ink.sum()),
        }


# -- glyph drawing ----------------------------------------------------------------

def _disk(radius: float) -> np.ndarray:
    r = int(math.ceil(radius))
    yy, xx = np.mgrid[-r:r + 1, -r:r + 1]
    return yy * yy + xx * xx <= radius * radius + 1e-9


def _square(half: int) -> np.ndarray:
    return np.ones((2 * half + 1, 2 * half + 1), dtype=bool)


def _stamp_path(mask: np.ndarray, pts: np.ndarray, brush: np.ndarray) -> None:
    """Stamp ``brush`` at points densely sampled along the polyline ``pts``."""
    h = brush.shape[0] // 2
    H, W = mask.shape
    for (r0, c0), (r1, c1) in zip(pts[:-1], pts[1:]):
        steps = max(2, int(math.ceil(2 * math.hypot(r1 - r0, c1 - c0))) + 1)
        for t in np.linspace(0.0, 1.0, steps):
            r = int(round(r0 + t * (r1 - r0)))
            c = int(round(c0 + t * (c1 - c0)))
            ra, rb = max(r - h, 0), min(r + h + 1, H)
            ca, cb = max(c - h, 0), min(c + h + 1, W)
            if ra < rb and ca < cb:
                mask[ra:rb, ca:cb] |= brush[ra - (r - h):rb - (r - h), ca - (c - h):cb - (c - h)]


def _arc(center, radius, a0, a1, n=24) -> np.ndarray:
    t = np.linspace(a0, a1, n)
    return np.column_stack([center[0] + radius[0] * np.sin(t), center[1] + radius[1] * np.cos(t)])


def _glyph_strokes(style: str, rng: np.random.Generator) -> tuple[list[np.ndarray], np.ndarray]:
    """Polylines in glyph-local (row, col) coordinates plus the brush."""
    H, W = GLYPH_HEIGHT, GLYPH_WIDTH
    pad = 4
    top, bot, left, right = pad, H - 1 - pad, pad, W - 1 - pad
    strokes = []
    if style == "blocky":
        brush = _square(int(rng.integers(2, 4)))
        # a vertical stem plus horizontal bars hanging off it
        stem_c = float(rng.choice([left, (left + right) / 2, right]))
        strokes.append(np.array([[top, stem_c], [bot, stem_c]], float))
        for _ in range(int(rng.integers(1, 4))):
            r = float(rng.uniform(top, bot))
            strokes.append(np.array([[r, left], [r, right]], float))
        if rng.random() < 0.5:
            c = float(rng.uniform(left, right))
            r = float(rng.uniform(top, bot))
            strokes.append(np.array([[r, c], [bot, c]], float))
    elif style == "rounded":
        brush = _disk(float(rng.uniform(2.0, 3.2)))
        cy, cx = (top + bot) / 2, (left + right) / 2
        ry, rx = (bot - top) / 2 * rng.uniform(0.6, 1.0), (right - left) / 2 * rng.uniform(0.7, 1.0)
        a0 = rng.uniform(0, 2 * np.pi)
        strokes.append(_arc((cy, cx), (ry, rx), a0, a0 + rng.uniform(1.2, 2.0) * np.pi, 40))
        # a second bowl or tail touching the first arc
        p = strokes[0][int(rng.integers(0, len(strokes[0])))]
        r2 = (ry * rng.uniform(0.3, 0.6), rx * rng.uniform(0.3, 0.6))
        b0 = rng.uniform(0, 2 * np.pi)
        bowl = _arc((p[0] - r2[0] * np.sin(b0), p[1] - r2[1] * np.cos(b0)), r2, b0, b0 + 1.5 * np.pi, 30)
        strokes.append(bowl)
    elif style == "slanted":
        brush = _disk(float(rng.uniform(1.5, 2.5)))
        shear = rng.uniform(0.25, 0.45)
        base = [np.array([[top, left + 6], [bot, left + 6]], float)]
        for _ in range(int(rng.integers(1, 3))):
            r = float(rng.uniform(top, bot))
            base.append(np.array([[r, left + 6], [r + rng.uniform(-6, 6), right - 6]], float))
        if rng.random() < 0.6:
            base.append(np.array([[top, right - 6], [bot, right - 6]], float))
        for s in base:
            s = s.copy()
            s[:, 1] += shear * (bot - s[:, 0]) - shear * (bot - top) / 2
            strokes.append(s)
    elif style == "irregular":
        brush = _disk(float(rng.uniform(1.5, 3.0)))
        p = np.array([rng.uniform(top + 10, bot - 10), rng.uniform(left + 8, right - 8)])
        pts = [p]
        for _ in range(int(rng.integers(6, 10))):
            p = np.clip(p + rng.normal(0, 14, 2), [top, left], [bot, right])
            pts.append(p)
        strokes.append(np.array(pts))
    else:
        raise ConfigError(f"unknown glyph style {style!r}; expected one of {STYLES}")
    return strokes, brush


def render_glyph(style: str, rng: np.random.Generator) -> np.ndarray:
    """Boolean ``GLYPH_HEIGHT x GLYPH_WIDTH`` mask holding one 8-connected glyph."""
    strokes, brush = _glyph_strokes(style, rng)
    mask = np.zeros((GLYPH_HEIGHT, GLYPH_WIDTH), dtype=bool)
    for s in strokes:
        _stamp_path(mask, s, brush)
    labels, n = ndimage.label(mask, structure=EIGHT_CONNECTED)
    if n > 1:
        sizes = np.bincount(labels.ravel())[1:]
        mask = labels == (1 + int(np.argmax(sizes)))
    return mask


def page_capacity(height: int, width: int) -> int:
    rows = (height - 2 * PAGE_MARGIN) // CELL_HEIGHT
    cols = (width - 2 * PAGE_MARGIN) // CELL_WIDTH
    return max(rows, 0) * max(cols, 0)


def render_page(glyph_count: int, glyph_style: str = "blocky", seed: int = 0,
                size: tuple[int, int] | None = None, bit_depth: int = 8,
                speckles: int = 0) -> tuple[GrayImage, PageTruth]:
    """Draw ``glyph_count`` glyphs (ink 0) on a white page.

    Glyphs sit in randomly chosen cells of a fixed grid, jittered within the
    cell, so neighbouring glyphs never touch.  ``speckles`` adds that many
    isolated 1-2 px dots in empty cells for exercising the size filter.
    """
    if glyph_count < 1:
        raise ConfigError("glyph_count must be >= 1")
    if glyph_style not in STYLES:
        raise ConfigError(f"unknown glyph style {glyph_style!r}; expected one of {STYLES}")
    height, width = size or DEFAULT_PAGE_SIZE
    rows = (height - 2 * PAGE_MARGIN) // CELL_HEIGHT
    cols = (width - 2 * PAGE_MARGIN) // CELL_WIDTH
    capacity = max(rows, 0) * max(cols, 0)
    if glyph_count + (1 if speckles else 0) > capacity:
        raise ConfigError(f"a {height}x{width} page holds at most {capacity} glyph cells, "
                          f"asked for {glyph_count}{' plus speckles' if speckles else ''}")
    rng = np.random.default_rng([seed, STYLES.index(glyph_style)])
    cells = np.sort(rng.choice(capacity, size=glyph_count, replace=False))
    ink = np.zeros((height, width), dtype=bool)
    boxes = []
    for cell in cells:
        cr, cc = divmod(int(cell), cols)
        glyph = render_glyph(glyph_style, rng)
        rr, ccols = np.nonzero(glyph)
        g = glyph[rr.min():rr.max() + 1, ccols.min():ccols.max() + 1]
        gh, gw = g.shape
        y0 = PAGE_MARGIN + cr * CELL_HEIGHT + int(rng.integers(0, CELL_HEIGHT - gh - 8 + 1))
        x0 = PAGE_MARGIN + cc * CELL_WIDTH + int(rng.integers(0, CELL_WIDTH - gw - 8 + 1))
        ink[y0:y0 + gh, x0:x0 + gw] |= g
        boxes.append((x0, y0, gw, gh))
    boxes.sort(key=lambda b: (b[1], b[0]))
    speck_boxes = []
    if speckles:
        free = np.setdiff1d(np.arange(capacity), cells)
        for _ in range(speckles):
            cell = int(rng.choice(free))
            cr, cc = divmod(cell, cols)
            s = int(rng.integers(1, 3))
            y0 = PAGE_MARGIN + cr * CELL_HEIGHT + int(rng.integers(4, CELL_HEIGHT - 8))
            x0 = PAGE_MARGIN + cc * CELL_WIDTH + int(rng.integers(4, CELL_WIDTH - 8))
            if ink[y0 - 2:y0 + s + 2, x0 - 2:x0 + s + 2].any():
                continue
            ink[y0:y0 + s, x0:x0 + s] = True
            speck_boxes.append((x0, y0, s, s))
    maxv = 2**bit_depth - 1
    glyph_ink = ink.copy()
    for x0, y0, w, h in speck_boxes:
        glyph_ink[y0:y0 + h, x0:x0 + w] = False
    samples = np.where(ink, 0, maxv)
    return GrayImage(samples, bit_depth), PageTruth(boxes, glyph_ink, glyph_style, speck_boxes)


# -- printer signature -------------------------------------------------------------

def _smooth_field(rng: np.random.Generator, shape, std: float, corr: float = 2.0) -> np.ndarray:
    f = ndimage.gaussian_filter(rng.standard_normal(shape), corr, mode="wrap")
    s = f.std()
    return f * (std / s) if s > 0 else f


def profile_rng(profile: PrinterProfile, page_seed: int) -> np.random.Generator:
    digest = hashlib.sha256(profile.id.encode()).digest()
    return np.random.default_rng([profile.seed, page_seed, int.from_bytes(digest[:4], "little")])


def apply_profile(clean: GrayImage, profile: PrinterProfile, page_seed: int = 0) -> GrayImage:
    """Imprint ``profile`` on a clean page (ink at 0, paper at full scale)."""
    maxv = clean.max_value
    rng = profile_rng(profile, page_seed)
    coverage = 1.0 - clean.samples.astype(np.float64) / maxv
    if profile.dot_gain > 0:
        # spread ink by ``dot_gain`` pixels with a linear partial-coverage rim
        dist = ndimage.distance_transform_edt(coverage < 0.5)
        coverage = np.maximum(coverage, np.clip(profile.dot_gain + 1.0 - dist, 0.0, 1.0))
    if profile.edge_raggedness > 0:
        rows, cols = np.indices(coverage.shape, dtype=np.float64)
        dy = _smooth_field(rng, coverage.shape, profile.edge_raggedness)
        dx = _smooth_field(rng, coverage.shape, profile.edge_raggedness)
        coverage = ndimage.map_coordinates(coverage, [rows + dy, cols + dx], order=1, mode="nearest")
    scale = maxv / 255.0
    out = maxv - coverage * (maxv - profile.base_darkness * scale)
    if profile.banding_amplitude > 0:
        r = np.arange(out.shape[0], dtype=np.float64)[:, None]
        out = out + profile.banding_amplitude * scale * np.sin(2 * np.pi * r / profile.banding_period)
    if profile.toner_sigma > 0:
        out = out + rng.normal(0.0, profile.toner_sigma * scale, size=out.shape)
    return GrayImage(np.clip(np.rint(out), 0, maxv).astype(np.int64), clean.bit_depth)


def synth_page(profile: PrinterProfile, glyph_count: int, style: str, page_seed: int,
               size: tuple[int, int] | None = None, bit_depth: int = 8) -> tuple[GrayImage, PageTruth]:
    """Render and degrade one page; the layout seed is derived from the page seed."""
    clean, truth = render_page(glyph_count, style, seed=page_seed, size=size, bit_depth=bit_depth)
    return apply_profile(clean, profile, page_seed), truth
