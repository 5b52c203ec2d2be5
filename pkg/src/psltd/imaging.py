"""Page loading, binarization and connected-component extraction."""

from __future__ import annotations

import csv
import logging
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image
from scipy import ndimage

from .errors import DataError

log = logging.getLogger(__name__)

EIGHT_CONNECTED = np.ones((3, 3), dtype=bool)


@dataclass(frozen=True)
class GrayImage:
    """Grayscale raster tagged with its bit depth.

    ``samples`` is a 2-D integer array indexed ``[row, col]``.
    """

    samples: np.ndarray
    bit_depth: int = 8

    def __post_init__(self):
        arr = np.asarray(self.samples)
        if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
            raise ValueError(f"expected a non-empty 2-D raster, got shape {arr.shape}")
        if self.bit_depth not in (8, 16):
            raise ValueError(f"bit_depth must be 8 or 16, got {self.bit_depth}")
        if not np.issubdtype(arr.dtype, np.integer):
            if not np.all(arr == np.round(arr)):
                raise ValueError("samples must be integral intensities")
            arr = arr.astype(np.int64)
        if arr.size and (arr.min() < 0 or arr.max() >= 2**self.bit_depth):
            raise ValueError(f"samples out of range for {self.bit_depth}-bit image")
        dtype = np.uint8 if self.bit_depth == 8 else np.uint16
        object.__setattr__(self, "samples", arr.astype(dtype, copy=False))

    @property
    def height(self) -> int:
        return self.samples.shape[0]

    @property
    def width(self) -> int:
        return self.samples.shape[1]

    @property
    def max_value(self) -> int:
        return 2**self.bit_depth - 1

    def crop(self, x0: int, y0: int, w: int, h: int) -> "GrayImage":
        return GrayImage(self.samples[y0:y0 + h, x0:x0 + w].copy(), self.bit_depth)


@dataclass(frozen=True)
class Component:
    bbox: tuple[int, int, int, int]  # (x0, y0, w, h), page coordinates
    crop: GrayImage
    area: int
    page_id: str = ""
    ordinal: int = 0

    @property
    def width(self) -> int:
        return self.bbox[2]

    @property
    def height(self) -> int:
        return self.bbox[3]


@dataclass(frozen=True)
class SizeBounds:
    min_w: int = 15
    min_h: int = 30
    max_w: int = 90
    max_h: int = 100


@dataclass(frozen=True)
class FilterPolicy:
    area_lo_factor: float = 0.5
    area_hi_factor: float = 4.0
    size_bounds: SizeBounds | None = None

    def __post_init__(self):
        if not self.area_lo_factor < self.area_hi_factor:
            raise ValueError("area_lo_factor must be smaller than area_hi_factor")


def load_image(path, luma: bool = False) -> GrayImage:
    """Read a PNG or PGM page.

    Color images are rejected unless ``luma`` is set, in which case they are
    converted with BT.601 weights.
    """
    path = Path(path)
    try:
        img = Image.open(path)
        img.load()
    except (OSError, ValueError) as exc:
        raise DataError(f"cannot read image {path}: {exc}") from exc

    if img.mode == "L":
        return GrayImage(np.asarray(img), 8)
    if img.mode in ("I;16", "I;16B", "I;16L", "I"):
        arr = np.asarray(img)
        if arr.min(initial=0) < 0 or arr.max(initial=0) > 65535:
            raise DataError(f"{path}: intensities outside the 16-bit range")
        return GrayImage(arr.astype(np.uint16), 16)
    if img.mode in ("RGB", "RGBA", "P", "LA"):
        if not luma:
            raise DataError(f"{path}: color image ({img.mode}); pass --luma to convert")
        rgb = np.asarray(img.convert("RGB"), dtype=np.float64)
        y = rgb @ np.array([0.299, 0.587, 0.114])
        return GrayImage(np.clip(np.rint(y), 0, 255).astype(np.uint8), 8)
    raise DataError(f"{path}: unsupported image mode {img.mode}")


def save_image(img: GrayImage, path) -> None:
    path = Path(path)
    if img.bit_depth == 8:
        Image.fromarray(img.samples, mode="L").save(path)
    else:
        Image.fromarray(img.samples.astype(np.uint16)).save(path)


def otsu_threshold(samples: np.ndarray, levels: int) -> int | None:
    """Otsu threshold over the exact integer histogram.

    Returns ``t`` such that the dark class is ``samples <= t``, or ``None`` if
    only one intensity level is present.
    """
    hist = np.bincount(samples.ravel().astype(np.int64), minlength=levels).astype(np.float64)
    if np.count_nonzero(hist) < 2:
        return None
    values = np.arange(levels, dtype=np.float64)
    w0 = np.cumsum(hist)
    w1 = w0[-1] - w0
    s0 = np.cumsum(hist * values)
    mu0 = np.divide(s0, w0, out=np.zeros_like(s0), where=w0 > 0)
    mu1 = np.divide(s0[-1] - s0, w1, out=np.zeros_like(s0), where=w1 > 0)
    between = w0 * w1 * (mu0 - mu1) ** 2
    return int(np.argmax(between))


def binarize(img: GrayImage) -> np.ndarray:
    """Foreground (ink) mask: pixels at or below the page's Otsu threshold."""
    t = otsu_threshold(img.samples, img.max_value + 1)
    if t is None:
        warnings.warn("image has a single intensity level; no ink detected", RuntimeWarning)
        return np.zeros(img.samples.shape, dtype=bool)
    return img.samples <= t


def extract_components(img: GrayImage, page_id: str = "") -> list[Component]:
    mask = binarize(img)
    labels, n = ndimage.label(mask, structure=EIGHT_CONNECTED)
    if n == 0:
        return []
    slices = ndimage.find_objects(labels)
    areas = np.bincount(labels.ravel(), minlength=n + 1)
    found = []
    for lab, sl in enumerate(slices, start=1):
        if sl is None:
            continue
        y0, y1 = sl[0].start, sl[0].stop
        x0, x1 = sl[1].start, sl[1].stop
        found.append((y0, x0, x1 - x0, y1 - y0, int(areas[lab])))
    found.sort(key=lambda t: (t[0], t[1]))
    return [
        Component((x0, y0, w, h), img.crop(x0, y0, w, h), area, page_id, i)
        for i, (y0, x0, w, h, area) in enumerate(found)
    ]


def filter_components(comps: list[Component], policy: FilterPolicy | None = None) -> list[Component]:
    """Drop spurious components by area relative to the page median, and
    optionally by absolute width/height bounds."""
    policy = policy or FilterPolicy()
    if not comps:
        return []
    median = float(np.median([c.area for c in comps]))
    lo = policy.area_lo_factor * median
    hi = policy.area_hi_factor * median
    sb = policy.size_bounds
    kept = []
    for c in comps:
        if not lo <= c.area <= hi:
            continue
        if sb is not None and not (sb.min_w <= c.width <= sb.max_w and sb.min_h <= c.height <= sb.max_h):
            continue
        kept.append(c)
    return [
        Component(c.bbox, c.crop, c.area, c.page_id, i) for i, c in enumerate(kept)
    ]


@dataclass
class ManifestEntry:
    path: Path
    printer_id: str
    page_id: str
    font_tag: str = ""

    @property
    def labeled(self) -> bool:
        return bool(self.printer_id)


MANIFEST_FIELDS = ("path", "printer_id", "page_id", "font_tag")


def read_manifest(path) -> list[ManifestEntry]:
    """Read a ``path,printer_id,page_id,font_tag`` CSV; relative image paths
    resolve against the manifest's directory."""
    path = Path(path)
    try:
        fh = open(path, newline="")
    except OSError as exc:
        raise DataError(f"cannot open manifest {path}: {exc}") from exc
    with fh:
        reader = csv.DictReader(fh)
        missing = {"path", "page_id"} - set(reader.fieldnames or ())
        if missing:
            raise DataError(f"manifest {path} lacks columns {sorted(missing)}")
        entries = []
        for row in reader:
            p = Path(row["path"])
            if not p.is_absolute():
                p = path.parent / p
            entries.append(ManifestEntry(
                p,
                (row.get("printer_id") or "").strip(),
                row["page_id"].strip(),
                (row.get("font_tag") or "").strip(),
            ))
    seen = set()
    for e in entries:
        if e.page_id in seen:
            raise DataError(f"duplicate page_id {e.page_id!r} in manifest {path}")
        seen.add(e.page_id)
    return entries


def write_manifest(entries, path) -> None:
    path = Path(path)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(MANIFEST_FIELDS)
        for e in entries:
            p = e.path
            try:
                p = Path(p).relative_to(path.parent)
            except ValueError:
                pass
            w.writerow([str(p), e.printer_id, e.page_id, e.font_tag])
