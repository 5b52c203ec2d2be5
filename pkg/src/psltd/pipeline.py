"""Manifest-level workflows behind the command line: extract, train, predict,
eval, synth and diag.

Per-page descriptor sets can be cached on disk: set ``PSLTD_CACHE_DIR`` and
pages are keyed by (sha256 of the image file, config hash).
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import os
from collections import Counter
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path

import numpy as np
from scipy.stats import binomtest
from sklearn.model_selection import StratifiedKFold

from .classifier import SvmModel, check_compatible, load_model, page_vote, save_model, train_ovo
from .config import RunConfig
from .descriptor import PSLTD_DIM, compute_psltd, structure_counts
from .errors import ConfigError, DataError, TrainingError
from .features import FeatureMatrix, apply_prune, fit_prune_mask, poep_pool, write_features, read_features
from .gabor import GaborConfig, apply_bank, build_bank
from .imaging import ManifestEntry, extract_components, filter_components, load_image, read_manifest, \
    save_image, write_manifest
from .synthgen import STYLES, PrinterProfile, default_printers, synth_page

log = logging.getLogger(__name__)

CACHE_ENV = "PSLTD_CACHE_DIR"
ORIENTATION_NAMES = ("horizontal", "vertical", "diag45", "diag135")


@lru_cache(maxsize=4)
def _bank(config: GaborConfig):
    return build_bank(config)


# -- per-page descriptors ------------------------------------------------------------

@dataclass
class PageDescriptors:
    page_id: str
    printer_id: str
    font_tag: str
    vectors: np.ndarray  # (n_components, PSLTD_DIM), float32-representable
    ordinals: list[int]
    error: str | None = None

    def __len__(self) -> int:
        return len(self.ordinals)


def _cache_file(entry: ManifestEntry, cfg: RunConfig) -> Path | None:
    root = os.environ.get(CACHE_ENV)
    if not root:
        return None
    digest = hashlib.sha256(Path(entry.path).read_bytes()).hexdigest()[:32]
    return Path(root) / f"{digest}-{cfg.hash()}.npz"


def describe_page(entry: ManifestEntry, cfg: RunConfig) -> PageDescriptors:
    """Descriptors of every kept component of one page, in ordinal order.

    Read failures are reported through ``error`` rather than raised so a
    batch can decide whether to continue.
    """
    def result(vectors, ordinals, error=None):
        return PageDescriptors(entry.page_id, entry.printer_id, entry.font_tag, vectors, ordinals, error)

    try:
        cache = _cache_file(entry, cfg)
    except OSError as exc:
        return result(np.zeros((0, PSLTD_DIM), np.float32), [], f"cannot read {entry.path}: {exc}")
    if cache is not None and cache.exists():
        with np.load(cache) as z:
            return result(z["vectors"], z["ordinals"].tolist())
    try:
        img = load_image(entry.path, luma=cfg.luma)
    except DataError as exc:
        return result(np.zeros((0, PSLTD_DIM), np.float32), [], str(exc))
    comps = filter_components(extract_components(img, entry.page_id), cfg.filter)
    bank = _bank(cfg.gabor)
    params = cfg.params(img.bit_depth)
    vectors, ordinals = [], []
    for c in comps:
        if c.width < 3 or c.height < 3:
            log.debug("page %s: component %d is %dx%d, skipped", entry.page_id, c.ordinal, c.width, c.height)
            continue
        vectors.append(compute_psltd(c, bank, params).vector.astype(np.float32))
        ordinals.append(c.ordinal)
    arr = np.stack(vectors) if vectors else np.zeros((0, PSLTD_DIM), np.float32)
    if not vectors:
        log.warning("page %s: no usable components", entry.page_id)
    if cache is not None:
        cache.parent.mkdir(parents=True, exist_ok=True)
        tmp = cache.with_suffix(".tmp.npz")
        np.savez(tmp, vectors=arr, ordinals=np.asarray(ordinals, dtype=np.int64))
        os.replace(tmp, cache)
    return result(arr, ordinals)


def _describe_task(args):
    return describe_page(*args)


def describe_pages(entries: list[ManifestEntry], cfg: RunConfig) -> tuple[list[PageDescriptors], list[PageDescriptors]]:
    """Describe every page; returns (usable pages, skipped pages).

    Raises DataError for an empty manifest or when more than
    ``cfg.max_skip_fraction`` of the pages cannot be read.
    """
    if not entries:
        raise DataError("no pages in manifest")
    tasks = [(e, cfg) for e in entries]
    if cfg.jobs > 1 and len(entries) > 1:
        with ProcessPoolExecutor(max_workers=cfg.jobs) as ex:
            pages = list(ex.map(_describe_task, tasks))
    else:
        pages = [describe_page(*t) for t in tasks]
    skipped = [p for p in pages if p.error]
    for p in skipped:
        log.error("page %s skipped: %s", p.page_id, p.error)
    if len(skipped) > cfg.max_skip_fraction * len(pages):
        raise DataError(f"{len(skipped)} of {len(pages)} pages could not be read "
                        f"(limit {cfg.max_skip_fraction:.0%})")
    return [p for p in pages if not p.error], skipped


def pool_pages(pages: list[PageDescriptors], np_group: int) -> FeatureMatrix:
    parts = []
    for p in pages:
        pooled = poep_pool(p.vectors.astype(np.float64), np_group)
        k = pooled.shape[0]
        # float32 rounding keeps in-memory rows equal to what the files hold
        parts.append(FeatureMatrix(pooled.astype(np.float32), [p.printer_id] * k, [p.page_id] * k,
                                   list(range(k)), [p.font_tag] * k))
    return FeatureMatrix.concat(parts, PSLTD_DIM)


def raw_matrix(pages: list[PageDescriptors]) -> FeatureMatrix:
    parts = [FeatureMatrix(p.vectors, [p.printer_id] * len(p), [p.page_id] * len(p), list(p.ordinals),
                           [p.font_tag] * len(p)) for p in pages]
    return FeatureMatrix.concat(parts, PSLTD_DIM)


def pages_per_printer(items) -> dict[str, int]:
    return dict(Counter(getattr(i, "printer_id") for i in items))


# -- extract / train / predict ---------------------------------------------------------

def _out_path(path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    return path


def run_extract(manifest, out, cfg: RunConfig, dump_descriptors=None) -> FeatureMatrix:
    entries = read_manifest(manifest)
    pages, skipped = describe_pages(entries, cfg)
    np_group = cfg.resolve_np(pages_per_printer(entries))
    matrix = pool_pages(pages, np_group)
    meta = {
        "config_hash": cfg.hash(), "config": cfg.to_json(), "np": np_group, "kind": "pooled",
        "pages": len(pages), "skipped_pages": [p.page_id for p in skipped],
    }
    write_features(_out_path(out), matrix, meta)
    if dump_descriptors:
        write_features(_out_path(dump_descriptors), raw_matrix(pages), dict(meta, kind="descriptors"))
    log.info("extracted %d rows from %d pages (Np=%d)", len(matrix), len(pages), np_group)
    return matrix


def train_model(matrix: FeatureMatrix, cfg: RunConfig, meta: dict | None = None) -> SvmModel:
    if any(not label for label in matrix.labels):
        raise DataError("training rows must carry printer labels")
    if len(set(matrix.labels)) < 2:
        raise TrainingError(f"need at least 2 printers to train, got {sorted(set(matrix.labels))}")
    if len(matrix) < 2:
        raise TrainingError("need at least 2 training rows")
    mask = fit_prune_mask(matrix)
    model = train_ovo(apply_prune(matrix, mask), cfg.grid, mask, jobs=cfg.jobs, meta=meta)
    table = model.meta["cv_table"]
    for lc, row in zip(table["log2_c"], table["accuracy"]):
        log.info("cv log2C=%3d: %s", lc, " ".join(f"{a:.3f}" for a in row))
    return model


def run_train(features, model_out, cfg: RunConfig) -> SvmModel:
    matrix, meta = read_features(features)
    if meta.get("config_hash") != cfg.hash():
        raise ConfigError(f"{features} was extracted with config {meta.get('config_hash')}, "
                          f"current config is {cfg.hash()}")
    model = train_model(matrix, cfg, {"config_hash": cfg.hash(), "np": meta.get("np", 0)})
    save_model(model, _out_path(model_out))
    return model


@dataclass
class PagePrediction:
    page_id: str
    label: str
    predicted: str | None
    groups: list[str] = field(default_factory=list)

    @property
    def correct(self) -> bool:
        return self.predicted is not None and self.predicted == self.label


def predict_pages(model: SvmModel, pages: list[PageDescriptors], np_group: int) -> list[PagePrediction]:
    out = []
    for p in pages:
        pooled = poep_pool(p.vectors.astype(np.float64), np_group).astype(np.float32)
        groups = model.predict_full(pooled.astype(np.float64)) if len(pooled) else []
        if not groups:
            log.warning("page %s has no groups to vote on", p.page_id)
        out.append(PagePrediction(p.page_id, p.printer_id, page_vote(groups) if groups else None, groups))
    return out


def confusion(preds: list[PagePrediction], classes: list[str]) -> tuple[list[str], list[str], np.ndarray]:
    """Counts indexed [true, predicted]; unknown predictions land in a ``none`` column."""
    rows = sorted(set(classes) | {p.label for p in preds})
    cols = list(rows)
    if any(p.predicted is None for p in preds):
        cols.append("none")
    m = np.zeros((len(rows), len(cols)), dtype=np.int64)
    for p in preds:
        m[rows.index(p.label), cols.index(p.predicted if p.predicted is not None else "none")] += 1
    return rows, cols, m


def write_confusion(path, rows, cols, m) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["true\\predicted", *cols, "total", "accuracy"])
        for i, r in enumerate(rows):
            total = int(m[i].sum())
            hit = int(m[i, cols.index(r)]) if r in cols else 0
            w.writerow([r, *map(int, m[i]), total, f"{hit / total:.4f}" if total else ""])


def run_predict(model_path, manifest, out_prefix, cfg: RunConfig) -> list[PagePrediction]:
    model = load_model(model_path)
    check_compatible(model, cfg.hash())
    entries = read_manifest(manifest)
    pages, _ = describe_pages(entries, cfg)
    np_group = int(model.meta.get("np", 0))
    preds = predict_pages(model, pages, np_group)
    out_prefix = str(_out_path(out_prefix))
    with open(out_prefix + ".jsonl", "w") as fh:
        for p in preds:
            for g, lab in enumerate(p.groups):
                fh.write(json.dumps({"page_id": p.page_id, "group": g, "predicted": lab,
                                     "label": p.label or None, "config_hash": cfg.hash()}) + "\n")
    with open(out_prefix + ".pages.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["page_id", "label", "predicted", "groups", "config_hash"])
        for p in preds:
            w.writerow([p.page_id, p.label, p.predicted or "", len(p.groups), cfg.hash()])
    conf_path = Path(out_prefix + ".confusion.csv")
    if pages and all(p.label for p in preds):
        write_confusion(conf_path, *confusion(preds, model.classes))
    elif conf_path.exists():
        conf_path.unlink()
    return preds


# -- evaluation --------------------------------------------------------------------------

@dataclass
class Split:
    name: str
    train: list[str]
    test: list[str]


def parse_split(spec: str) -> tuple[str, list[str]]:
    kind, *args = spec.split(":")
    if kind not in ("kfold", "same-font", "cross-font"):
        raise ConfigError(f"unknown split {spec!r}; use kfold[:K[:R]], same-font:TAG[:K[:R]] "
                          "or cross-font:TRAIN_TAG:TEST_TAG")
    if kind == "cross-font" and len(args) != 2:
        raise ConfigError("cross-font split needs TRAIN_TAG:TEST_TAG")
    if kind == "same-font" and not 1 <= len(args) <= 3:
        raise ConfigError("same-font split needs TAG[:K[:R]]")
    if kind == "kfold" and len(args) > 2:
        raise ConfigError("kfold split takes at most K and R")
    return kind, args


def _kfold_splits(entries, k: int, repeats: int, seed: int, prefix: str) -> list[Split]:
    ids = [e.page_id for e in entries]
    labels = [e.printer_id for e in entries]
    splits = []
    for r in range(repeats):
        skf = StratifiedKFold(n_splits=k, shuffle=True, random_state=seed + r)
        try:
            folds = list(skf.split(np.zeros(len(ids)), labels))
        except ValueError as exc:
            raise DataError(f"cannot build {k}-fold page split: {exc}") from exc
        for f, (tr, te) in enumerate(folds):
            splits.append(Split(f"{prefix}r{r}f{f}", [ids[i] for i in tr], [ids[i] for i in te]))
    return splits


def make_splits(entries: list[ManifestEntry], spec: str, seed: int = 0) -> list[Split]:
    """Page-disjoint train/test splits.  ``kfold`` defaults to 2 folds repeated
    5 times (5x2 CV), stratified by printer."""
    kind, args = parse_split(spec)
    if any(not e.printer_id for e in entries):
        raise DataError("evaluation needs a fully labeled manifest")
    try:
        if kind == "kfold":
            k = int(args[0]) if args else 2
            r = int(args[1]) if len(args) > 1 else 5
            return _kfold_splits(entries, k, r, seed, "")
        if kind == "same-font":
            tag = args[0]
            k = int(args[1]) if len(args) > 1 else 2
            r = int(args[2]) if len(args) > 2 else 5
            subset = [e for e in entries if e.font_tag == tag]
            if not subset:
                raise DataError(f"no pages with font tag {tag!r}")
            return _kfold_splits(subset, k, r, seed, f"{tag}-")
    except ValueError as exc:
        raise ConfigError(f"bad split {spec!r}: {exc}") from exc
    train_tag, test_tag = args
    train = [e.page_id for e in entries if e.font_tag == train_tag]
    test = [e.page_id for e in entries if e.font_tag == test_tag]
    return [Split(f"{train_tag}->{test_tag}", train, test)]


@dataclass
class SplitResult:
    split: Split
    predictions: list[PagePrediction]
    np_group: int
    model_meta: dict

    @property
    def accuracy(self) -> float:
        return float(np.mean([p.correct for p in self.predictions])) if self.predictions else 0.0


def evaluate_split(pages: dict[str, PageDescriptors], split: Split, cfg: RunConfig) -> SplitResult:
    overlap = set(split.train) & set(split.test)
    if overlap:
        raise DataError(f"split {split.name}: pages in both train and test: {sorted(overlap)[:5]}")
    train = [pages[i] for i in split.train if i in pages]
    test = [pages[i] for i in split.test if i in pages]
    printers = {p.printer_id for p in pages.values()}
    for side, group in (("train", train), ("test", test)):
        missing = printers - {p.printer_id for p in group}
        if missing:
            raise DataError(f"split {split.name} leaves {side} without printers {sorted(missing)}")
    np_group = cfg.resolve_np(pages_per_printer(train))
    model = train_model(pool_pages(train, np_group), cfg, {"config_hash": cfg.hash(), "np": np_group})
    preds = predict_pages(model, test, np_group)
    meta = {k: model.meta[k] for k in ("cv_accuracy", "log2_c", "log2_gamma")}
    return SplitResult(split, preds, np_group, meta)


def wilson_interval(hits: int, n: int, level: float = 0.95) -> tuple[float, float]:
    if n == 0:
        return 0.0, 1.0
    ci = binomtest(hits, n).proportion_ci(confidence_level=level, method="wilson")
    return float(ci.low), float(ci.high)


def summarize(results: list[SplitResult], cfg: RunConfig, spec: str) -> dict:
    accs = [r.accuracy for r in results]
    preds = [p for r in results for p in r.predictions]
    hits = sum(p.correct for p in preds)
    rows, cols, m = confusion(preds, [])
    per_class = {}
    for i, c in enumerate(rows):
        total = int(m[i].sum())
        per_class[c] = float(m[i, cols.index(c)] / total) if total else None
    return {
        "config_hash": cfg.hash(),
        "split": spec,
        "splits": [{"name": r.split.name, "accuracy": r.accuracy, "test_pages": len(r.predictions),
                    "train_pages": len(r.split.train), "np": r.np_group, **r.model_meta} for r in results],
        "mean_accuracy": float(np.mean(accs)),
        "std_accuracy": float(np.std(accs, ddof=1)) if len(accs) > 1 else 0.0,
        "pooled_accuracy": hits / len(preds) if preds else 0.0,
        "wilson_95": list(wilson_interval(hits, len(preds))),
        "chance": 1.0 / len(rows) if rows else None,
        "per_class_accuracy": per_class,
        "confusion": {"rows": rows, "cols": cols, "counts": m.tolist()},
    }


def run_eval(manifest, cfg: RunConfig, spec: str, out_dir=None) -> dict:
    entries = read_manifest(manifest)
    splits = make_splits(entries, spec, cfg.seed)
    pages, skipped = describe_pages(entries, cfg)
    by_id = {p.page_id: p for p in pages}
    results = [evaluate_split(by_id, s, cfg) for s in splits]
    for r in results:
        log.info("split %s: accuracy %.4f on %d pages", r.split.name, r.accuracy, len(r.predictions))
    report = summarize(results, cfg, spec)
    report["skipped_pages"] = [p.page_id for p in skipped]
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / "report.json").write_text(json.dumps(report, indent=2) + "\n")
        c = report["confusion"]
        write_confusion(out_dir / "confusion.csv", c["rows"], c["cols"], np.asarray(c["counts"]))
    return report


# -- synth and diag ------------------------------------------------------------------------

def page_seed(seed: int, printer: int, style: int, page: int) -> int:
    return int(np.random.SeedSequence([seed, printer, style, page]).generate_state(1)[0])


def synth_profiles(n_printers: int, seed: int = 0, identical: bool = False) -> list[PrinterProfile]:
    if not identical:
        return default_printers(n_printers, seed)
    base = default_printers(1, seed)[0].to_json()
    return [PrinterProfile.from_json(dict(base, id=f"P{i}", seed=seed * 1000 + i)) for i in range(n_printers)]


def run_synth(out_dir, printers: int = 4, pages: int = 5, glyphs: int = 40, styles=("blocky",),
              seed: int = 0, size: tuple[int, int] = (600, 500), bit_depth: int = 8,
              identical: bool = False, page_offset: int = 0) -> Path:
    """Write PNG pages, ``manifest.csv``, ``profiles.json`` and per-page truth files.

    ``font_tag`` carries the glyph style.  ``page_offset`` shifts page
    numbering so disjoint sets can be generated with the same seed.
    """
    for s in styles:
        if s not in STYLES:
            raise ConfigError(f"unknown style {s!r}; expected one of {STYLES}")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    profiles = synth_profiles(printers, seed, identical)
    entries = []
    for pi, prof in enumerate(profiles):
        for style in styles:
            si = STYLES.index(style)
            for k in range(page_offset, page_offset + pages):
                pid = f"{prof.id}-{style}-{k:03d}"
                img, truth = synth_page(prof, glyphs, style, page_seed(seed, pi, si, k), size, bit_depth)
                save_image(img, out_dir / f"{pid}.png")
                (out_dir / f"{pid}.truth.json").write_text(json.dumps(truth.to_json()) + "\n")
                entries.append(ManifestEntry(out_dir / f"{pid}.png", prof.id, pid, style))
    manifest = out_dir / "manifest.csv"
    write_manifest(entries, manifest)
    (out_dir / "profiles.json").write_text(json.dumps([p.to_json() for p in profiles], indent=2) + "\n")
    return manifest


@dataclass
class DiagCounts:
    pages: int = 0
    components: int = 0
    interior_pixels: int = 0
    structures: np.ndarray = field(default_factory=lambda: np.zeros(4, dtype=np.int64))


def run_diag(manifest, cfg: RunConfig, out_csv=None) -> dict[str, DiagCounts]:
    """Per-printer counts of combined linear structures at the finest scale."""
    entries = read_manifest(manifest)
    if not entries:
        raise DataError("no pages in manifest")
    if any(not e.printer_id for e in entries):
        raise DataError("diag needs a labeled manifest")
    bank = _bank(cfg.gabor)
    stats: dict[str, DiagCounts] = {}
    for e in entries:
        d = stats.setdefault(e.printer_id, DiagCounts())
        d.pages += 1
        img = load_image(e.path, luma=cfg.luma)
        params = cfg.params(img.bit_depth)
        for c in filter_components(extract_components(img, e.page_id), cfg.filter):
            if c.width < 3 or c.height < 3:
                continue
            d.components += 1
            d.interior_pixels += (c.width - 2) * (c.height - 2)
            d.structures += structure_counts(c.crop, apply_bank(c.crop, bank), params, 0)
    if out_csv is not None:
        with open(_out_path(out_csv), "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["printer_id", "pages", "components", "interior_pixels", *ORIENTATION_NAMES,
                        *(f"share_{n}" for n in ORIENTATION_NAMES), "config_hash"])
            for pid in sorted(stats):
                d = stats[pid]
                total = d.structures.sum()
                shares = [f"{v / total:.6f}" if total else "" for v in d.structures]
                w.writerow([pid, d.pages, d.components, d.interior_pixels, *map(int, d.structures),
                            *shares, cfg.hash()])
    return stats
