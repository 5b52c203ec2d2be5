"""Run configuration: loading, validation and the config hash.

A config file is TOML (or JSON with the same layout)::

    [descriptor]   # T0/T1/G0 default per bit depth when omitted
    T0 = 20
    T1 = 80
    G0 = 90
    eq18_literal = false

    [gabor]
    lambda0 = 4.0
    ratio = 2.0
    kernel_size = 10
    sigma_factor = 0.56
    mag_index_mode = "as_printed"

    [filter]
    area_lo_factor = 0.5
    area_hi_factor = 4.0
    size_bounds = false          # true, or a table {min_w, min_h, max_w, max_h}

    [pooling]
    np = "auto"                  # or a non-negative integer; 0 pools whole pages

    [grid]
    log2_c = {start = -5, stop = 15, step = 2}   # stop inclusive; or a list
    log2_gamma = {start = -15, stop = 3, step = 2}
    folds = 5

    [run]
    seed = 0
    jobs = 1
    max_skip_fraction = 0.1
    luma = false
"""

from __future__ import annotations

import hashlib
import json
import sys
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

from .classifier import GridSearchSpec
from .descriptor import DescriptorParams
from .errors import ConfigError
from .gabor import GaborConfig
from .imaging import FilterPolicy, SizeBounds

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

AUTO_NP_MIN_PAGES = 20
AUTO_NP_SMALL = 20

_SECTIONS = {
    "descriptor": {"T0", "T1", "G0", "eq18_literal"},
    "gabor": {"lambda0", "ratio", "kernel_size", "sigma_factor", "mag_index_mode"},
    "filter": {"area_lo_factor", "area_hi_factor", "size_bounds"},
    "pooling": {"np"},
    "grid": {"log2_c", "log2_gamma", "folds"},
    "run": {"seed", "jobs", "max_skip_fraction", "luma"},
}


@dataclass(frozen=True)
class DescriptorOverrides:
    """Explicit T0/T1/G0 values; ``None`` means the bit-depth default."""

    T0: float | None = None
    T1: float | None = None
    G0: float | None = None
    eq18_literal: bool = False

    def params(self, bit_depth: int) -> DescriptorParams:
        try:
            return DescriptorParams.for_bit_depth(bit_depth, T0=self.T0, T1=self.T1, G0=self.G0,
                                                  eq18_literal=self.eq18_literal)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc


@dataclass(frozen=True)
class RunConfig:
    descriptor: DescriptorOverrides = field(default_factory=DescriptorOverrides)
    gabor: GaborConfig = field(default_factory=GaborConfig)
    filter: FilterPolicy = field(default_factory=FilterPolicy)
    np_group: int | str = "auto"
    grid: GridSearchSpec = field(default_factory=GridSearchSpec)
    seed: int = 0
    jobs: int = 1
    max_skip_fraction: float = 0.1
    luma: bool = False

    def __post_init__(self):
        if self.np_group != "auto" and not (isinstance(self.np_group, int) and self.np_group >= 0):
            raise ConfigError(f"pooling.np must be 'auto' or an integer >= 0, got {self.np_group!r}")
        if not (isinstance(self.jobs, int) and self.jobs >= 1):
            raise ConfigError(f"run.jobs must be a positive integer, got {self.jobs!r}")
        if not 0 <= self.max_skip_fraction <= 1:
            raise ConfigError(f"run.max_skip_fraction must lie in [0, 1], got {self.max_skip_fraction}")
        for bd in (8, 16):
            self.descriptor.params(bd)

    def params(self, bit_depth: int) -> DescriptorParams:
        return self.descriptor.params(bit_depth)

    def with_overrides(self, seed: int | None = None, jobs: int | None = None) -> "RunConfig":
        cfg = self
        if seed is not None:
            cfg = replace(cfg, seed=seed, grid=replace(cfg.grid, seed=seed))
        if jobs is not None:
            cfg = replace(cfg, jobs=jobs)
        return cfg

    def resolve_np(self, train_pages_per_printer: dict[str, int]) -> int:
        """Concrete Np: the configured value, or for ``auto`` whole pages when
        every printer has at least 20 training pages and groups of 20 otherwise."""
        if self.np_group != "auto":
            return int(self.np_group)
        if train_pages_per_printer and min(train_pages_per_printer.values()) >= AUTO_NP_MIN_PAGES:
            return 0
        return AUTO_NP_SMALL

    def feature_settings(self) -> dict:
        """Everything that changes per-component descriptors."""
        return {
            "descriptor": asdict(self.descriptor),
            "gabor": asdict(self.gabor),
            "filter": {
                "area_lo_factor": self.filter.area_lo_factor,
                "area_hi_factor": self.filter.area_hi_factor,
                "size_bounds": asdict(self.filter.size_bounds) if self.filter.size_bounds else None,
            },
            "luma": self.luma,
        }

    def to_json(self) -> dict:
        out = self.feature_settings()
        out.update(
            pooling={"np": self.np_group},
            grid={"log2_c": list(self.grid.log2_c), "log2_gamma": list(self.grid.log2_gamma),
                  "folds": self.grid.folds, "seed": self.grid.seed},
            run={"seed": self.seed, "jobs": self.jobs, "max_skip_fraction": self.max_skip_fraction},
        )
        return out

    def hash(self) -> str:
        """sha256 of the canonical JSON of the descriptor-relevant settings."""
        blob = json.dumps(self.feature_settings(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


def _grid_values(name, value) -> tuple[int, ...]:
    if isinstance(value, dict):
        if set(value) != {"start", "stop", "step"} or not all(isinstance(v, int) for v in value.values()):
            raise ConfigError(f"grid.{name} range needs integer start, stop and step")
        if value["step"] <= 0 or value["stop"] < value["start"]:
            raise ConfigError(f"grid.{name}: bad range {value}")
        return tuple(range(value["start"], value["stop"] + 1, value["step"]))
    if not isinstance(value, list) or not value or not all(isinstance(v, int) for v in value):
        raise ConfigError(f"grid.{name} must be a range table or a non-empty list of integers")
    return tuple(value)


def config_from_dict(raw: dict) -> RunConfig:
    for section, body in raw.items():
        if section not in _SECTIONS:
            raise ConfigError(f"unknown config section [{section}]")
        if not isinstance(body, dict):
            raise ConfigError(f"[{section}] must be a table")
        unknown = set(body) - _SECTIONS[section]
        if unknown:
            raise ConfigError(f"unknown keys in [{section}]: {sorted(unknown)}")
    get = lambda s: raw.get(s, {})  # noqa: E731
    try:
        descriptor = DescriptorOverrides(**get("descriptor"))
        gabor = GaborConfig(**get("gabor"))
        f = dict(get("filter"))
        bounds = f.pop("size_bounds", False)
        if bounds is True:
            bounds = SizeBounds()
        elif isinstance(bounds, dict):
            bounds = SizeBounds(**bounds)
        elif bounds is False or bounds is None:
            bounds = None
        else:
            raise ConfigError("filter.size_bounds must be a boolean or a table")
        policy = FilterPolicy(size_bounds=bounds, **f)
        g = get("grid")
        defaults = GridSearchSpec()
        grid = GridSearchSpec(
            log2_c=_grid_values("log2_c", g["log2_c"]) if "log2_c" in g else defaults.log2_c,
            log2_gamma=_grid_values("log2_gamma", g["log2_gamma"]) if "log2_gamma" in g else defaults.log2_gamma,
            folds=g.get("folds", defaults.folds),
            seed=get("run").get("seed", 0),
        )
        run = get("run")
        return RunConfig(
            descriptor=descriptor, gabor=gabor, filter=policy,
            np_group=get("pooling").get("np", "auto"), grid=grid,
            seed=run.get("seed", 0), jobs=run.get("jobs", 1),
            max_skip_fraction=run.get("max_skip_fraction", 0.1), luma=run.get("luma", False),
        )
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid config: {exc}") from exc


def load_config(path=None) -> RunConfig:
    if path is None:
        return RunConfig()
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        raw = json.loads(text) if path.suffix == ".json" else tomllib.loads(text)
    except (ValueError, tomllib.TOMLDecodeError) as exc:
        raise ConfigError(f"cannot parse config {path}: {exc}") from exc
    return config_from_dict(raw)
