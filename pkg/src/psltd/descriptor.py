"""Printer specific local texture descriptor (PSLTD).

Every interior pixel of a letter crop is described by its 3x3 neighbourhood:
the centre-minus-neighbour differences are quantised into five levels and
split into five binary patterns, and each pattern is binned into one of 59
uniform-pattern bins.  Pixels are regrouped by the short linear structures
(horizontal, vertical, 45 and 135 degrees) passing through them, where a
structure is present when its two end pixels are similar to the centre in
intensity, in Gabor gradient direction, or both.  Per-structure histograms
plus gradient-magnitude patterns make up the three feature sets F1, F2, F3.

Pixel coordinates are ``(x, y)`` = ``(row, column)``.  Neighbours are
numbered counter-clockwise from east; neighbour ``n`` carries weight ``2**n``
in a pattern code.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .gabor import N_SCALES, GaborBank, GaborField, apply_bank, direction_map, gradient_direction, magnitude_map, gradient_magnitude
from .imaging import Component, GrayImage

N_NEIGHBORS = 8
N_LEVELS = 5
N_ORIENT = 5  # 0, 90, 45, 135 degrees, and "no structure"
N_BINS = 59
BLOCK_DIM = N_ORIENT * N_LEVELS * N_BINS  # 1475
MAG_DIM = N_SCALES * N_BINS  # 177
F1_DIM = BLOCK_DIM + MAG_DIM  # 1652
F2_DIM = N_SCALES * BLOCK_DIM + MAG_DIM  # 4602
F3_DIM = F2_DIM
PSLTD_DIM = F1_DIM + F2_DIM + F3_DIM  # 10856

# (drow, dcol) of q_0 .. q_7: E, NE, N, NW, W, SW, S, SE
NEIGHBOR_OFFSETS = ((0, 1), (-1, 1), (-1, 0), (-1, -1), (0, -1), (1, -1), (1, 0), (1, 1))

# the two end pixels of each linear structure, in orientation-slot order
STRUCTURE_ENDS = (
    ((0, -1), (0, 1)),    # horizontal
    ((-1, 0), (1, 0)),    # vertical
    ((-1, 1), (1, -1)),   # 45 deg, forward slant
    ((-1, -1), (1, 1)),   # 135 deg, backward slant
)


@dataclass(frozen=True)
class DescriptorParams:
    T0: float = 20
    T1: float = 80
    G0: float = 90.0  # degrees of gradient-direction difference
    eq18_literal: bool = False

    def __post_init__(self):
        if not 0 < self.T0 < self.T1:
            raise ValueError(f"need 0 < T0 < T1, got T0={self.T0}, T1={self.T1}")
        if not self.G0 >= 0:
            raise ValueError(f"G0 must be non-negative, got {self.G0}")

    @classmethod
    def for_bit_depth(cls, bit_depth: int, **overrides) -> "DescriptorParams":
        if bit_depth == 8:
            base = dict(T0=20, T1=80, G0=90.0)
        elif bit_depth == 16:
            base = dict(T0=13000, T1=50000, G0=90.0)
        else:
            raise ValueError(f"unsupported bit depth {bit_depth}")
        base.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**base)

    @property
    def angle_threshold(self) -> float:
        """G0 in radians; 90 degrees maps exactly onto pi/2."""
        return (self.G0 / 90.0) * (math.pi / 2)


def _is_uniform(code: int) -> bool:
    return uniformity(code) <= 2


def pattern_code(bits) -> int:
    if isinstance(bits, (int, np.integer)):
        return int(bits)
    return sum(int(b) << n for n, b in enumerate(bits))


def uniformity(pattern) -> int:
    """Number of circular 0/1 transitions in an 8-bit pattern."""
    code = pattern_code(pattern)
    ror = ((code >> 1) | ((code & 1) << 7)) & 0xFF
    return bin(code ^ ror).count("1")


UNIFORM_CODES = tuple(c for c in range(256) if _is_uniform(c))
BIN_TABLE = np.full(256, len(UNIFORM_CODES), dtype=np.int64)
for _rank, _code in enumerate(UNIFORM_CODES):
    BIN_TABLE[_code] = _rank


def bin_index(pattern) -> int:
    """Rank among the 58 uniform patterns, or 58 for any non-uniform one."""
    return int(BIN_TABLE[pattern_code(pattern)])


def quantize_difference(diff, T0, T1) -> int:
    if abs(diff) < T0:
        return 0
    if T0 <= diff < T1:
        return 1
    if -T1 < diff <= -T0:
        return 2
    if diff >= T1:
        return 3
    return 4


def _sample(samples: np.ndarray, x: int, y: int) -> int:
    return int(samples[x, y])


def _as_samples(crop) -> np.ndarray:
    return crop.samples if isinstance(crop, GrayImage) else np.asarray(crop)


def compute_ppv(crop, p, params: DescriptorParams) -> tuple[int, ...]:
    """Penta-pattern vector at interior pixel ``p = (x, y)``."""
    s = _as_samples(crop)
    x, y = p
    if not (0 < x < s.shape[0] - 1 and 0 < y < s.shape[1] - 1):
        raise ValueError(f"pixel {p} is on the crop border")
    centre = _sample(s, x, y)
    return tuple(
        quantize_difference(centre - _sample(s, x + dx, y + dy), params.T0, params.T1)
        for dx, dy in NEIGHBOR_OFFSETS
    )


def ppv_to_bpvs(ppv) -> tuple[tuple[int, ...], ...]:
    return tuple(tuple(int(v == k) for v in ppv) for k in range(N_LEVELS))


def _orientation_vector(present) -> tuple[int, ...]:
    slots = [l + 1 if present[l] else 0 for l in range(4)]
    slots.append(1 if sum(slots) == 0 else 0)
    return tuple(slots)


def intensity_orientation(crop, p, T0) -> tuple[int, ...]:
    s = _as_samples(crop)
    x, y = p
    c = _sample(s, x, y)
    present = [
        all(abs(c - _sample(s, x + dx, y + dy)) <= T0 for dx, dy in ends)
        for ends in STRUCTURE_ENDS
    ]
    return _orientation_vector(present)


def gradient_orientation(field: GaborField, m: int, p, G0: float) -> tuple[int, ...]:
    """Orientation vector from gradient-direction similarity; ``G0`` in degrees."""
    x, y = p
    tau = (G0 / 90.0) * (math.pi / 2)
    g = gradient_direction(field, m, x, y)
    present = [
        all(abs(g - gradient_direction(field, m, x + dx, y + dy)) <= tau for dx, dy in ends)
        for ends in STRUCTURE_ENDS
    ]
    return _orientation_vector(present)


def combined_orientation(ei, eg) -> tuple[int, ...]:
    slots = [ei[l] if ei[l] == eg[l] else 0 for l in range(4)]
    slots.append(1 if sum(slots) == 0 else 0)
    return tuple(slots)


def magnitude_pattern(field: GaborField, m: int, p) -> tuple[int, ...]:
    """Bit n set when neighbour n's gradient magnitude is >= the centre's."""
    x, y = p
    centre = gradient_magnitude(field, m, x, y)
    return tuple(
        int(gradient_magnitude(field, m, x + dx, y + dy) - centre >= 0)
        for dx, dy in NEIGHBOR_OFFSETS
    )


def counted(e, l: int, literal: bool = False) -> bool:
    """Whether a pixel with orientation vector ``e`` contributes to the
    histogram of orientation ``l``.  ``literal`` keeps only slots equal to 1."""
    return e[l] == 1 if literal else e[l] != 0


# -- vectorised whole-crop evaluation ----------------------------------------

def _shifted(a: np.ndarray, dx: int, dy: int) -> np.ndarray:
    h, w = a.shape
    return a[1 + dx:h - 1 + dx, 1 + dy:w - 1 + dy]


def _level_bins(samples: np.ndarray, params: DescriptorParams) -> np.ndarray:
    """(5, P) bin index of each level's binary pattern at each interior pixel."""
    s = samples.astype(np.int64)
    centre = _shifted(s, 0, 0)
    codes = np.zeros((N_LEVELS,) + centre.shape, dtype=np.int64)
    for n, (dx, dy) in enumerate(NEIGHBOR_OFFSETS):
        diff = centre - _shifted(s, dx, dy)
        level = np.full(diff.shape, 4, dtype=np.int64)
        level[diff > -params.T1] = 2
        level[diff > -params.T0] = 0
        level[diff >= params.T0] = 1
        level[diff >= params.T1] = 3
        for k in range(N_LEVELS):
            codes[k] |= (level == k).astype(np.int64) << n
    return BIN_TABLE[codes].reshape(N_LEVELS, -1)


def _presence(values: np.ndarray, tol) -> np.ndarray:
    """(5, P) structure presence at interior pixels for a value map."""
    centre = _shifted(values, 0, 0)
    pres = np.empty((N_ORIENT,) + centre.shape, dtype=bool)
    for l, ends in enumerate(STRUCTURE_ENDS):
        ok = np.ones(centre.shape, dtype=bool)
        for dx, dy in ends:
            ok &= np.abs(centre - _shifted(values, dx, dy)) <= tol
        pres[l] = ok
    pres[4] = ~pres[:4].any(axis=0)
    return pres.reshape(N_ORIENT, -1)


def _combine(pi: np.ndarray, pg: np.ndarray) -> np.ndarray:
    pres = np.empty_like(pi)
    pres[:4] = pi[:4] & pg[:4]
    pres[4] = ~pres[:4].any(axis=0)
    return pres


def _count_mask(pres: np.ndarray, literal: bool) -> np.ndarray:
    if not literal:
        return pres
    # slot values are l+1, so only the horizontal slot and the empty slot equal 1
    mask = np.zeros_like(pres)
    mask[0] = pres[0]
    mask[4] = pres[4]
    return mask


def _block(bins: np.ndarray, pres: np.ndarray) -> np.ndarray:
    idx = bins + (np.arange(N_LEVELS) * N_BINS)[:, None]
    out = np.zeros((N_ORIENT, N_LEVELS * N_BINS))
    for l in range(N_ORIENT):
        sel = pres[l]
        total = int(sel.sum())
        if total:
            out[l] = np.bincount(idx[:, sel].ravel(), minlength=N_LEVELS * N_BINS) / total
    return out.ravel()


def _magnitude_hist(mag: np.ndarray) -> np.ndarray:
    centre = _shifted(mag, 0, 0)
    code = np.zeros(centre.shape, dtype=np.int64)
    for n, (dx, dy) in enumerate(NEIGHBOR_OFFSETS):
        code |= (_shifted(mag, dx, dy) - centre >= 0).astype(np.int64) << n
    counts = np.bincount(BIN_TABLE[code].ravel(), minlength=N_BINS)
    return counts / code.size


class _CropMaps:
    """Per-crop intermediate maps shared by all blocks."""

    def __init__(self, samples, field: GaborField | None, params: DescriptorParams):
        self.params = params
        self.field = field
        self.bins = _level_bins(samples, params)
        self.p_int = _presence(samples.astype(np.int64), params.T0)
        self._grad = {}

    def gradient(self, m):
        if m not in self._grad:
            g = direction_map(self.field, m)
            self._grad[m] = _presence(g, self.params.angle_threshold)
        return self._grad[m]

    def presence(self, mode, m):
        if mode == "intensity":
            return self.p_int
        if mode == "gradient":
            return self.gradient(m)
        if mode == "combined":
            return _combine(self.p_int, self.gradient(m))
        raise ValueError(f"unknown mode {mode!r}")

    def block(self, mode, m=None):
        return _block(self.bins, _count_mask(self.presence(mode, m), self.params.eq18_literal))

    def magnitude(self):
        return np.concatenate([_magnitude_hist(magnitude_map(self.field, m)) for m in range(N_SCALES)])


def histogram_block(crop, field: GaborField | None, mode: str, m: int | None = None,
                    params: DescriptorParams | None = None) -> np.ndarray:
    """Normalised 5x5x59 histogram (orientation, level, bin) for one mode."""
    s = _as_samples(crop)
    params = params or DescriptorParams()
    if s.shape[0] < 3 or s.shape[1] < 3:
        warnings.warn(f"crop {s.shape} too small for 3x3 patches", RuntimeWarning)
        return np.zeros(BLOCK_DIM)
    if mode != "intensity" and (field is None or m is None):
        raise ValueError(f"mode {mode!r} needs a Gabor field and a scale")
    return _CropMaps(s, field, params).block(mode, m)


@dataclass(frozen=True)
class Psltd:
    f1: np.ndarray
    f2: np.ndarray
    f3: np.ndarray

    def __post_init__(self):
        assert self.f1.shape == (F1_DIM,), self.f1.shape
        assert self.f2.shape == (F2_DIM,), self.f2.shape
        assert self.f3.shape == (F3_DIM,), self.f3.shape

    @property
    def vector(self) -> np.ndarray:
        v = np.concatenate([self.f1, self.f2, self.f3])
        assert v.shape == (PSLTD_DIM,)
        return v

    @staticmethod
    def index(feature_set: str, m: int | None, level, l: int | None, d: int) -> int:
        """Flat index into the concatenated vector.

        ``level`` is 0..4 for pattern histograms or ``"MAG"`` for the
        magnitude histograms (where ``l`` is ignored).  ``m`` is ignored for
        the F1 pattern block.
        """
        offset = {"F1": 0, "F2": F1_DIM, "F3": F1_DIM + F2_DIM}[feature_set]
        n_blocks = 1 if feature_set == "F1" else N_SCALES
        if level == "MAG":
            return offset + n_blocks * BLOCK_DIM + m * N_BINS + d
        block = 0 if feature_set == "F1" else m
        return offset + block * BLOCK_DIM + (l * N_LEVELS + level) * N_BINS + d


def compute_psltd(component, bank: GaborBank, params: DescriptorParams | None = None) -> Psltd:
    crop = component.crop if isinstance(component, Component) else component
    s = _as_samples(crop)
    if s.shape[0] < 3 or s.shape[1] < 3:
        raise ValueError(f"crop {s.shape[1]}x{s.shape[0]} is smaller than 3x3")
    if params is None:
        params = DescriptorParams.for_bit_depth(crop.bit_depth if isinstance(crop, GrayImage) else 8)
    field = apply_bank(crop if isinstance(crop, GrayImage) else GrayImage(s), bank)
    maps = _CropMaps(s, field, params)
    mag = maps.magnitude()
    f1 = np.concatenate([maps.block("intensity"), mag])
    f2 = np.concatenate([maps.block("gradient", m) for m in range(N_SCALES)] + [mag])
    f3 = np.concatenate([maps.block("combined", m) for m in range(N_SCALES)] + [mag])
    return Psltd(f1, f2, f3)


def structure_counts(crop, field: GaborField, params: DescriptorParams, m: int = 0) -> np.ndarray:
    """Counts of combined linear structures at scale ``m`` per orientation
    (horizontal, vertical, 45, 135) over the crop interior."""
    s = _as_samples(crop)
    if s.shape[0] < 3 or s.shape[1] < 3:
        return np.zeros(4, dtype=np.int64)
    pres = _CropMaps(s, field, params).presence("combined", m)
    return pres[:4].sum(axis=1).astype(np.int64)
