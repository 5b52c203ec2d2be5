"""Three-scale, two-orientation Gabor bank and the gradient fields derived
from its responses.

Kernels are stored as integer taps with an exactly zero sum, scaled by
``2**-shift``.  Filtering integer images with them is exact integer
arithmetic, so responses do not depend on summation order and adding a
constant to the input leaves every response bit-identical.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .imaging import GrayImage

ORIENTATIONS = (0, 90)
N_SCALES = 3
# headroom for |response difference| of a 16-bit image in int64
_ACC_LIMIT = 2.0**62.9


@dataclass(frozen=True)
class GaborConfig:
    lambda0: float = 4.0
    ratio: float = 2.0
    kernel_size: int = 10
    sigma_factor: float = 0.56
    mag_index_mode: str = "as_printed"

    def __post_init__(self):
        if not self.lambda0 > 0:
            raise ValueError(f"lambda0 must be positive, got {self.lambda0}")
        if not self.ratio > 1:
            raise ValueError(f"ratio must exceed 1, got {self.ratio}")
        if self.kernel_size < 2:
            raise ValueError("kernel_size must be at least 2")
        if self.mag_index_mode not in ("as_printed", "symmetric"):
            raise ValueError(f"unknown mag_index_mode {self.mag_index_mode!r}")

    def wavelength(self, m: int) -> float:
        return self.lambda0 * self.ratio**m


def _float_kernel(size: int, wavelength: float, sigma: float) -> np.ndarray:
    """Even (cosine-phase) Gabor, carrier along columns, mean-free, unit L2."""
    c = np.arange(size) - (size - 1) / 2.0
    rows, cols = np.meshgrid(c, c, indexing="ij")
    k = np.exp(-(rows**2 + cols**2) / (2 * sigma**2)) * np.cos(2 * np.pi * cols / wavelength)
    k = k - k.mean()
    return k / np.sqrt(np.sum(k * k))


def _quantize(k: np.ndarray, shift: int) -> np.ndarray:
    """Round to integers at scale 2**shift, then fix the sum to exactly zero by
    nudging the taps with the largest rounding slack."""
    scaled = k * 2.0**shift
    q = np.rint(scaled).astype(np.int64)
    resid = int(q.sum())
    if resid:
        slack = (scaled - q).ravel()
        # resid > 0: decrement taps that were rounded up the most
        order = np.argsort(slack if resid > 0 else -slack, kind="stable")
        flat = q.ravel()
        for idx in order[: abs(resid)]:
            flat[idx] -= 1 if resid > 0 else -1
        q = flat.reshape(k.shape)
    return q


@dataclass(frozen=True)
class GaborBank:
    config: GaborConfig
    taps: np.ndarray  # int64, (scale, orientation, k, k)
    shift: int

    @property
    def kernel_size(self) -> int:
        return self.taps.shape[-1]

    @property
    def kernels(self) -> np.ndarray:
        """Float taps; exact dyadic values of the integer taps."""
        return np.ldexp(self.taps.astype(np.float64), -self.shift)

    def kernel(self, m: int, theta: int) -> np.ndarray:
        return self.kernels[m, ORIENTATIONS.index(theta)]

    def wavelengths(self) -> list[float]:
        return [self.config.wavelength(m) for m in range(N_SCALES)]

    def sigmas(self) -> list[float]:
        return [self.config.sigma_factor * lam for lam in self.wavelengths()]


def build_bank(config: GaborConfig | None = None) -> GaborBank:
    config = config or GaborConfig()
    size = config.kernel_size
    floats = [
        _float_kernel(size, config.wavelength(m), config.sigma_factor * config.wavelength(m))
        for m in range(N_SCALES)
    ]
    l1 = max(float(np.abs(k).sum()) for k in floats)
    # 2 * l1 * 2**shift * 65535 must stay below the accumulator limit
    shift = min(52, int(math.floor(math.log2(_ACC_LIMIT / (2 * l1 * 1.001 * 65535)))))
    taps = np.empty((N_SCALES, 2, size, size), dtype=np.int64)
    for m, k in enumerate(floats):
        q = _quantize(k, shift)
        taps[m, 0] = q
        taps[m, 1] = q.T
    return GaborBank(config, taps, shift)


def _convolve_int(samples: np.ndarray, taps: np.ndarray) -> np.ndarray:
    """out[r, c] = sum_ij taps[i, j] * I(r - i + k//2, c - j + k//2), with
    replicate borders.  Exact in int64."""
    k = taps.shape[0]
    half = k // 2
    before = k - 1 - half
    padded = np.pad(samples.astype(np.int64), ((before, half), (before, half)), mode="edge")
    h, w = samples.shape
    out = np.zeros((h, w), dtype=np.int64)
    for i in range(k):
        r0 = k - 1 - i
        for j in range(k):
            t = taps[i, j]
            if t:
                c0 = k - 1 - j
                out += t * padded[r0:r0 + h, c0:c0 + w]
    return out


def convolve_naive(samples: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    """Direct double-loop convolution with replicate borders (float kernel).

    Same alignment as the bank's filtering; kept as a slow reference.
    """
    samples = np.asarray(samples, dtype=np.float64)
    h, w = samples.shape
    k = kernel.shape[0]
    half = k // 2
    out = np.zeros((h, w))
    for r in range(h):
        for c in range(w):
            acc = 0.0
            for i in range(k):
                rr = min(max(r - i + half, 0), h - 1)
                for j in range(k):
                    cc = min(max(c - j + half, 0), w - 1)
                    acc += kernel[i, j] * samples[rr, cc]
            out[r, c] = acc
    return out


@dataclass(frozen=True)
class GaborField:
    """Filter responses of one crop: ``raw[m, o]`` holds the integer response
    for scale ``m`` and orientation index ``o`` (0 -> 0 deg, 1 -> 90 deg)."""

    raw: np.ndarray
    shift: int
    mag_index_mode: str = "as_printed"

    @property
    def shape(self) -> tuple[int, int]:
        return self.raw.shape[2:]

    @property
    def planes(self) -> np.ndarray:
        return np.ldexp(self.raw.astype(np.float64), -self.shift)

    def plane(self, m: int, theta: int) -> np.ndarray:
        return self.planes[m, ORIENTATIONS.index(theta)]


def apply_bank(crop: GrayImage, bank: GaborBank) -> GaborField:
    samples = crop.samples if isinstance(crop, GrayImage) else np.asarray(crop)
    h, w = samples.shape
    raw = np.empty((N_SCALES, 2, h, w), dtype=np.int64)
    for m in range(N_SCALES):
        for o in range(2):
            raw[m, o] = _convolve_int(samples, bank.taps[m, o])
    return GaborField(raw, bank.shift, bank.config.mag_index_mode)


# Gradient fields.  Coordinates follow the descriptor convention: x is the
# row, y the column; out-of-range neighbours are clamped to the border.

def _differences(field: GaborField, m: int):
    psi0 = field.raw[m, 0]
    psi90 = field.raw[m, 1]
    right0 = np.concatenate([psi0[:, 1:], psi0[:, -1:]], axis=1)
    up90 = np.concatenate([psi90[:1], psi90[:-1]], axis=0)
    right90 = np.concatenate([psi90[:, 1:], psi90[:, -1:]], axis=1)
    horiz0 = np.abs(right0 - psi0)
    vert90 = np.abs(up90 - psi90)
    horiz90 = np.abs(right90 - psi90)
    return horiz0, vert90, horiz90


def direction_map(field: GaborField, m: int) -> np.ndarray:
    """Gradient direction in [0, pi/2] at every pixel of scale ``m``."""
    num, den, _ = _differences(field, m)
    return np.arctan2(num.astype(np.float64), den.astype(np.float64))


def magnitude_map(field: GaborField, m: int) -> np.ndarray:
    a, vert90, horiz90 = _differences(field, m)
    b = horiz90 if field.mag_index_mode == "as_printed" else vert90
    af = np.ldexp(a.astype(np.float64), -field.shift)
    bf = np.ldexp(b.astype(np.float64), -field.shift)
    return np.sqrt(af * af + bf * bf)


def _clamp(v: int, n: int) -> int:
    return min(max(v, 0), n - 1)


def gradient_direction(field: GaborField, m: int, x: int, y: int) -> float:
    """Direction at row ``x``, column ``y`` from the horizontal change of the
    0-degree response over the vertical change of the 90-degree response.

    Both changes zero gives 0; a zero denominator alone gives pi/2.
    """
    h, w = field.shape
    psi0 = field.raw[m, 0]
    psi90 = field.raw[m, 1]
    num = abs(int(psi0[x, _clamp(y + 1, w)]) - int(psi0[x, y]))
    den = abs(int(psi90[_clamp(x - 1, h), y]) - int(psi90[x, y]))
    return float(np.arctan2(np.float64(num), np.float64(den)))


def gradient_magnitude(field: GaborField, m: int, x: int, y: int) -> float:
    h, w = field.shape
    psi0 = field.raw[m, 0]
    psi90 = field.raw[m, 1]
    a = abs(int(psi0[x, _clamp(y + 1, w)]) - int(psi0[x, y]))
    if field.mag_index_mode == "as_printed":
        b = abs(int(psi90[x, _clamp(y + 1, w)]) - int(psi90[x, y]))
    else:
        b = abs(int(psi90[_clamp(x - 1, h), y]) - int(psi90[x, y]))
    af = math.ldexp(float(a), -field.shift)
    bf = math.ldexp(float(b), -field.shift)
    return math.sqrt(af * af + bf * bf)
