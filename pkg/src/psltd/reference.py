"""Slow per-pixel PSLTD, written directly from the scalar operations.

Used as an oracle for the vectorised path in :mod:`psltd.descriptor`.
"""

from __future__ import annotations

import numpy as np

from .descriptor import (
    N_BINS, N_LEVELS, N_ORIENT, DescriptorParams, Psltd, bin_index, combined_orientation,
    compute_ppv, counted, gradient_orientation, intensity_orientation, magnitude_pattern,
    pattern_code, ppv_to_bpvs,
)
from .gabor import N_SCALES, GaborBank, apply_bank
from .imaging import GrayImage


def _interior(h, w):
    for x in range(1, h - 1):
        for y in range(1, w - 1):
            yield x, y


def _normalise(counts: list[list[list[int]]]) -> list[float]:
    out = []
    for per_level in counts:
        for hist in per_level:
            total = sum(hist)
            out.extend(c / total if total else 0.0 for c in hist)
    return out


def reference_psltd(crop: GrayImage, bank: GaborBank, params: DescriptorParams) -> Psltd:
    h, w = crop.samples.shape
    field = apply_bank(crop, bank)

    def empty():
        return [[[0] * N_BINS for _ in range(N_LEVELS)] for _ in range(N_ORIENT)]

    h_int = empty()
    h_grad = [empty() for _ in range(N_SCALES)]
    h_comb = [empty() for _ in range(N_SCALES)]
    h_mag = [[0] * N_BINS for _ in range(N_SCALES)]
    n_pix = 0
    lit = params.eq18_literal

    for p in _interior(h, w):
        n_pix += 1
        bins = [bin_index(pattern_code(b)) for b in ppv_to_bpvs(compute_ppv(crop, p, params))]
        ei = intensity_orientation(crop, p, params.T0)
        for l in range(N_ORIENT):
            if counted(ei, l, lit):
                for k in range(N_LEVELS):
                    h_int[l][k][bins[k]] += 1
        for m in range(N_SCALES):
            eg = gradient_orientation(field, m, p, params.G0)
            e = combined_orientation(ei, eg)
            for l in range(N_ORIENT):
                for k in range(N_LEVELS):
                    if counted(eg, l, lit):
                        h_grad[m][l][k][bins[k]] += 1
                    if counted(e, l, lit):
                        h_comb[m][l][k][bins[k]] += 1
            h_mag[m][bin_index(magnitude_pattern(field, m, p))] += 1

    mag = [c / n_pix for hist in h_mag for c in hist]
    f1 = _normalise(h_int) + mag
    f2 = sum((_normalise(hg) for hg in h_grad), []) + mag
    f3 = sum((_normalise(hc) for hc in h_comb), []) + mag
    return Psltd(np.array(f1), np.array(f2), np.array(f3))
