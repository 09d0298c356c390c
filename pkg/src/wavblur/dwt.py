"""Orthogonal multilevel DWT (1D and separable 2D) with periodic boundaries.

Coefficients live in a canonical flat vector: sub-bands sorted coarsest
level first, orientation order ``l, h, v, d`` (``l, d`` in 1D), each band
row-major. Orientation ``h`` is highpass along rows (vertical direction) and
lowpass along columns, ``v`` the converse, ``d`` highpass in both.

All transforms accept a leading batch dimension, which is how operator
matrices are assembled column block by column block.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property, lru_cache
from typing import NamedTuple

import numpy as np

from . import _kernels
from .errors import LevelError, ShapeError, SubbandIndexError

ORIENTATIONS_2D = ("l", "h", "v", "d")
ORIENTATIONS_1D = ("l", "d")


def daubechies_lowpass(m: int) -> np.ndarray:
    """Minimum-phase Daubechies lowpass filter with ``m`` vanishing moments.

    Spectral factorization of the Daubechies polynomial; taps sum to sqrt(2).
    """
    if m < 1:
        raise ValueError("need at least one vanishing moment")
    # P(y) = sum_k C(m-1+k, k) y^k with y = sin^2(w/2) = (2 - z - 1/z) / 4
    coeffs = [math.comb(m - 1 + k, k) for k in range(m)]
    yroots = np.roots(coeffs[::-1]) if m > 1 else np.array([])
    zroots = []
    for y in yroots:
        # z^2 - (2 - 4y) z + 1 = 0, keep the root inside the unit circle
        r = np.roots([1.0, -(2.0 - 4.0 * y), 1.0])
        zroots.append(r[np.argmin(np.abs(r))])
    poly = np.array([1.0])
    for _ in range(m):
        poly = np.convolve(poly, [1.0, 1.0])
    for z in zroots:
        poly = np.convolve(poly, [1.0, -z])
    h = np.real(poly)
    return h * (math.sqrt(2.0) / h.sum())


@dataclass(frozen=True)
class WaveletFamily:
    name: str
    lowpass: tuple
    vanishing_moments: int

    @property
    def support_length(self) -> int:
        return len(self.lowpass)

    @cached_property
    def h(self) -> np.ndarray:
        h = np.array(self.lowpass, dtype=np.float64)
        h.flags.writeable = False
        return h

    @cached_property
    def g(self) -> np.ndarray:
        # quadrature mirror: g[n] = (-1)^n h[L-1-n]
        signs = (-1.0) ** np.arange(len(self.lowpass))
        g = np.ascontiguousarray(signs * self.h[::-1])
        g.flags.writeable = False
        return g


@lru_cache(maxsize=None)
def get_family(name: str = "db2") -> WaveletFamily:
    """Look up a family by name: ``haar`` (= ``db1``), ``db2``, ``db3``, ... ``db10``."""
    key = name.lower()
    if key == "haar":
        m = 1
    elif key.startswith("db") and key[2:].isdigit() and 1 <= int(key[2:]) <= 10:
        m = int(key[2:])
    else:
        raise ValueError(f"unknown wavelet family {name!r}")
    if m == 1:
        taps = (1 / math.sqrt(2.0), 1 / math.sqrt(2.0))
    else:
        taps = tuple(float(t) for t in daubechies_lowpass(m))
    return WaveletFamily(key, taps, m)


def as_family(family) -> WaveletFamily:
    if isinstance(family, WaveletFamily):
        return family
    return get_family(family)


def transform_madds(shape, family, levels: int) -> int:
    """Multiply-adds of one multilevel analysis (synthesis costs the same).

    Each level filters the current approximation once per axis with both
    filters: ``L`` multiply-adds per input sample per axis.
    """
    taps = as_family(family).support_length
    total = 0
    cur = math.prod(shape)
    for _ in range(levels):
        total += len(shape) * taps * cur
        cur >>= len(shape)
    return total


def default_levels(n: int) -> int:
    """Depth leaving an 8-sample coarsest band (at least one level)."""
    return max(1, int(math.log2(n)) - 3)


class Band(NamedTuple):
    level: int
    orientation: str
    offset: int
    shape: tuple


class SubbandIndex(NamedTuple):
    level: int
    orientation: str
    position: tuple


def check_levels(shape, levels: int) -> None:
    if levels < 1:
        raise LevelError("levels must be >= 1")
    for n in shape:
        if n % (1 << levels):
            raise LevelError(f"2^{levels} does not divide dimension {n}")


@lru_cache(maxsize=64)
def band_layout(shape: tuple, levels: int) -> tuple:
    """Bands of the canonical flat ordering, as ``Band`` records."""
    shape = tuple(shape)
    check_levels(shape, levels)
    orients = ORIENTATIONS_2D if len(shape) == 2 else ORIENTATIONS_1D
    bands = []
    offset = 0
    for level in range(levels, 0, -1):
        bshape = tuple(n >> level for n in shape)
        size = math.prod(bshape)
        for o in orients:
            if o == "l" and level != levels:
                continue
            bands.append(Band(level, o, offset, bshape))
            offset += size
    return tuple(bands)


def _find_band(shape, levels, level, orientation) -> Band:
    for b in band_layout(tuple(shape), levels):
        if b.level == level and b.orientation == orientation:
            return b
    raise SubbandIndexError(f"no sub-band ({level}, {orientation!r}) for J = {levels}")


def flat_index(idx: SubbandIndex, shape, levels: int) -> int:
    band = _find_band(shape, levels, idx.level, idx.orientation)
    pos = tuple(idx.position)
    if len(pos) != len(band.shape) or any(not 0 <= p < n for p, n in zip(pos, band.shape)):
        raise SubbandIndexError(f"position {pos} outside sub-band of shape {band.shape}")
    return band.offset + int(np.ravel_multi_index(pos, band.shape))


def subband_index(flat: int, shape, levels: int) -> SubbandIndex:
    for b in band_layout(tuple(shape), levels):
        size = math.prod(b.shape)
        if b.offset <= flat < b.offset + size:
            pos = tuple(int(p) for p in np.unravel_index(flat - b.offset, b.shape))
            return SubbandIndex(b.level, b.orientation, pos)
    raise SubbandIndexError(f"flat index {flat} out of range")


def analysis(x, family, levels: int, ndim: int = 2) -> np.ndarray:
    """Forward transform over the trailing ``ndim`` axes; returns ``(..., dim)``."""
    fam = as_family(family)
    x = np.asarray(x, dtype=np.float64)
    shape = x.shape[x.ndim - ndim :]
    batch = x.shape[: x.ndim - ndim]
    check_levels(shape, levels)
    h, g = fam.h, fam.g
    dim = math.prod(shape)
    nbatch = math.prod(batch)
    out = np.empty((nbatch, dim))
    if ndim == 1:
        layout = {(b.level, b.orientation): b for b in band_layout(shape, levels)}

        def put(level, o, arr):
            b = layout[(level, o)]
            out[:, b.offset : b.offset + arr[0].size] = arr.reshape(nbatch, -1)

        cur = np.ascontiguousarray(x.reshape(nbatch, 1, shape[0]))
        for level in range(1, levels + 1):
            half = cur.shape[2] // 2
            a = np.empty((nbatch, 1, half))
            d = np.empty((nbatch, 1, half))
            _kernels.analyze_last(cur, h, g, a, d)
            put(level, "d", d)
            cur = a
        put(levels, "l", cur)
    else:
        _kernels.dwt2_forward(np.ascontiguousarray(x.reshape(nbatch, *shape)), h, g, levels, out)
    return out.reshape(*batch, dim)


def synthesis(c, family, levels: int, shape) -> np.ndarray:
    """Inverse of :func:`analysis`; ``c`` is ``(..., dim)``, result ``(..., *shape)``."""
    fam = as_family(family)
    shape = tuple(shape)
    c = np.asarray(c, dtype=np.float64)
    dim = math.prod(shape)
    if c.shape[-1] != dim:
        raise ShapeError(f"coefficient length {c.shape[-1]} does not match shape {shape}")
    check_levels(shape, levels)
    batch = c.shape[:-1]
    nbatch = math.prod(batch)
    c = c.reshape(nbatch, dim)
    h, g = fam.h, fam.g
    if len(shape) == 1:
        layout = {(b.level, b.orientation): b for b in band_layout(shape, levels)}

        def get(level, o, bshape):
            b = layout[(level, o)]
            size = math.prod(b.shape)
            return np.ascontiguousarray(c[:, b.offset : b.offset + size]).reshape(nbatch, *bshape)

        n = shape[0] >> levels
        cur = get(levels, "l", (1, n))
        for level in range(levels, 0, -1):
            d = get(level, "d", (1, n))
            x = np.zeros((nbatch, 1, 2 * n))
            _kernels.synthesize_last(cur, d, h, g, x)
            cur = x
            n *= 2
    else:
        cur = np.empty((nbatch, *shape))
        _kernels.dwt2_inverse(np.ascontiguousarray(c), h, g, levels, shape[0], shape[1], cur)
    return cur.reshape(*batch, *shape)


@dataclass
class WaveletCoeffs:
    """Coefficients of one signal, stored as the canonical flat vector."""

    levels: int
    shape: tuple
    vector: np.ndarray

    def __post_init__(self):
        self.shape = tuple(self.shape)
        if self.vector.shape != (math.prod(self.shape),):
            raise ShapeError("coefficient vector length must equal the pixel count")

    @property
    def layout(self):
        return band_layout(self.shape, self.levels)

    def band(self, level: int, orientation: str) -> np.ndarray:
        b = _find_band(self.shape, self.levels, level, orientation)
        return self.vector[b.offset : b.offset + math.prod(b.shape)].reshape(b.shape)

    @property
    def bands(self) -> dict:
        return {(b.level, b.orientation): self.band(b.level, b.orientation) for b in self.layout}


def forward(img, family="db2", levels: int | None = None) -> WaveletCoeffs:
    x = np.asarray(img, dtype=np.float64)
    if levels is None:
        levels = default_levels(min(x.shape))
    return WaveletCoeffs(levels, x.shape, analysis(x, family, levels, ndim=x.ndim))


def inverse(coeffs: WaveletCoeffs, family="db2") -> np.ndarray:
    return synthesis(coeffs.vector, family, coeffs.levels, coeffs.shape)


def synthesize_atom(idx: SubbandIndex, shape, family="db2", levels: int = 1) -> np.ndarray:
    """The basis function whose coefficient vector is the indicator of ``idx``."""
    shape = tuple(shape)
    e = np.zeros(math.prod(shape))
    e[flat_index(idx, shape, levels)] = 1.0
    return synthesis(e, family, levels, shape)


def support_box(idx: SubbandIndex, family="db2") -> tuple:
    """Per-axis ``(start, length)`` bound on an atom's support, before wrapping.

    The length ``(L - 1) 2^j + 1`` over-estimates the exact cascade support
    ``(L - 1)(2^j - 1) + 1`` so the box always contains the atom.
    """
    fam = as_family(family)
    if idx.level < 1:
        raise SubbandIndexError("level must be >= 1")
    length = (fam.support_length - 1) * (1 << idx.level) + 1
    return tuple(((1 << idx.level) * int(p), length) for p in idx.position)


def atom_support(idx: SubbandIndex, family="db2") -> tuple:
    """Exact per-axis ``(start, length)`` support of an atom, before wrapping.

    The filter cascade gives length ``(L - 1)(2^j - 1) + 1``.
    """
    fam = as_family(family)
    if idx.level < 1:
        raise SubbandIndexError("level must be >= 1")
    length = (fam.support_length - 1) * ((1 << idx.level) - 1) + 1
    return tuple(((1 << idx.level) * int(p), length) for p in idx.position)


def _interval_gap(a, b, period=None) -> int:
    (sa, la), (sb, lb) = a, b
    shifts = (0,) if period is None else (-period, 0, period)
    best = None
    for s in shifts:
        lo = sb + s
        gap = max(0, lo - (sa + la - 1), sa - (lo + lb - 1))
        best = gap if best is None else min(best, gap)
    return best


def box_distance(box_a, box_b, period=None) -> float:
    """Euclidean gap between two support boxes (0 when they touch or overlap).

    With ``period`` set, distances are measured on the torus.
    """
    gaps = [_interval_gap(a, b, period) for a, b in zip(box_a, box_b)]
    return math.sqrt(sum(g * g for g in gaps))
