"""Sparsity patterns for Theta from wavelet neighbourhood descriptions.

A neighbourhood file lists, one per line, which coefficients a wavelet is
coupled to::

    # <scale> <orientation> <dy> <dx>
    same all 0 0
    same all -1 0
    [band 2 l]          # entries below apply to sub-band (level 2, l) only
    2 l 0 1
    +1 h 0 0

``scale`` is an absolute level ``j``, ``same``, or a relative ``+1`` (one
level coarser) / ``-1`` (one level finer). ``orientation`` is one of
``l h v d all``. Offsets are in target sub-band coordinates and wrap
periodically. Entries before the first ``[band ...]`` header apply to every
sub-band that has no section of its own.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .blurop import KernelSpec
from .dwt import ORIENTATIONS_2D, band_layout
from .errors import GeometryError, IoError, ParseError
from .thetaop import SparseTheta, build_theta

SCENARIOS = {"scenario1": "scenario1.nbh", "scenario2": "scenario2.nbh", "n1": "n1.nbh"}


@dataclass(frozen=True)
class NeighborhoodEntry:
    relative: bool
    scale: int  # absolute level, or level offset when relative
    orientation: str
    dy: int
    dx: int

    def target_level(self, level: int) -> int:
        return level + self.scale if self.relative else self.scale


@dataclass
class NeighborhoodSpec:
    entries: tuple = ()
    bands: dict = field(default_factory=dict)

    def for_band(self, level: int, orientation: str) -> tuple:
        return self.bands.get((level, orientation), self.entries)

    def __len__(self):
        return len(self.entries) + sum(len(v) for v in self.bands.values())


def _parse_scale(tok: str, line: int, col: int):
    if tok == "same":
        return True, 0
    if tok in ("+1", "-1"):
        return True, int(tok)
    if tok.isdigit() and int(tok) >= 1:
        return False, int(tok)
    raise ParseError(f"bad scale selector {tok!r}", line, col)


def _parse_int(tok: str, line: int, col: int) -> int:
    try:
        return int(tok)
    except ValueError:
        raise ParseError(f"expected an integer offset, got {tok!r}", line, col) from None


def parse_neighborhood(text: str) -> NeighborhoodSpec:
    entries = []
    bands = {}
    current = entries
    for lineno, raw in enumerate(text.splitlines(), 1):
        body = raw.split("#", 1)[0]
        if not body.strip():
            continue
        stripped = body.strip()
        col0 = body.index(stripped[0]) + 1
        if stripped.startswith("["):
            if not stripped.endswith("]"):
                raise ParseError("unterminated section header", lineno, col0)
            parts = stripped[1:-1].split()
            if len(parts) != 3 or parts[0] != "band":
                raise ParseError("section header must read [band <level> <orientation>]", lineno, col0)
            if not parts[1].isdigit() or int(parts[1]) < 1:
                raise ParseError(f"bad band level {parts[1]!r}", lineno, col0)
            if parts[2] not in ORIENTATIONS_2D:
                raise ParseError(f"bad band orientation {parts[2]!r}", lineno, col0)
            key = (int(parts[1]), parts[2])
            if key in bands:
                raise ParseError(f"duplicate section for band {key}", lineno, col0)
            current = bands[key] = []
            continue
        toks = []
        pos = 0
        for tok in body.split():
            pos = body.index(tok, pos)
            toks.append((tok, pos + 1))
            pos += len(tok)
        if len(toks) != 4:
            raise ParseError(f"expected 4 fields, got {len(toks)}", lineno, col0)
        (s, cs), (o, co), (y, cy), (x, cx) = toks
        relative, scale = _parse_scale(s, lineno, cs)
        if o not in ORIENTATIONS_2D and o != "all":
            raise ParseError(f"unknown orientation {o!r}", lineno, co)
        current.append(NeighborhoodEntry(relative, scale, o, _parse_int(y, lineno, cy), _parse_int(x, lineno, cx)))
    if not entries and not bands:
        raise ParseError("empty neighbourhood description", None)
    return NeighborhoodSpec(tuple(entries), {k: tuple(v) for k, v in bands.items()})


def load_neighborhood(path_or_name) -> NeighborhoodSpec:
    """Read a neighbourhood file, or a shipped one by name (``scenario1``, ``scenario2``, ``n1``)."""
    name = str(path_or_name)
    if name in SCENARIOS:
        return parse_neighborhood(resources.files("wavblur").joinpath("data").joinpath(SCENARIOS[name]).read_text())
    try:
        return parse_neighborhood(Path(path_or_name).read_text())
    except OSError as exc:
        raise IoError(f"cannot read {path_or_name}: {exc}") from exc


@dataclass
class PatternMask:
    """Boolean sparsity pattern in the canonical coefficient ordering (CSR)."""

    matrix: sp.csr_matrix

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    @property
    def nnz(self) -> int:
        return self.matrix.nnz

    @property
    def indptr(self):
        return self.matrix.indptr

    @property
    def indices(self):
        return self.matrix.indices

    @property
    def density(self) -> float:
        """Stored entries per row, the ``k`` of a pattern."""
        return self.nnz / self.dim

    def is_symmetric(self) -> bool:
        return (self.matrix != self.matrix.T).nnz == 0

    def issubset(self, other: "PatternMask") -> bool:
        return (self.matrix > other.matrix).nnz == 0


def _mask_from_pairs(rows, cols, dim) -> PatternMask:
    diag = np.arange(dim)
    r = np.concatenate([rows, cols, diag])
    c = np.concatenate([cols, rows, diag])
    m = sp.csr_matrix((np.ones(len(r), dtype=bool), (r, c)), shape=(dim, dim))
    m.sum_duplicates()
    m.sort_indices()
    return PatternMask(m)


def generate_mask(spec: NeighborhoodSpec, shape, levels: int, family=None) -> PatternMask:
    """Support pattern coupling every atom to its declared neighbours.

    Positions map across scales by floor-halving (coarser) or doubling
    (finer) per level, then shift by ``(dy, dx)`` and wrap periodically.
    The mask always holds the diagonal and is symmetrized.
    """
    shape = tuple(shape)
    if len(shape) != 2:
        raise GeometryError("neighbourhood patterns are defined for 2D transforms")
    layout = band_layout(shape, levels)
    by_key = {(b.level, b.orientation): b for b in layout}
    for key in spec.bands:
        if key not in by_key:
            raise GeometryError(f"section [band {key[0]} {key[1]}] names a sub-band absent at J = {levels}")
    dim = math.prod(shape)
    rows, cols = [], []
    for src in layout:
        h, w = src.shape
        py, px = np.divmod(np.arange(h * w), w)
        src_flat = src.offset + py * w + px
        for e in spec.for_band(src.level, src.orientation):
            t = e.target_level(src.level)
            if not 1 <= t <= levels:
                if e.relative:
                    continue
                raise GeometryError(f"entry targets level {t}, outside 1..{levels}")
            if e.orientation == "all":
                targets = [b for b in layout if b.level == t]
            elif (t, e.orientation) in by_key:
                targets = [by_key[(t, e.orientation)]]
            elif e.relative:
                continue
            else:
                raise GeometryError(f"no sub-band ({t}, {e.orientation}) at J = {levels}")
            shift = t - src.level
            if shift >= 0:
                qy, qx = py >> shift, px >> shift
            else:
                qy, qx = py << -shift, px << -shift
            for tgt in targets:
                th, tw = tgt.shape
                if abs(e.dy) >= th or abs(e.dx) >= tw:
                    raise GeometryError(f"offset ({e.dy}, {e.dx}) exceeds sub-band extent {tgt.shape}")
                ty = (qy + e.dy) % th
                tx = (qx + e.dx) % tw
                rows.append(src_flat)
                cols.append(tgt.offset + ty * tw + tx)
    rows = np.concatenate(rows) if rows else np.zeros(0, dtype=np.int64)
    cols = np.concatenate(cols) if cols else np.zeros(0, dtype=np.int64)
    return _mask_from_pairs(rows, cols, dim)


def diagonal_mask(dim: int) -> PatternMask:
    return _mask_from_pairs(np.zeros(0, np.int64), np.zeros(0, np.int64), dim)


def build_theta_masked(spec: KernelSpec, mask: PatternMask, family="db2", levels: int | None = None, **kw) -> SparseTheta:
    """Theta restricted to ``mask``; values equal the matching full-Theta entries."""
    if mask.dim != spec.dim:
        raise GeometryError(f"mask dimension {mask.dim} does not match kernel dimension {spec.dim}")
    return build_theta(spec, family, levels, mask=mask.matrix, **kw)


def energy_capture(theta_full: SparseTheta, mask: PatternMask) -> float:
    """Fraction of the Frobenius energy of ``theta_full`` inside ``mask``."""
    full = theta_full.matrix
    inside = full.multiply(mask.matrix)
    total = float(full.data @ full.data)
    return float((inside.data @ inside.data) / total) if total else 1.0
