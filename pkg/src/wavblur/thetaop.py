"""The blur operator in the wavelet domain: Theta = W H W^T.

Theta is assembled column by column: column ``c`` is the forward transform
of H applied to the ``c``-th basis atom. Columns are processed in blocks
(optionally on a thread pool) and merged in index order, so builds are
bit-reproducible regardless of scheduling.
"""

from __future__ import annotations

import math
import struct
import zlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from . import _kernels
from .blurop import KernelSpec, blur_operator
from .dwt import (
    analysis,
    as_family,
    atom_support,
    check_levels,
    default_levels,
    subband_index,
    synthesis,
    transform_madds,
)
from .errors import (
    ChecksumError,
    DegenerateError,
    DimensionError,
    FormatError,
    IoError,
    MetaMismatch,
)
from .imagecore import gaussian_samples

FLOOR = 1e-14
MAGIC = b"WBTH"
VERSION = 1


@dataclass
class SparseTheta:
    """Theta (or a thresholded / masked variant) in CSR form.

    ``budget`` is ``"full"``, an integer k for ``T_k = k * dim`` thresholding,
    or a free-form tag such as ``"mask"``.
    """

    matrix: sp.csr_matrix
    family: str
    levels: int
    shape: tuple
    kernel_id: str = ""
    budget: object = "full"
    _arrays: tuple = field(default=None, init=False, repr=False)

    def __post_init__(self):
        self.shape = tuple(self.shape)
        m = self.matrix
        if m.shape != (self.dim, self.dim):
            raise DimensionError(f"matrix shape {m.shape} does not match signal shape {self.shape}")
        if not m.has_sorted_indices:
            m.sort_indices()

    @property
    def dim(self) -> int:
        return math.prod(self.shape)

    @property
    def nnz(self) -> int:
        return self.matrix.nnz

    @property
    def arrays(self):
        """(indptr, indices, data) as int64/int64/float64 for the compiled kernels."""
        if self._arrays is None:
            m = self.matrix
            self._arrays = (m.indptr.astype(np.int64), m.indices.astype(np.int64), m.data)
        return self._arrays

    def with_matrix(self, matrix, budget) -> "SparseTheta":
        return SparseTheta(matrix, self.family, self.levels, self.shape, self.kernel_id, budget)

    def toarray(self) -> np.ndarray:
        return self.matrix.toarray()


def identity_theta(shape, family="db2", levels=None) -> SparseTheta:
    shape = tuple(shape)
    levels = levels or default_levels(min(shape))
    dim = math.prod(shape)
    return SparseTheta(sp.identity(dim, format="csr"), as_family(family).name, levels, shape, "identity")


def _block_size(dim: int) -> int:
    return max(1, min(dim, (1 << 22) // dim))


def _theta_columns(op, fam, levels, shape, c0, c1):
    """Dense block ``Theta[:, c0:c1]`` returned transposed, shape ``(c1 - c0, dim)``."""
    dim = math.prod(shape)
    nb = c1 - c0
    e = np.zeros((nb, dim))
    e[np.arange(nb), np.arange(c0, c1)] = 1.0
    atoms = synthesis(e, fam, levels, shape).reshape(nb, dim)
    # atoms are compactly supported: a sparse product is far cheaper than H @ dense
    blurred = (sp.csr_matrix(atoms) @ op.matrix.T).toarray()
    return analysis(blurred.reshape(nb, *shape), fam, levels, ndim=len(shape))


def _select_top(rows, cols, vals, budget):
    """Top ``budget`` entries by |value|, ties to the smallest (row, col)."""
    if len(vals) <= budget:
        return rows, cols, vals
    order = np.lexsort((cols, rows, -np.abs(vals)))[:budget]
    return rows[order], cols[order], vals[order]


def build_theta(
    spec: KernelSpec,
    family="db2",
    levels: int | None = None,
    *,
    k: int | None = None,
    mask=None,
    floor: float = FLOOR,
    threads: int | None = None,
    block: int | None = None,
) -> SparseTheta:
    """Assemble Theta for ``spec``.

    ``k`` streams a ``T_k`` thresholding through the build so the full matrix
    is never held in memory. ``mask`` (a CSR boolean matrix) restricts which
    entries are kept. Entries with magnitude below ``floor`` are dropped.
    """
    fam = as_family(family)
    shape = spec.shape
    levels = levels or default_levels(spec.n)
    check_levels(shape, levels)
    dim = spec.dim
    op = blur_operator(spec)
    block = block or _block_size(dim)
    starts = list(range(0, dim, block))
    mask_csc = mask.tocsc() if mask is not None else None
    budget = None if k is None else int(k) * dim

    def work(c0):
        c1 = min(dim, c0 + block)
        cols_t = _theta_columns(op, fam, levels, shape, c0, c1)
        if mask_csc is not None:
            sub = mask_csc[:, c0:c1]
            r_idx = sub.indices
            c_loc = np.repeat(np.arange(c1 - c0), np.diff(sub.indptr))
            v = cols_t[c_loc, r_idx]
        else:
            c_loc, r_idx = np.nonzero(np.abs(cols_t) >= floor) if floor > 0 else np.nonzero(cols_t)
            v = cols_t[c_loc, r_idx]
        if mask_csc is not None:
            keep = np.abs(v) >= floor if floor > 0 else v != 0
            c_loc, r_idx, v = c_loc[keep], r_idx[keep], v[keep]
        return r_idx.astype(np.int64), (c_loc + c0).astype(np.int64), v

    if threads and threads > 1:
        pool = ThreadPoolExecutor(threads)
        results = pool.map(work, starts)
    else:
        pool = None
        results = map(work, starts)
    try:
        parts_r, parts_c, parts_v = [], [], []
        for r, c, v in results:
            if budget is not None:
                r0 = np.concatenate([*parts_r, r])
                c0_ = np.concatenate([*parts_c, c])
                v0 = np.concatenate([*parts_v, v])
                r0, c0_, v0 = _select_top(r0, c0_, v0, budget)
                parts_r, parts_c, parts_v = [r0], [c0_], [v0]
            else:
                parts_r.append(r)
                parts_c.append(c)
                parts_v.append(v)
    finally:
        if pool is not None:
            pool.shutdown()
    rows = np.concatenate(parts_r) if parts_r else np.zeros(0, np.int64)
    cols = np.concatenate(parts_c) if parts_c else np.zeros(0, np.int64)
    vals = np.concatenate(parts_v) if parts_v else np.zeros(0)
    m = sp.csr_matrix((vals, (rows, cols)), shape=(dim, dim))
    m.sort_indices()
    if mask is not None:
        tag = "mask"
    else:
        tag = "full" if budget is None else int(k)
    theta = SparseTheta(m, fam.name, levels, shape, spec.kernel_id, tag)
    if budget is not None:
        # same selection rule as threshold_theta, applied once more on CSR order
        theta = threshold_theta(theta, k)
    return theta


def threshold_theta(theta: SparseTheta, k) -> SparseTheta:
    """Keep the ``T_k = k * dim`` largest-magnitude entries.

    Ties at the cutoff magnitude are resolved in (row, col) order, which is the
    CSR storage order, so the result is bit-reproducible.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    budget = int(k * theta.dim)
    m = theta.matrix
    if m.nnz <= budget:
        return theta
    mags = np.abs(m.data)
    cutoff = np.partition(mags, m.nnz - budget)[m.nnz - budget]
    keep = mags > cutoff
    need = budget - int(keep.sum())
    if need > 0:
        keep[np.flatnonzero(mags == cutoff)[:need]] = True
    out = m.copy()
    out.data = np.where(keep, m.data, 0.0)
    out.eliminate_zeros()
    return theta.with_matrix(out, k)


def threshold_many(theta: SparseTheta, ks) -> dict:
    """``{k: Theta_{T_k}}`` from one sort of the magnitudes."""
    m = theta.matrix
    mags = np.abs(m.data)
    order = np.lexsort((np.arange(m.nnz), -mags))
    out = {}
    for k in ks:
        budget = int(k * theta.dim)
        if m.nnz <= budget:
            out[k] = theta if theta.budget == "full" else theta.with_matrix(m.copy(), k)
            continue
        keep = np.zeros(m.nnz, dtype=bool)
        keep[order[:budget]] = True
        t = m.copy()
        t.data = np.where(keep, m.data, 0.0)
        t.eliminate_zeros()
        out[k] = theta.with_matrix(t, k)
    return out


def _check_meta(theta: SparseTheta, img, family, levels):
    if family is not None and as_family(family).name != theta.family:
        raise MetaMismatch(f"theta built with {theta.family}, asked to apply with {family}")
    if levels is not None and levels != theta.levels:
        raise MetaMismatch(f"theta built with {theta.levels} levels, asked for {levels}")
    a = np.asarray(img, dtype=np.float64)
    if a.shape != theta.shape:
        raise DimensionError(f"image shape {a.shape} does not match theta shape {theta.shape}")
    return a


def _apply(theta: SparseTheta, img, family, levels, transpose: bool) -> np.ndarray:
    a = _check_meta(theta, img, family, levels)
    if a.ndim == 2:
        fam = as_family(theta.family)
        out = np.empty(theta.shape)
        _kernels.theta_apply2d(np.ascontiguousarray(a), fam.h, fam.g, theta.levels, *theta.arrays, transpose, out)
        return out
    c = analysis(a, theta.family, theta.levels, ndim=a.ndim)
    out = np.empty_like(c)
    (_kernels.csr_rmatvec if transpose else _kernels.csr_matvec)(*theta.arrays, c, out)
    return synthesis(out, theta.family, theta.levels, theta.shape)


def apply_madds(theta: SparseTheta) -> int:
    """Multiply-adds of one :func:`apply_theta`: nnz plus two transforms."""
    return theta.nnz + 2 * transform_madds(theta.shape, theta.family, theta.levels)


def apply_theta(theta: SparseTheta, img, family=None, levels=None) -> np.ndarray:
    """W^T Theta W img: two transforms and one sparse product."""
    return _apply(theta, img, family, levels, False)


def apply_theta_adjoint(theta: SparseTheta, img, family=None, levels=None) -> np.ndarray:
    return _apply(theta, img, family, levels, True)


def _unit_random(shape, seed):
    u = gaussian_samples(math.prod(shape), seed).reshape(shape)
    return u / np.linalg.norm(u)


def operator_error(theta: SparseTheta, spec: KernelSpec, trials: int = 10, seed: int = 0) -> float:
    """Max over random unit-norm inputs of ||Hu - H~u|| / ||Hu||."""
    if trials < 1:
        raise ValueError("trials must be >= 1")
    op = blur_operator(spec)
    worst = 0.0
    for t in range(trials):
        u = _unit_random(spec.shape, seed + t)
        hu = op.apply(u)
        err = np.linalg.norm(hu - apply_theta(theta, u)) / np.linalg.norm(hu)
        worst = max(worst, float(err))
    return worst


def operator_norm_error(theta: SparseTheta, spec: KernelSpec, iters: int = 20, seed: int = 0) -> float:
    """Power-iteration estimate of ||H - W^T Theta W|| (spectral norm)."""
    op = blur_operator(spec)
    u = _unit_random(spec.shape, seed)
    est = 0.0
    for _ in range(iters):
        r = op.apply(u) - apply_theta(theta, u)
        w = op.adjoint(r) - apply_theta_adjoint(theta, r)
        nw = np.linalg.norm(w)
        if nw == 0:
            return 0.0
        est = math.sqrt(nw)
        u = w / nw
    return est


@dataclass
class DecayReport:
    """Coefficients of a 1D Theta against the Calderon-Zygmund decay bound."""

    rows: np.ndarray
    cols: np.ndarray
    levels_row: np.ndarray
    levels_col: np.ndarray
    abs_theta: np.ndarray
    dist: np.ndarray
    structural: np.ndarray  # bound / C_M
    min_length: np.ndarray  # min(|I|, |I'|) per pair
    same_scale: np.ndarray
    vanishing_moments: int
    c_m: float
    slope: float
    intercept: float
    zero_checked: int
    zero_violations: int

    @property
    def scaled_dist(self) -> np.ndarray:
        return self.dist / self.min_length

    @property
    def bound(self) -> np.ndarray:
        return self.c_m * self.structural

    @property
    def ratio(self) -> np.ndarray:
        return self.abs_theta / self.bound

    @property
    def max_ratio(self) -> float:
        r = self.ratio
        return float(r.max()) if r.size else 0.0

    @property
    def violations(self) -> int:
        return int(np.count_nonzero(self.ratio > 1 + 1e-12))

    @property
    def slope_threshold(self) -> float:
        return -(self.vanishing_moments + 1) + 0.5

    @property
    def passed(self) -> bool:
        return self.slope <= self.slope_threshold and self.zero_violations == 0

    def to_csv(self) -> str:
        lines = ["row,col,level_row,level_col,dist,abs_theta,bound,same_scale"]
        b = self.bound
        for i in range(len(self.rows)):
            lines.append(
                f"{self.rows[i]},{self.cols[i]},{self.levels_row[i]},{self.levels_col[i]},"
                f"{self.dist[i]:g},{self.abs_theta[i]:.6e},{b[i]:.6e},{int(self.same_scale[i])}"
            )
        return "\n".join(lines) + "\n"


def _periodic_gap(sa, la, sb, lb, period):
    """Vectorized gap between closed intervals [s, s + l - 1] on a circle."""
    best = None
    for shift in (-period, 0, period):
        lo = sb + shift
        gap = np.maximum(0, np.maximum(lo - (sa + la - 1), sa - (lo + lb - 1)))
        best = gap if best is None else np.minimum(best, gap)
    return best.astype(np.float64)


def verify_decay_1d(spec: KernelSpec, family="haar", levels: int | None = None) -> DecayReport:
    """Fit the decay of |theta| with support distance on a 1D blur.

    The structural bound factor is ``min(|I|/|I'|, |I'|/|I|)^(1/2) *
    (min(|I|, |I'|) / dist)^(M+1)``, with exact atom supports and periodic
    distances. C_M is the smallest constant making the bound hold on every
    pair. The decay exponent is the log-log slope of the
    largest |theta| at each (level, distance) against ``dist / |I|``.
    Same-scale pairs further apart than the kernel reach must be exactly
    zero.
    """
    if spec.ndim != 1:
        raise DimensionError("verify_decay_1d needs a 1D kernel")
    fam = as_family(family)
    n = spec.n
    levels = levels or default_levels(n)
    theta = build_theta(spec, fam, levels, floor=0.0).toarray()
    shape = (n,)
    idx = [subband_index(i, shape, levels) for i in range(n)]
    boxes = [atom_support(s, fam)[0] for s in idx]
    lev = np.array([s.level for s in idx])
    length = np.array([b[1] for b in boxes], dtype=np.float64)

    start = np.array([b[0] for b in boxes])
    r, c = np.divmod(np.arange(n * n), n)
    off = r != c
    r, c = r[off], c[off]
    dist = _periodic_gap(start[r], length[r], start[c], length[c], n)
    same = lev[r] == lev[c]

    # exact zeros beyond the kernel reach (truncated PSF support)
    reach = math.floor(spec.truncation * max(spec.sigma_min, spec.sigma_max))
    far = same & (dist > reach)
    zero_violations = int(np.count_nonzero(theta[r[far], c[far]]))

    vals = np.abs(theta[r, c])
    sel = (dist > 0) & (vals > 0)
    r, c, dist, same, vals = r[sel], c[sel], dist[sel], same[sel], vals[sel]
    if not np.any(same):
        raise DegenerateError("no same-scale pair with disjoint supports and nonzero coefficient")
    lr, lc = length[r], length[c]
    small = np.minimum(lr, lc)
    m = fam.vanishing_moments
    structural = np.sqrt(np.minimum(lr / lc, lc / lr)) * (small / dist) ** (m + 1)
    c_m = float(np.max(vals / structural))
    # The bound caps the worst coefficient at each separation, so fit the
    # per-(level, distance) maximum. Per-level intercepts: coarse atoms barely
    # feel a fixed-width PSF, and pooling levels would confound scale with
    # distance.
    ls, ds, ss, vs = lev[r][same], dist[same], small[same], vals[same]
    env_x, env_y, env_l = [], [], []
    for level in np.unique(ls):
        at_level = ls == level
        for d in np.unique(ds[at_level]):
            sel = at_level & (ds == d)
            env_x.append(math.log(d / ss[sel][0]))
            env_y.append(math.log(vs[sel].max()))
            env_l.append(level)
    x, y, lv = np.array(env_x), np.array(env_y), np.array(env_l)
    xc, yc = x.copy(), y.copy()
    for level in np.unique(lv):
        at_level = lv == level
        xc[at_level] -= x[at_level].mean()
        yc[at_level] -= y[at_level].mean()
    sxx = float(xc @ xc)
    if sxx == 0:
        raise DegenerateError("same-scale pairs do not span more than one distance per level")
    slope = float(xc @ yc) / sxx
    intercept = float(np.mean(y - slope * x))
    return DecayReport(
        rows=r,
        cols=c,
        levels_row=lev[r],
        levels_col=lev[c],
        abs_theta=vals,
        dist=dist,
        structural=structural,
        min_length=small,
        same_scale=same,
        vanishing_moments=m,
        c_m=c_m,
        slope=float(slope),
        intercept=float(intercept),
        zero_checked=int(far.sum()),
        zero_violations=zero_violations,
    )


# -- file format ---------------------------------------------------------


def _label(theta: SparseTheta) -> str:
    shape = "x".join(str(s) for s in theta.shape)
    return f"kernel={theta.kernel_id};budget={theta.budget};shape={shape}"


def _parse_label(label: str) -> dict:
    out = {}
    for part in label.split(";"):
        if "=" not in part:
            raise FormatError(f"malformed theta label {label!r}")
        key, value = part.split("=", 1)
        out[key] = value
    return out


def theta_to_bytes(theta: SparseTheta) -> bytes:
    fam = theta.family.encode()
    label = _label(theta).encode()
    m = theta.matrix
    parts = [
        MAGIC,
        struct.pack("<IQQI", VERSION, theta.dim, m.nnz, theta.levels),
        struct.pack("<I", len(fam)),
        fam,
        struct.pack("<I", len(label)),
        label,
        m.indptr.astype("<u8").tobytes(),
        m.indices.astype("<u8").tobytes(),
        m.data.astype("<f8").tobytes(),
    ]
    body = b"".join(parts)
    return body + struct.pack("<I", zlib.crc32(body))


def theta_from_bytes(raw: bytes) -> SparseTheta:
    def need(pos, n):
        if pos + n > len(raw):
            raise FormatError("truncated theta file")

    need(0, 4 + 24)
    if raw[:4] != MAGIC:
        raise FormatError("bad magic, not a WBTH theta file")
    version, dim, nnz, levels = struct.unpack_from("<IQQI", raw, 4)
    if version != VERSION:
        raise FormatError(f"unsupported theta file version {version}")
    pos = 28
    need(pos, 4)
    (lf,) = struct.unpack_from("<I", raw, pos)
    pos += 4
    need(pos, lf)
    family = raw[pos : pos + lf].decode()
    pos += lf
    need(pos, 4)
    (ll,) = struct.unpack_from("<I", raw, pos)
    pos += 4
    need(pos, ll)
    label = _parse_label(raw[pos : pos + ll].decode())
    pos += ll
    sizes = (8 * (dim + 1), 8 * nnz, 8 * nnz)
    need(pos, sum(sizes) + 4)
    if len(raw) != pos + sum(sizes) + 4:
        raise FormatError("theta file has trailing or missing bytes")
    (crc,) = struct.unpack_from("<I", raw, len(raw) - 4)
    if zlib.crc32(raw[:-4]) != crc:
        raise ChecksumError("theta file checksum mismatch")
    indptr = np.frombuffer(raw, "<u8", dim + 1, pos).astype(np.int64)
    pos += sizes[0]
    indices = np.frombuffer(raw, "<u8", nnz, pos).astype(np.int64)
    pos += sizes[1]
    data = np.frombuffer(raw, "<f8", nnz, pos).astype(np.float64)
    if indptr[0] != 0 or indptr[-1] != nnz or np.any(np.diff(indptr) < 0):
        raise FormatError("invalid row offsets")
    if nnz and (indices.max() >= dim):
        raise FormatError("column index out of range")
    rowstart = np.zeros(nnz, dtype=bool)
    rowstart[indptr[:-1][np.diff(indptr) > 0]] = True
    if nnz > 1 and np.any((np.diff(indices) <= 0) & ~rowstart[1:]):
        raise FormatError("column indices not strictly increasing within a row")
    try:
        shape = tuple(int(s) for s in label["shape"].split("x"))
    except (KeyError, ValueError) as exc:
        raise FormatError("theta label lacks a valid shape") from exc
    if math.prod(shape) != dim:
        raise FormatError("theta label shape inconsistent with dim")
    budget = label.get("budget", "full")
    if budget.isdigit():
        budget = int(budget)
    m = sp.csr_matrix((data, indices, indptr), shape=(dim, dim))
    m.has_sorted_indices = True
    return SparseTheta(m, family, levels, shape, label.get("kernel", ""), budget)


def save_theta(theta: SparseTheta, path) -> None:
    try:
        Path(path).write_bytes(theta_to_bytes(theta))
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc


def load_theta(path) -> SparseTheta:
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from exc
    return theta_from_bytes(raw)
