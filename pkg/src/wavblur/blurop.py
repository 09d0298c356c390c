"""Spatially varying kernels K(x, y) and the exact blur operator they define.

The default kernel is a Gaussian PSF whose variance grows linearly with the
row index. PSFs are truncated at ``truncation`` local standard deviations and
at the image border, then renormalized so that every row of H has unit mass.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from . import _kernels
from .errors import DimensionError, DomainError, FormatError
from .imagecore import is_pow2
from .kvfile import format_kv, read_kv

KINDS = ("gaussian_vertical_variance", "gaussian_constant", "custom_tabulated")


@dataclass(frozen=True)
class KernelSpec:
    kind: str = "gaussian_vertical_variance"
    n: int = 64
    sigma_min: float = 0.8
    sigma_max: float = 3.0
    truncation: float = 4.0
    ndim: int = 2
    # custom_tabulated only: (gy, gx, p, p) PSF grid in 2D, (g, p) in 1D
    table: np.ndarray | None = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise FormatError(f"unknown kernel kind {self.kind!r}")
        if self.ndim not in (1, 2):
            raise DimensionError("kernel ndim must be 1 or 2")
        if not is_pow2(self.n):
            raise DimensionError(f"kernel size {self.n} is not a power of two")
        if self.truncation < 3:
            raise ValueError("truncation radius must be >= 3 sigmas")
        if self.kind == "gaussian_constant":
            # sigma = 0 is the analytic delta kernel (H = identity)
            if self.sigma_min < 0 or self.sigma_max != self.sigma_min:
                raise ValueError("gaussian_constant needs sigma_min == sigma_max >= 0")
        elif self.kind == "gaussian_vertical_variance":
            if not 0 < self.sigma_min <= self.sigma_max:
                raise ValueError("need 0 < sigma_min <= sigma_max")
        else:
            t = self.table
            if t is None or t.ndim != 2 * self.ndim or any(s % 2 == 0 for s in t.shape[self.ndim :]):
                raise FormatError("custom_tabulated needs a PSF grid with odd-sized PSFs")

    @property
    def shape(self) -> tuple:
        return (self.n,) * self.ndim

    @property
    def dim(self) -> int:
        return self.n**self.ndim

    @property
    def kernel_id(self) -> str:
        base = f"{self.kind}:n={self.n}:d={self.ndim}"
        if self.kind == "custom_tabulated":
            digest = hashlib.sha1(np.ascontiguousarray(self.table, dtype=np.float64).tobytes()).hexdigest()
            return f"{base}:table={digest[:12]}"
        return f"{base}:smin={self.sigma_min:g}:smax={self.sigma_max:g}:trunc={self.truncation:g}"

    def sigma_at(self, row: float) -> float:
        """PSF standard deviation at vertical coordinate ``row``."""
        if self.kind == "gaussian_constant":
            return self.sigma_min
        t = row / (self.n - 1)
        return math.sqrt(self.sigma_min**2 + (self.sigma_max**2 - self.sigma_min**2) * t)

    def with_n(self, n: int) -> "KernelSpec":
        return KernelSpec(self.kind, n, self.sigma_min, self.sigma_max, self.truncation, self.ndim, self.table)


def load_kernel_spec(path) -> KernelSpec:
    kv = read_kv(path)
    known = {"kind", "n", "sigma_min", "sigma_max", "truncation", "ndim", "table"}
    extra = set(kv) - known
    if extra:
        raise FormatError(f"unknown kernel keys: {sorted(extra)}")
    try:
        kind = kv.get("kind", "gaussian_vertical_variance")
        table = None
        if "table" in kv:
            tpath = Path(kv["table"])
            if not tpath.is_absolute():
                tpath = Path(path).parent / tpath
            table = np.load(tpath)
        smin = float(kv.get("sigma_min", 0.8))
        return KernelSpec(
            kind=kind,
            n=int(kv.get("n", 64)),
            sigma_min=smin,
            sigma_max=float(kv.get("sigma_max", smin if kind == "gaussian_constant" else 3.0)),
            truncation=float(kv.get("truncation", 4.0)),
            ndim=int(kv.get("ndim", 2)),
            table=table,
        )
    except (ValueError, OSError) as exc:
        if isinstance(exc, FormatError):
            raise
        raise FormatError(f"bad kernel spec {path}: {exc}") from exc


def save_kernel_spec(spec: KernelSpec, path) -> None:
    if spec.kind == "custom_tabulated":
        raise FormatError("tabulated kernels are saved with their .npy table by hand")
    pairs = {
        "kind": spec.kind,
        "n": spec.n,
        "ndim": spec.ndim,
        "sigma_min": repr(spec.sigma_min),
        "sigma_max": repr(spec.sigma_max),
        "truncation": repr(spec.truncation),
    }
    Path(path).write_text(format_kv(pairs))


def _window(sigma: float, truncation: float, ndim: int):
    """Integer offsets within the truncation radius and their Gaussian weights."""
    radius = truncation * sigma
    k = int(math.floor(radius))
    if ndim == 1:
        off = np.arange(-k, k + 1)[:, None]
    else:
        dy, dx = np.mgrid[-k : k + 1, -k : k + 1]
        off = np.stack([dy.ravel(), dx.ravel()], axis=1)
    d2 = (off**2).sum(axis=1).astype(np.float64)
    keep = d2 <= radius * radius
    return off[keep], np.exp(-d2[keep] / (2.0 * sigma * sigma))


def _tabulated_psf(spec: KernelSpec, x: tuple):
    t = spec.table
    grid = t.shape[: spec.ndim]
    cell = tuple(min(g - 1, int(xi * g // spec.n)) for xi, g in zip(x, grid))
    psf = t[cell]
    half = [p // 2 for p in psf.shape]
    offs = np.stack(np.meshgrid(*[np.arange(-h, h + 1) for h in half], indexing="ij"), -1)
    return offs.reshape(-1, spec.ndim), psf.ravel().astype(np.float64)


def _check_coord(spec: KernelSpec, c) -> tuple:
    c = tuple(int(v) for v in np.atleast_1d(c))
    if len(c) != spec.ndim or any(not 0 <= v < spec.n for v in c):
        raise DomainError(f"coordinate {c} outside the {spec.shape} domain")
    return c


def kernel_eval(spec: KernelSpec, x, y) -> float:
    """K(x, y): weight of input pixel ``y`` in output pixel ``x``."""
    x = _check_coord(spec, x)
    y = _check_coord(spec, y)
    if spec.kind == "custom_tabulated":
        offs, w = _tabulated_psf(spec, x)
    else:
        sigma = spec.sigma_at(x[0])
        if sigma == 0:
            return 1.0 if x == y else 0.0
        offs, w = _window(sigma, spec.truncation, spec.ndim)
    tgt = offs + np.array(x)
    inside = np.all((tgt >= 0) & (tgt < spec.n), axis=1)
    z = w[inside].sum()
    hit = np.all(tgt == np.array(y), axis=1) & inside
    return float(w[hit].sum() / z) if hit.any() else 0.0


def _operator_rows(spec: KernelSpec):
    """COO triplets of H."""
    if spec.kind == "custom_tabulated":
        return _operator_rows_tabulated(spec)
    n = spec.n
    rows, cols, vals = [], [], []
    if spec.ndim == 1:
        for i in range(n):
            _append_pixel(spec, (i,), spec.sigma_at(i), rows, cols, vals)
        return np.concatenate(rows), np.concatenate(cols), np.concatenate(vals)
    # 2D: sigma only depends on the row, so one window serves a whole image row
    for r in range(n):
        sigma = spec.sigma_at(r)
        if sigma == 0:
            idx = r * n + np.arange(n)
            rows.append(idx)
            cols.append(idx)
            vals.append(np.ones(n))
            continue
        offs, w = _window(sigma, spec.truncation, 2)
        ty = r + offs[:, 0]
        tx = np.arange(n)[:, None] + offs[None, :, 1]
        valid = ((ty >= 0) & (ty < n))[None, :] & (tx >= 0) & (tx < n)
        wv = np.where(valid, w[None, :], 0.0)
        # same summation as kernel_eval so both routes agree to the last bit
        z = np.array([w[v].sum() for v in valid])
        wv /= z[:, None]
        xi, oi = np.nonzero(valid)
        rows.append(r * n + xi)
        cols.append(ty[oi] * n + tx[xi, oi])
        vals.append(wv[xi, oi])
    return np.concatenate(rows), np.concatenate(cols), np.concatenate(vals)


def _append_pixel(spec, x, sigma, rows, cols, vals):
    if sigma == 0:
        offs, w = np.zeros((1, spec.ndim), dtype=int), np.ones(1)
    else:
        offs, w = _window(sigma, spec.truncation, spec.ndim)
    tgt = offs + np.array(x)
    inside = np.all((tgt >= 0) & (tgt < spec.n), axis=1)
    w = w[inside] / w[inside].sum()
    flat = np.ravel_multi_index(tuple(tgt[inside].T), spec.shape)
    rows.append(np.full(len(flat), np.ravel_multi_index(x, spec.shape)))
    cols.append(flat)
    vals.append(w)


def _operator_rows_tabulated(spec):
    rows, cols, vals = [], [], []
    for x in np.ndindex(*spec.shape):
        offs, w = _tabulated_psf(spec, x)
        tgt = offs + np.array(x)
        inside = np.all((tgt >= 0) & (tgt < spec.n), axis=1)
        w = w[inside] / w[inside].sum()
        rows.append(np.full(int(inside.sum()), np.ravel_multi_index(x, spec.shape)))
        cols.append(np.ravel_multi_index(tuple(tgt[inside].T), spec.shape))
        vals.append(w)
    return np.concatenate(rows), np.concatenate(cols), np.concatenate(vals)


class BlurOperator:
    """H stored row-compressed, restricted to the truncated PSF supports."""

    def __init__(self, spec: KernelSpec):
        self.spec = spec
        r, c, v = _operator_rows(spec)
        m = sp.csr_matrix((v, (r, c)), shape=(spec.dim, spec.dim))
        m.sum_duplicates()
        m.sort_indices()
        self.matrix = m
        self._indptr = m.indptr.astype(np.int64)
        self._indices = m.indices.astype(np.int64)
        self._data = m.data

    @property
    def nnz(self) -> int:
        return self.matrix.nnz

    def _check(self, img):
        a = np.asarray(img, dtype=np.float64)
        if a.shape != self.spec.shape:
            raise DimensionError(f"image shape {a.shape} does not match kernel shape {self.spec.shape}")
        return np.ascontiguousarray(a).ravel()

    def apply(self, img) -> np.ndarray:
        x = self._check(img)
        out = np.empty_like(x)
        _kernels.csr_matvec(self._indptr, self._indices, self._data, x, out)
        return out.reshape(self.spec.shape)

    def adjoint(self, img) -> np.ndarray:
        x = self._check(img)
        out = np.empty_like(x)
        _kernels.csr_rmatvec(self._indptr, self._indices, self._data, x, out)
        return out.reshape(self.spec.shape)

    def dense(self) -> np.ndarray:
        return self.matrix.toarray()


_OPERATORS: dict = {}


def blur_operator(spec: KernelSpec) -> BlurOperator:
    """Cached :class:`BlurOperator` for ``spec``."""
    key = spec.kernel_id
    op = _OPERATORS.get(key)
    if op is None:
        if len(_OPERATORS) > 8:
            _OPERATORS.clear()
        op = _OPERATORS[key] = BlurOperator(spec)
    return op


def apply_exact(spec: KernelSpec, img) -> np.ndarray:
    return blur_operator(spec).apply(img)


def apply_exact_adjoint(spec: KernelSpec, img) -> np.ndarray:
    return blur_operator(spec).adjoint(img)
